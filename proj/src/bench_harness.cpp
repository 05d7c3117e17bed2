#include "groundfuse/bench_harness.hpp"

#include <cstdio>
#include <exception>
#include <optional>
#include <set>

#include "groundfuse/io.hpp"
#include "groundfuse/serial.hpp"

namespace groundfuse {

namespace {

using json = nlohmann::json;

void check_counts(std::size_t items, std::size_t predictions) {
  if (items != predictions) {
    throw InvalidInput("expected one prediction per item: " + std::to_string(items) + " items, " +
                       std::to_string(predictions) + " predictions");
  }
}

EvalReport aggregate(std::span<const BenchmarkItem> items, std::span<const PixelPoint> predictions,
                     const std::vector<char>& hits) {
  EvalReport r;
  r.items.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const bool hit = hits[i] != 0;
    r.items.push_back({items[i].id, predictions[i], hit});
    auto& cat = r.categories[items[i].category];
    ++cat.count;
    ++r.overall.count;
    if (hit) {
      ++cat.hits;
      ++r.overall.hits;
    }
  }
  auto finish = [](CategoryStats& s) {
    s.accuracy = s.count == 0 ? 0.0 : static_cast<double>(s.hits) / static_cast<double>(s.count);
  };
  finish(r.overall);
  for (auto& [name, s] : r.categories) finish(s);
  return r;
}

// Runs f(i) for every index, in parallel, rethrowing the first failure.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  std::exception_ptr failure;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic) if (n > 1)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      f(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(groundfuse_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

json stats_to_json(const CategoryStats& s) {
  return {{"count", s.count}, {"hits", s.hits}, {"accuracy", s.accuracy}};
}

PixelPoint map_point(const Heatmap& h) { return cell_center_px(h.grid(), argmax_cell(h)); }

}  // namespace

EvalReport evaluate(std::span<const BenchmarkItem> items, std::span<const PixelPoint> predictions) {
  check_counts(items.size(), predictions.size());
  std::vector<char> hits(items.size(), 0);
  const auto n = static_cast<std::ptrdiff_t>(items.size());
#pragma omp parallel for if (n > 256)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    hits[static_cast<std::size_t>(i)] = contains(items[static_cast<std::size_t>(i)].bbox, predictions[static_cast<std::size_t>(i)]) ? 1 : 0;
  }
  return aggregate(items, predictions, hits);
}

EvalReport serial::evaluate(std::span<const BenchmarkItem> items, std::span<const PixelPoint> predictions) {
  check_counts(items.size(), predictions.size());
  std::vector<char> hits(items.size(), 0);
  for (std::size_t i = 0; i < items.size(); ++i) hits[i] = contains(items[i].bbox, predictions[i]) ? 1 : 0;
  return aggregate(items, predictions, hits);
}

SceneParams item_params(const BenchmarkParams& p, std::size_t index) {
  SceneParams s = p.scene;
  s.seed = split_seed(p.seed, index);
  if (p.alternate_kinds) s.target_kind = index % 2 == 0 ? ElementKind::text : ElementKind::icon;
  return s;
}

std::string item_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "item-%04zu", index);
  return buf;
}

BenchmarkItem make_item(const Scene& scene, std::size_t index) {
  BenchmarkItem it;
  it.id = item_id(index);
  it.grid = scene.full_grid();
  it.bbox = scene.target().box;
  it.category = scene.target().kind == ElementKind::text ? "text" : "icon";
  it.bundle = "items/" + it.id + "/manifest.json";
  it.seed = scene.params().seed;
  return it;
}

std::vector<Scene> generate_scenes(const BenchmarkParams& p) {
  std::vector<std::optional<Scene>> slots(p.count);
  parallel_for(p.count, [&](std::size_t i) { slots[i].emplace(item_params(p, i)); });
  std::vector<Scene> out;
  out.reserve(p.count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::filesystem::path write_benchmark(const BenchmarkParams& p, const std::filesystem::path& dir) {
  const auto scenes = generate_scenes(p);
  std::vector<BenchmarkItem> items;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    items.push_back(make_item(scenes[i], i));
    write_scene_bundle(scenes[i], dir / "items" / items.back().id);
  }
  const json generator = {{"params", scene_params_to_json(p.scene)},
                          {"count", p.count},
                          {"seed", p.seed},
                          {"alternate_kinds", p.alternate_kinds}};
  const auto path = dir / "benchmark.json";
  io::atomic_write(path, io::dump_json(benchmark_to_json(items, generator)));
  return path;
}

BenchmarkParams benchmark_params_from_json(const json& doc, std::uint64_t seed) {
  if (!doc.is_object()) throw ValidationError("params_type", "params must be a JSON object");
  BenchmarkParams p;
  p.seed = seed;
  json scene = doc;
  if (doc.contains("preset")) {
    const json& v = doc["preset"];
    if (v == "standard") p.scene = SceneParams::standard();
    else if (v == "small-target") p.scene = SceneParams::small_target();
    else throw ValidationError("params_type", "preset must be \"standard\" or \"small-target\"");
    scene.erase("preset");
  }
  if (doc.contains("count")) {
    if (!doc["count"].is_number_integer() || doc["count"].get<long long>() < 1) {
      throw ValidationError("params_type", "count must be a positive integer");
    }
    p.count = doc["count"].get<std::size_t>();
    scene.erase("count");
  }
  if (doc.contains("alternate_kinds")) {
    if (!doc["alternate_kinds"].is_boolean()) throw ValidationError("params_type", "alternate_kinds must be a boolean");
    p.alternate_kinds = doc["alternate_kinds"].get<bool>();
    scene.erase("alternate_kinds");
  }
  p.scene = scene_params_from_json(scene, p.scene);
  return p;
}

BenchmarkParams generator_from_json(const json& g) {
  if (!g.is_object() || !g.contains("params") || !g.contains("count") || !g.contains("seed") ||
      !g.contains("alternate_kinds") || !g["count"].is_number_integer() || g["count"].get<long long>() < 1 ||
      !(g["seed"].is_number_unsigned() || (g["seed"].is_number_integer() && g["seed"].get<long long>() >= 0)) ||
      !g["alternate_kinds"].is_boolean()) {
    throw ValidationError("generator_invalid", "benchmark generator block is incomplete");
  }
  BenchmarkParams p;
  p.scene = scene_params_from_json(g["params"], SceneParams::standard());
  p.count = g["count"].get<std::size_t>();
  p.seed = g["seed"].get<std::uint64_t>();
  p.alternate_kinds = g["alternate_kinds"].get<bool>();
  return p;
}

json benchmark_to_json(std::span<const BenchmarkItem> items, const json& generator) {
  json list = json::array();
  for (const auto& it : items) {
    list.push_back({{"id", it.id},
                    {"grid", io::grid_to_json(it.grid)},
                    {"bbox", {it.bbox.x, it.bbox.y, it.bbox.w, it.bbox.h}},
                    {"category", it.category},
                    {"bundle", it.bundle},
                    {"seed", it.seed}});
  }
  json doc = {{"format_version", io::kFormatVersion}, {"items", std::move(list)}};
  if (!generator.is_null()) doc["generator"] = generator;
  return doc;
}

std::vector<BenchmarkItem> benchmark_from_json(const json& doc) {
  if (!doc.is_object()) throw ValidationError("benchmark_invalid", "benchmark must be a JSON object");
  if (!doc.contains("format_version")) throw ValidationError("format_version_missing", "benchmark has no format_version");
  if (doc["format_version"] != io::kFormatVersion) {
    throw ValidationError("format_version_unsupported", "benchmark: format_version must be 1");
  }
  for (const auto& [k, v] : doc.items()) {
    if (k != "format_version" && k != "items" && k != "generator") throw ValidationError("unknown_field", "benchmark." + k);
  }
  if (!doc.contains("items") || !doc["items"].is_array()) throw ValidationError("benchmark_invalid", "items must be an array");
  std::vector<BenchmarkItem> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < doc["items"].size(); ++i) {
    const json& j = doc["items"][i];
    const std::string where = "items[" + std::to_string(i) + "]";
    if (!j.is_object()) throw ValidationError("benchmark_invalid", where + " must be an object");
    for (const auto& [k, v] : j.items()) {
      if (k != "id" && k != "grid" && k != "bbox" && k != "category" && k != "bundle" && k != "seed") {
        throw ValidationError("unknown_field", where + "." + k);
      }
    }
    BenchmarkItem it;
    if (!j.contains("id") || !j["id"].is_string()) throw ValidationError("benchmark_invalid", where + ".id must be a string");
    it.id = j["id"].get<std::string>();
    if (!ids.insert(it.id).second) throw ValidationError("duplicate_id", where + ": duplicate id " + it.id);
    if (!j.contains("grid")) throw ValidationError("grid_invalid", where + " has no grid");
    it.grid = io::grid_from_json(j["grid"]);
    if (!j.contains("bbox") || !j["bbox"].is_array() || j["bbox"].size() != 4) {
      throw ValidationError("detection_bbox", where + ".bbox must be [x,y,w,h]");
    }
    for (const auto& v : j["bbox"])
      if (!v.is_number()) throw ValidationError("detection_bbox", where + ".bbox must hold numbers");
    it.bbox = {j["bbox"][0].get<double>(), j["bbox"][1].get<double>(), j["bbox"][2].get<double>(),
               j["bbox"][3].get<double>()};
    if (!(it.bbox.w >= 0 && it.bbox.h >= 0 && it.bbox.x >= 0 && it.bbox.y >= 0 &&
          it.bbox.x + it.bbox.w <= it.grid.image_w() && it.bbox.y + it.bbox.h <= it.grid.image_h())) {
      throw ValidationError("bbox_outside_image", where + ".bbox must lie inside the image");
    }
    if (!j.contains("category") || !j["category"].is_string()) {
      throw ValidationError("benchmark_invalid", where + ".category must be a string");
    }
    it.category = j["category"].get<std::string>();
    if (j.contains("bundle")) {
      if (!j["bundle"].is_string()) throw ValidationError("benchmark_invalid", where + ".bundle must be a string");
      it.bundle = j["bundle"].get<std::string>();
    }
    if (j.contains("seed")) {
      if (!j["seed"].is_number_unsigned()) throw ValidationError("benchmark_invalid", where + ".seed must be unsigned");
      it.seed = j["seed"].get<std::uint64_t>();
    }
    out.push_back(std::move(it));
  }
  return out;
}

json predictions_to_json(std::span<const BenchmarkItem> items, std::span<const PixelPoint> points) {
  check_counts(items.size(), points.size());
  json list = json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    list.push_back({{"id", items[i].id}, {"point", {points[i].x, points[i].y}}});
  }
  return {{"format_version", io::kFormatVersion}, {"predictions", std::move(list)}};
}

std::vector<PixelPoint> predictions_from_json(const json& doc, std::span<const BenchmarkItem> items) {
  if (!doc.is_object()) throw ValidationError("predictions_invalid", "predictions must be a JSON object");
  if (!doc.contains("format_version")) throw ValidationError("format_version_missing", "predictions have no format_version");
  if (doc["format_version"] != io::kFormatVersion) {
    throw ValidationError("format_version_unsupported", "predictions: format_version must be 1");
  }
  for (const auto& [k, v] : doc.items()) {
    if (k != "format_version" && k != "predictions") throw ValidationError("unknown_field", "predictions." + k);
  }
  if (!doc.contains("predictions") || !doc["predictions"].is_array()) {
    throw ValidationError("predictions_invalid", "predictions must be an array");
  }
  const json& list = doc["predictions"];
  check_counts(items.size(), list.size());
  std::map<std::string, PixelPoint> by_id;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const json& p = list[i];
    const std::string where = "predictions[" + std::to_string(i) + "]";
    if (!p.is_object() || !p.contains("id") || !p["id"].is_string() || !p.contains("point") ||
        !p["point"].is_array() || p["point"].size() != 2 || !p["point"][0].is_number() ||
        !p["point"][1].is_number() || p.size() != 2) {
      throw ValidationError("predictions_invalid", where + " must be {\"id\": string, \"point\": [x, y]}");
    }
    if (!by_id.emplace(p["id"].get<std::string>(), PixelPoint{p["point"][0].get<double>(), p["point"][1].get<double>()}).second) {
      throw ValidationError("duplicate_id", where + ": duplicate id");
    }
  }
  std::vector<PixelPoint> out;
  for (const auto& it : items) {
    auto f = by_id.find(it.id);
    if (f == by_id.end()) throw InvalidInput("no prediction for item " + it.id);
    out.push_back(f->second);
  }
  return out;
}

json report_to_json(const EvalReport& r) {
  json cats = json::object();
  for (const auto& [name, s] : r.categories) cats[name] = stats_to_json(s);
  json items = json::array();
  for (const auto& v : r.items) items.push_back({{"id", v.id}, {"point", {v.point.x, v.point.y}}, {"hit", v.hit}});
  return {{"format_version", io::kFormatVersion},
          {"overall", stats_to_json(r.overall)},
          {"categories", std::move(cats)},
          {"items", std::move(items)}};
}

AblationSuite parse_suite(const std::string& name) {
  if (name == "fusion-strategies") return AblationSuite::fusion_strategies;
  if (name == "token-selection") return AblationSuite::token_selection;
  if (name == "head-selection") return AblationSuite::head_selection;
  if (name == "localization-mode") return AblationSuite::localization_mode;
  throw InvalidInput("unknown ablation suite: " + name);
}

std::string suite_name(AblationSuite s) {
  switch (s) {
    case AblationSuite::fusion_strategies: return "fusion-strategies";
    case AblationSuite::token_selection: return "token-selection";
    case AblationSuite::head_selection: return "head-selection";
    case AblationSuite::localization_mode: return "localization-mode";
  }
  return {};
}

AblationReport ablation_run(AblationSuite suite, std::span<const Scene> scenes, const FusionConfig& cfg) {
  cfg.validate();
  std::vector<std::string> variants;
  switch (suite) {
    case AblationSuite::fusion_strategies:
      variants = {"OCR", "Caption", "Attention", "Average", "Custom", "CS"};
      break;
    case AblationSuite::token_selection:
      variants = {"All-Token", "Last-Token", "Top-Token"};
      break;
    case AblationSuite::head_selection:
      variants = {"All-Head", "Range-Head", "Top-Head"};
      break;
    case AblationSuite::localization_mode:
      variants = {"Direct", "Two-Stage"};
      break;
  }
  const std::size_t n = scenes.size();
  std::vector<std::vector<PixelPoint>> points(variants.size(), std::vector<PixelPoint>(n));

  parallel_for(n, [&](std::size_t i) {
    const Scene& scene = scenes[i];
    const ModalityBundle b = scene.render();
    switch (suite) {
      case AblationSuite::fusion_strategies: {
        const auto maps = compute_modality_maps(b, cfg).maps;
        points[0][i] = map_point(maps.ocr);
        points[1][i] = map_point(maps.cap);
        points[2][i] = map_point(maps.attn);
        points[3][i] = map_point(fuse_average(maps));
        points[4][i] = map_point(fuse_custom(maps));
        points[5][i] = map_point(fuse(maps, cfg));
        break;
      }
      case AblationSuite::token_selection:
      case AblationSuite::head_selection: {
        if (!b.attention || !b.patches) throw InvalidInput("selection suites need attention and patch embeddings");
        for (std::size_t v = 0; v < 3; ++v) {
          AttentionOptions opt;
          if (suite == AblationSuite::token_selection) opt.tokens = static_cast<TokenStrategy>(v);
          else opt.heads = static_cast<HeadStrategy>(v);
          points[v][i] = map_point(extract_attention(*b.attention, b.tokens, *b.patches, cfg, opt).map);
        }
        break;
      }
      case AblationSuite::localization_mode:
        points[0][i] = ground(b, {}, cfg).point;
        points[1][i] = ground(b, scene.stage2(), cfg).point;
        break;
    }
  });

  std::vector<BenchmarkItem> items;
  items.reserve(n);
  for (std::size_t i = 0; i < n; ++i) items.push_back(make_item(scenes[i], i));
  AblationReport r{suite, {}};
  for (std::size_t v = 0; v < variants.size(); ++v) r.rows.push_back({variants[v], evaluate(items, points[v])});
  return r;
}

json ablation_to_json(const AblationReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json cats = json::object();
    for (const auto& [name, s] : row.report.categories) cats[name] = stats_to_json(s);
    rows.push_back({{"variant", row.variant}, {"overall", stats_to_json(row.report.overall)}, {"categories", cats}});
  }
  return {{"format_version", io::kFormatVersion}, {"suite", suite_name(r.suite)}, {"rows", std::move(rows)}};
}

}  // namespace groundfuse
