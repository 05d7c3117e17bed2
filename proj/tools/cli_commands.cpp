#include "cli_commands.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "groundfuse/bench_harness.hpp"
#include "groundfuse/io.hpp"
#include "groundfuse/serial.hpp"
#include "groundfuse/synth.hpp"

namespace groundfuse::cli {

namespace {

using io::json;
namespace fs = std::filesystem;

const std::map<std::string, FusionStrategy> kStrategies{
    {"cs", FusionStrategy::cs}, {"average", FusionStrategy::average}, {"custom", FusionStrategy::custom}};

const std::map<std::string, AblationSuite> kSuites{{"fusion-strategies", AblationSuite::fusion_strategies},
                                                   {"token-selection", AblationSuite::token_selection},
                                                   {"head-selection", AblationSuite::head_selection},
                                                   {"localization-mode", AblationSuite::localization_mode}};

FusionConfig load_config(const std::string& path) {
  return path.empty() ? FusionConfig{} : io::read_config(path);
}

FusionWeights to_weights(const std::vector<double>& w) {
  if (w.empty()) return kDefaultCustomWeights;
  if (w.size() != 3) throw InvalidInput("--weights needs three values: attn,ocr,cap");
  return {w[0], w[1], w[2]};
}

void write_json(const std::string& path, const json& doc) { io::atomic_write(path, io::dump_json(doc)); }

// ground

struct GroundArgs {
  std::string bundle, stage2, emit_crop, config, out, strategy = "cs";
  std::vector<double> weights;
};

void run_ground(const GroundArgs& a) {
  const FusionConfig cfg = load_config(a.config);
  const ModalityBundle stage1 = io::load_bundle(a.bundle);
  GroundOptions opt;
  opt.strategy = kStrategies.at(a.strategy);
  opt.custom_weights = to_weights(a.weights);

  Stage2Supplier supplier;
  if (!a.stage2.empty()) {
    const json manifest = io::read_json(a.stage2);
    std::optional<CropSpec> declared;
    if (manifest.is_object() && manifest.contains("crop")) declared = io::crop_from_json(manifest["crop"]);
    supplier = [&a, declared](const CropSpec& crop) -> std::optional<ModalityBundle> {
      if (declared && !(*declared == crop)) {
        throw ValidationError("crop_mismatch", "stage-2 bundle was produced for crop " +
                                                   io::crop_to_json(*declared).dump() + " but stage 1 selects " +
                                                   io::crop_to_json(crop).dump());
      }
      return io::load_bundle(a.stage2);
    };
  }
  const GroundingResult res = ground(stage1, supplier, cfg, opt);
  if (!a.emit_crop.empty()) write_json(a.emit_crop, io::crop_to_json(*res.crop));
  write_json(a.out, io::result_to_json(res, cfg));
}

// fuse

struct FuseArgs {
  std::string attn, ocr, cap, out, config, strategy = "cs";
  std::vector<double> weights;
};

void run_fuse(const FuseArgs& a) {
  const FusionConfig cfg = load_config(a.config);
  ModalityMaps maps{io::read_heatmap(a.attn), io::read_heatmap(a.ocr), io::read_heatmap(a.cap)};
  if (!(maps.attn.grid() == maps.ocr.grid()) || !(maps.attn.grid() == maps.cap.grid())) {
    throw ValidationError("grid_mismatch", "the three heatmaps must share one grid");
  }
  io::write_heatmap(a.out, fuse_with(kStrategies.at(a.strategy), maps, cfg, to_weights(a.weights)));
}

// attn-extract

struct AttnArgs {
  std::string bundle, out, selection, config;
};

json selection_to_json(const AttentionExtraction& x) {
  json tokens = json::array();
  for (std::size_t i = 0; i < x.tokens.size(); ++i) {
    tokens.push_back({{"id", x.tokens[i].token.token_id},
                      {"text", x.tokens[i].token.text},
                      {"relevance", x.tokens[i].score},
                      {"weight", x.token_weights[i]}});
  }
  json heads = json::array();
  for (std::size_t i = 0; i < x.heads.size(); ++i) {
    json list = json::array();
    for (std::size_t k = 0; k < x.heads[i].heads.size(); ++k) {
      const HeadScore& h = x.heads[i].heads[k];
      json entropy = std::isfinite(h.entropy) ? json(h.entropy) : json("inf");
      list.push_back({{"layer", h.layer}, {"head", h.head}, {"entropy", entropy}, {"weight", x.head_weights[i][k]}});
    }
    heads.push_back({{"token_id", x.heads[i].token_id}, {"heads", std::move(list)}});
  }
  return {{"format_version", io::kFormatVersion}, {"tokens", std::move(tokens)}, {"heads", std::move(heads)}};
}

void run_attn(const AttnArgs& a) {
  const FusionConfig cfg = load_config(a.config);
  const ModalityBundle b = io::load_bundle(a.bundle);
  if (!b.attention || !b.patches || b.tokens.empty()) {
    throw ValidationError("attention_missing", "bundle has no attention tensor, patch embeddings or tokens");
  }
  const AttentionExtraction x = extract_attention(*b.attention, b.tokens, *b.patches, cfg);
  if (!a.selection.empty()) write_json(a.selection, selection_to_json(x));
  io::write_heatmap(a.out, x.map);
}

// eval

struct EvalArgs {
  std::string benchmark, predictions, out;
  bool serial = false;
};

void run_eval(const EvalArgs& a) {
  const auto items = benchmark_from_json(io::read_json(a.benchmark));
  const auto points = predictions_from_json(io::read_json(a.predictions), items);
  const EvalReport r = a.serial ? serial::evaluate(items, points) : evaluate(items, points);
  write_json(a.out, report_to_json(r));
}

// predict

struct PredictArgs {
  std::string benchmark, out, config, strategy = "cs";
  bool two_stage = false;
};

void run_predict(const PredictArgs& a) {
  const FusionConfig cfg = load_config(a.config);
  const json doc = io::read_json(a.benchmark);
  const auto items = benchmark_from_json(doc);
  GroundOptions opt;
  opt.strategy = kStrategies.at(a.strategy);
  std::vector<Scene> scenes;
  if (a.two_stage) {
    if (!doc.contains("generator")) {
      throw ValidationError("generator_invalid", "--two-stage needs a synthetic benchmark with a generator block");
    }
    scenes = generate_scenes(generator_from_json(doc["generator"]));
    if (scenes.size() != items.size()) throw ValidationError("generator_invalid", "generator count differs from items");
  }
  const fs::path base = fs::path(a.benchmark).parent_path();
  std::vector<PixelPoint> points;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const ModalityBundle b = io::load_bundle(base / items[i].bundle);
    Stage2Supplier supplier;
    if (a.two_stage) {
      if (scenes[i].params().seed != items[i].seed) {
        throw ValidationError("generator_invalid", items[i].id + ": seed differs from the generator");
      }
      supplier = scenes[i].stage2();
    }
    points.push_back(ground(b, supplier, cfg, opt).point);
  }
  write_json(a.out, predictions_to_json(items, points));
}

// synth

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string params, out_dir, crop;
  std::optional<std::size_t> item;
};

void run_synth(const SynthArgs& a) {
  const json doc = a.params.empty() ? json::object() : io::read_json(a.params);
  const BenchmarkParams p = benchmark_params_from_json(doc, a.seed);
  if (!a.item) {
    write_benchmark(p, a.out_dir);
    return;
  }
  if (*a.item >= p.count) throw InvalidInput("--item is outside the benchmark");
  const CropSpec crop = io::crop_from_json(io::read_json(a.crop));
  const Scene scene(item_params(p, *a.item));
  json crop_doc = io::crop_to_json(crop);
  crop_doc.erase("format_version");
  const json extra = {{"crop", crop_doc},
                      {"metadata", {{"generator", "synth"}, {"item", item_id(*a.item)}, {"params", scene_params_to_json(scene.params())}}}};
  io::write_bundle(a.out_dir, scene.render(crop), extra);
}

// render

struct RenderArgs {
  std::string heatmap, out;
  std::vector<double> bbox;
};

void run_render(const RenderArgs& a) {
  const Heatmap h = io::read_heatmap(a.heatmap);
  const PatchGrid& g = h.grid();
  double hi = 0;
  for (double v : h.values()) hi = std::max(hi, v);
  const std::size_t w = static_cast<std::size_t>(g.image_w()), ht = static_cast<std::size_t>(g.image_h());
  std::vector<unsigned char> cell_level(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double v = hi > 0 ? std::max(0.0, h[i]) / hi : 0.0;
    cell_level[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  std::vector<unsigned char> px(w * ht);
  std::vector<std::size_t> col_of(w), row_of(ht);
  for (std::size_t x = 0, c = 0; x < w; ++x) {
    while (c + 1 < g.cols() && static_cast<double>(x) + 0.5 >= g.col_edge(c + 1)) ++c;
    col_of[x] = c;
  }
  for (std::size_t y = 0, r = 0; y < ht; ++y) {
    while (r + 1 < g.rows() && static_cast<double>(y) + 0.5 >= g.row_edge(r + 1)) ++r;
    row_of[y] = r;
  }
  for (std::size_t y = 0; y < ht; ++y)
    for (std::size_t x = 0; x < w; ++x) px[y * w + x] = cell_level[g.index(row_of[y], col_of[x])];
  if (!a.bbox.empty()) {
    if (a.bbox.size() != 4 || !(a.bbox[2] > 0) || !(a.bbox[3] > 0)) {
      throw InvalidInput("--overlay-bbox needs x,y,w,h with positive size");
    }
    const BBox b = clamp_to_image({a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3]}, g);
    const auto clampi = [](double v, std::size_t n) {
      return static_cast<std::size_t>(std::clamp(std::floor(v), 0.0, static_cast<double>(n - 1)));
    };
    const std::size_t x0 = clampi(b.x, w), x1 = clampi(b.x + b.w - 1, w);
    const std::size_t y0 = clampi(b.y, ht), y1 = clampi(b.y + b.h - 1, ht);
    for (std::size_t x = x0; x <= x1; ++x) px[y0 * w + x] = px[y1 * w + x] = 255;
    for (std::size_t y = y0; y <= y1; ++y) px[y * w + x0] = px[y * w + x1] = 255;
  }
  std::string bytes = "P5\n" + std::to_string(w) + " " + std::to_string(ht) + "\n255\n";
  bytes.append(reinterpret_cast<const char*>(px.data()), px.size());
  io::atomic_write(a.out, bytes);
}

// ablate

struct AblateArgs {
  std::string suite, params, out, config;
  std::uint64_t seed = 0;
};

void run_ablate(const AblateArgs& a) {
  const FusionConfig cfg = load_config(a.config);
  const json doc = a.params.empty() ? json::object() : io::read_json(a.params);
  const auto scenes = generate_scenes(benchmark_params_from_json(doc, a.seed));
  write_json(a.out, ablation_to_json(ablation_run(kSuites.at(a.suite), scenes, cfg)));
}

CLI::Option* strategy_option(CLI::App* app, std::string& target) {
  return app->add_option("--strategy", target, "Fusion strategy")
      ->check(CLI::IsMember({"cs", "average", "custom"}));
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& err) {
  CLI::App app{"Training-free GUI grounding by fusing attention, OCR and caption heatmaps", "groundfuse"};
  app.require_subcommand(1);

  GroundArgs ground_args;
  auto* ground_cmd = app.add_subcommand("ground", "Full pipeline with optional zoom-in refinement");
  ground_cmd->add_option("--bundle", ground_args.bundle, "Stage-1 manifest")->required();
  auto* s2 = ground_cmd->add_option("--stage2-bundle", ground_args.stage2, "Stage-2 manifest for the emitted crop");
  auto* ec = ground_cmd->add_option("--emit-crop", ground_args.emit_crop, "Write the stage-2 crop and stop");
  s2->excludes(ec);
  ground_cmd->add_option("--config", ground_args.config, "Config JSON");
  strategy_option(ground_cmd, ground_args.strategy);
  ground_cmd->add_option("--weights", ground_args.weights, "Custom weights attn,ocr,cap")->delimiter(',');
  ground_cmd->add_option("--out", ground_args.out, "Result JSON")->required();

  FuseArgs fuse_args;
  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse three heatmaps");
  fuse_cmd->add_option("--attn", fuse_args.attn)->required();
  fuse_cmd->add_option("--ocr", fuse_args.ocr)->required();
  fuse_cmd->add_option("--cap", fuse_args.cap)->required();
  strategy_option(fuse_cmd, fuse_args.strategy);
  fuse_cmd->add_option("--weights", fuse_args.weights, "Custom weights attn,ocr,cap")->delimiter(',');
  fuse_cmd->add_option("--config", fuse_args.config, "Config JSON");
  fuse_cmd->add_option("--out", fuse_args.out)->required();

  AttnArgs attn_args;
  auto* attn_cmd = app.add_subcommand("attn-extract", "Attention heatmap with token and head selection");
  attn_cmd->add_option("--bundle", attn_args.bundle)->required();
  attn_cmd->add_option("--out", attn_args.out)->required();
  attn_cmd->add_option("--dump-selection", attn_args.selection, "Chosen tokens, heads and entropies");
  attn_cmd->add_option("--config", attn_args.config, "Config JSON");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Element Accuracy with per-category breakdown");
  eval_cmd->add_option("--benchmark", eval_args.benchmark)->required();
  eval_cmd->add_option("--predictions", eval_args.predictions)->required();
  eval_cmd->add_option("--out", eval_args.out)->required();
  eval_cmd->add_flag("--serial", eval_args.serial, "Single-threaded reference evaluation");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Ground every item of a benchmark");
  predict_cmd->add_option("--benchmark", predict_args.benchmark)->required();
  predict_cmd->add_option("--out", predict_args.out)->required();
  predict_cmd->add_option("--config", predict_args.config, "Config JSON");
  strategy_option(predict_cmd, predict_args.strategy);
  predict_cmd->add_flag("--two-stage", predict_args.two_stage, "Refine on crops re-rendered from the generator");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic benchmark or one stage-2 bundle");
  synth_cmd->add_option("--seed", synth_args.seed)->required();
  synth_cmd->add_option("--params", synth_args.params, "Parameter JSON");
  synth_cmd->add_option("--out-dir", synth_args.out_dir)->required();
  auto* item_opt = synth_cmd->add_option("--item", synth_args.item, "Item index for a stage-2 bundle");
  auto* crop_opt = synth_cmd->add_option("--crop", synth_args.crop, "Crop JSON for a stage-2 bundle");
  item_opt->needs(crop_opt);
  crop_opt->needs(item_opt);

  RenderArgs render_args;
  auto* render_cmd = app.add_subcommand("render", "Heatmap to binary PGM");
  render_cmd->add_option("--heatmap", render_args.heatmap)->required();
  render_cmd->add_option("--out", render_args.out)->required();
  render_cmd->add_option("--overlay-bbox", render_args.bbox, "x,y,w,h")->delimiter(',');

  AblateArgs ablate_args;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation suite on generated scenes");
  ablate_cmd->add_option("--suite", ablate_args.suite)->required()->check(CLI::IsMember(
      {"fusion-strategies", "token-selection", "head-selection", "localization-mode"}));
  ablate_cmd->add_option("--seed", ablate_args.seed)->required();
  ablate_cmd->add_option("--params", ablate_args.params, "Parameter JSON");
  ablate_cmd->add_option("--config", ablate_args.config, "Config JSON");
  ablate_cmd->add_option("--out", ablate_args.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, std::cout, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*ground_cmd) run_ground(ground_args);
    else if (*fuse_cmd) run_fuse(fuse_args);
    else if (*attn_cmd) run_attn(attn_args);
    else if (*eval_cmd) run_eval(eval_args);
    else if (*predict_cmd) run_predict(predict_args);
    else if (*synth_cmd) run_synth(synth_args);
    else if (*render_cmd) run_render(render_args);
    else if (*ablate_cmd) run_ablate(ablate_args);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}

}  // namespace groundfuse::cli
