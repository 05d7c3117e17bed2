#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "groundfuse/bench_harness.hpp"
#include "groundfuse/io.hpp"
#include "oracles.hpp"

using namespace groundfuse;
using io::json;

namespace {

BenchmarkItem item(const std::string& id, const BBox& b, const std::string& cat) {
  return {id, PatchGrid(4, 4, 100, 100), b, cat, "", 0};
}

std::string code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.code();
  }
  return "";
}

}  // namespace

TEST_CASE("evaluate uses inclusive containment") {
  const std::vector<BenchmarkItem> items{item("a", {10, 10, 20, 20}, "text"), item("b", {10, 10, 20, 20}, "text"),
                                         item("c", {50, 50, 10, 10}, "icon"), item("d", {50, 50, 10, 10}, "icon")};
  const std::vector<PixelPoint> pts{{30, 30}, {31, 30}, {50, 60}, {49, 55}};
  const EvalReport r = evaluate(items, pts);
  CHECK(r.items[0].hit);
  CHECK_FALSE(r.items[1].hit);
  CHECK(r.items[2].hit);
  CHECK_FALSE(r.items[3].hit);
  CHECK(r.overall.hits == 2);
  CHECK(r.overall.accuracy == 0.5);
  CHECK(r.categories.at("text").count == 2);
  CHECK(r.categories.at("icon").hits == 1);
  CHECK_THROWS_AS(evaluate(items, std::vector<PixelPoint>(3)), InvalidInput);
}

TEST_CASE("evaluate matches the containment oracle and is permutation-invariant") {
  Rng rng(60);
  for (int t = 0; t < 30; ++t) {
    std::vector<BenchmarkItem> items;
    std::vector<PixelPoint> pts;
    std::size_t expect = 0;
    for (int i = 0; i < 100; ++i) {
      const BBox b{rng.uniform(0, 80), rng.uniform(0, 80), rng.uniform(1, 20), rng.uniform(1, 20)};
      const PixelPoint p{std::floor(rng.uniform(0, 100)), std::floor(rng.uniform(0, 100))};
      items.push_back(item(item_id(static_cast<std::size_t>(i)), b, i % 3 ? "text" : "icon"));
      pts.push_back(p);
      if (p.x >= b.x && p.x <= b.x + b.w && p.y >= b.y && p.y <= b.y + b.h) ++expect;
    }
    const EvalReport r = evaluate(items, pts);
    CHECK(r.overall.hits == expect);
    std::vector<std::size_t> perm(items.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    std::vector<BenchmarkItem> pi;
    std::vector<PixelPoint> pp;
    for (auto k : perm) {
      pi.push_back(items[k]);
      pp.push_back(pts[k]);
    }
    const EvalReport q = evaluate(pi, pp);
    CHECK(q.overall.accuracy == r.overall.accuracy);
    CHECK(q.categories.at("text").hits == r.categories.at("text").hits);
  }
}

TEST_CASE("benchmark and prediction documents") {
  const std::vector<BenchmarkItem> items{item("item-0000", {1, 2, 3, 4}, "text"), item("item-0001", {5, 5, 5, 5}, "icon")};
  const json doc = benchmark_to_json(items, nullptr);
  const auto back = benchmark_from_json(doc);
  REQUIRE(back.size() == 2);
  CHECK(back[1].bbox == items[1].bbox);
  CHECK(benchmark_to_json(back, nullptr) == doc);

  const std::vector<PixelPoint> pts{{1, 2}, {3, 4}};
  const json pj = predictions_to_json(items, pts);
  CHECK(predictions_from_json(pj, items) == pts);
  json reordered = pj;
  std::swap(reordered["predictions"][0], reordered["predictions"][1]);
  CHECK(predictions_from_json(reordered, items) == pts);

  json bad = doc;
  bad["items"][1]["id"] = "item-0000";
  CHECK(code_of([&] { benchmark_from_json(bad); }) == "duplicate_id");
  bad = doc;
  bad["items"][0]["bbox"] = {90, 90, 20, 20};
  CHECK(code_of([&] { benchmark_from_json(bad); }) == "bbox_outside_image");
  bad = doc;
  bad["extra"] = 1;
  CHECK(code_of([&] { benchmark_from_json(bad); }) == "unknown_field");
  bad = doc;
  bad.erase("format_version");
  CHECK(code_of([&] { benchmark_from_json(bad); }) == "format_version_missing");

  json bp = pj;
  bp["predictions"][0]["point"] = {1};
  CHECK(code_of([&] { predictions_from_json(bp, items); }) == "predictions_invalid");
  bp = pj;
  bp["predictions"][1]["id"] = "item-0000";
  CHECK(code_of([&] { predictions_from_json(bp, items); }) == "duplicate_id");
  bp = pj;
  bp["predictions"].erase(1);
  CHECK_THROWS_AS(predictions_from_json(bp, items), InvalidInput);
}

TEST_CASE("benchmark parameter documents") {
  const BenchmarkParams p = benchmark_params_from_json({{"preset", "small-target"}, {"count", 3}, {"distractors", 12}}, 9);
  CHECK(p.count == 3);
  CHECK(p.seed == 9);
  CHECK(p.scene.image_w == SceneParams::small_target().image_w);
  CHECK(p.scene.distractors == 12);
  CHECK(code_of([] { benchmark_params_from_json({{"preset", "huge"}}, 1); }) == "params_type");
  CHECK(code_of([] { benchmark_params_from_json({{"count", 0}}, 1); }) == "params_type");
  CHECK(code_of([] { benchmark_params_from_json({{"alternate_kinds", 1}}, 1); }) == "params_type");
  CHECK(code_of([] { benchmark_params_from_json({{"noise", 1}}, 1); }) == "unknown_field");
  CHECK(code_of([] { generator_from_json({{"count", 1}}); }) == "generator_invalid");

  BenchmarkParams a;
  a.count = 4;
  a.seed = 17;
  CHECK(item_params(a, 1).target_kind == ElementKind::icon);
  CHECK(item_params(a, 2).target_kind == ElementKind::text);
  CHECK(item_params(a, 0).seed == split_seed(17, 0));
  CHECK(item_id(7) == "item-0007");
}

TEST_CASE("ablation suites") {
  CHECK(parse_suite("fusion-strategies") == AblationSuite::fusion_strategies);
  CHECK(suite_name(parse_suite("localization-mode")) == "localization-mode");
  CHECK_THROWS_AS(parse_suite("colour"), InvalidInput);

  BenchmarkParams bp;
  bp.count = 6;
  bp.seed = 3;
  const auto scenes = generate_scenes(bp);
  const FusionConfig cfg;
  auto names = [&](AblationSuite s) {
    std::vector<std::string> out;
    const AblationReport r = ablation_run(s, scenes, cfg);
    for (const auto& row : r.rows) {
      out.push_back(row.variant);
      CHECK(row.report.overall.count == 6);
      CHECK(row.report.categories.size() == 2);
    }
    return out;
  };
  CHECK(names(AblationSuite::fusion_strategies) ==
        std::vector<std::string>{"OCR", "Caption", "Attention", "Average", "Custom", "CS"});
  CHECK(names(AblationSuite::token_selection) == std::vector<std::string>{"All-Token", "Last-Token", "Top-Token"});
  CHECK(names(AblationSuite::head_selection) == std::vector<std::string>{"All-Head", "Range-Head", "Top-Head"});
  CHECK(names(AblationSuite::localization_mode) == std::vector<std::string>{"Direct", "Two-Stage"});

  const AblationReport fr = ablation_run(AblationSuite::fusion_strategies, scenes, cfg);
  std::vector<PixelPoint> cs;
  std::vector<BenchmarkItem> items;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    items.push_back(make_item(scenes[i], i));
    cs.push_back(ground(scenes[i].render(), {}, cfg).point);
  }
  CHECK(fr.rows[5].report.overall.hits == evaluate(items, cs).overall.hits);
  const json j = ablation_to_json(fr);
  CHECK(j["suite"] == "fusion-strategies");
  CHECK(j["rows"].size() == 6);
}

TEST_CASE("fusion-strategy hits on 500 standard scenes are frozen") {
  BenchmarkParams bp;
  bp.count = 500;
  bp.seed = 7;
  const AblationReport r = ablation_run(AblationSuite::fusion_strategies, generate_scenes(bp), FusionConfig{});
  std::map<std::string, std::size_t> hits;
  for (const auto& row : r.rows) hits[row.variant] = row.report.overall.hits;
  CHECK(hits["CS"] == 469);
  CHECK(hits["Average"] == 446);
}
