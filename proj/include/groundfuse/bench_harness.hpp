#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundfuse/localizer.hpp"
#include "groundfuse/synth.hpp"

namespace groundfuse {

struct BenchmarkItem {
  std::string id;
  PatchGrid grid;
  BBox bbox;
  std::string category;
  std::string bundle;  // manifest path, relative to the benchmark file
  std::uint64_t seed = 0;
};

struct CategoryStats {
  std::size_t count = 0;
  std::size_t hits = 0;
  double accuracy = 0;
};

struct ItemVerdict {
  std::string id;
  PixelPoint point;
  bool hit = false;
};

struct EvalReport {
  CategoryStats overall;
  std::map<std::string, CategoryStats> categories;
  std::vector<ItemVerdict> items;  // benchmark order
};

/// Element Accuracy with boundary-inclusive containment. Verdicts are
/// computed in parallel and aggregated in item order.
EvalReport evaluate(std::span<const BenchmarkItem> items, std::span<const PixelPoint> predictions);

struct BenchmarkParams {
  SceneParams scene = SceneParams::standard();
  std::size_t count = 100;
  std::uint64_t seed = 0;
  bool alternate_kinds = true;  // even items text, odd items icon
};

/// Scene parameters of item `index`: the per-item seed is split from the
/// benchmark seed.
SceneParams item_params(const BenchmarkParams& p, std::size_t index);

std::string item_id(std::size_t index);
BenchmarkItem make_item(const Scene& scene, std::size_t index);

/// In-memory scenes, generated in parallel.
std::vector<Scene> generate_scenes(const BenchmarkParams& p);

/// Writes every item bundle under `dir/items/<id>/` plus `dir/benchmark.json`;
/// returns the benchmark path.
std::filesystem::path write_benchmark(const BenchmarkParams& p, const std::filesystem::path& dir);

/// Parameter document of the synth command: scene fields plus optional
/// "preset" ("standard" | "small-target"), "count" and "alternate_kinds".
BenchmarkParams benchmark_params_from_json(const nlohmann::json& doc, std::uint64_t seed);

/// Inverse of the "generator" block recorded by write_benchmark.
BenchmarkParams generator_from_json(const nlohmann::json& generator);

nlohmann::json benchmark_to_json(std::span<const BenchmarkItem> items, const nlohmann::json& generator);
std::vector<BenchmarkItem> benchmark_from_json(const nlohmann::json& doc);

nlohmann::json predictions_to_json(std::span<const BenchmarkItem> items, std::span<const PixelPoint> points);
/// Predictions matched to items by id.
std::vector<PixelPoint> predictions_from_json(const nlohmann::json& doc, std::span<const BenchmarkItem> items);

nlohmann::json report_to_json(const EvalReport& r);

enum class AblationSuite { fusion_strategies, token_selection, head_selection, localization_mode };

AblationSuite parse_suite(const std::string& name);
std::string suite_name(AblationSuite s);

struct AblationRow {
  std::string variant;
  EvalReport report;
};

struct AblationReport {
  AblationSuite suite;
  std::vector<AblationRow> rows;
};

/// Runs every variant of a suite over the same scenes:
///   fusion-strategies  OCR, Caption, Attention, Average, Custom, CS (direct)
///   token-selection    All-Token, Last-Token, Top-Token (attention only)
///   head-selection     All-Head, Range-Head, Top-Head (attention only)
///   localization-mode  Direct, Two-Stage (CS fusion)
AblationReport ablation_run(AblationSuite suite, std::span<const Scene> scenes, const FusionConfig& cfg);

nlohmann::json ablation_to_json(const AblationReport& r);

}  // namespace groundfuse
