#pragma once

// Single-threaded reference versions of the OpenMP kernels. The parallel
// kernels must agree with these bit for bit.

#include <span>
#include <vector>

#include "groundfuse/attention.hpp"
#include "groundfuse/fusion.hpp"
#include "groundfuse/grid.hpp"

namespace groundfuse {
struct BenchmarkItem;
struct EvalReport;
}  // namespace groundfuse

namespace groundfuse::serial {

/// Box-major scatter: each box adds its score to the cells it overlaps.
Heatmap project_boxes(std::span<const ScoredBox> scored, const PatchGrid& grid);

std::vector<HeadScore> head_entropies(const AttentionStack& stack, std::size_t token_id);

Heatmap single_peak_map(const ModalityMaps& maps, const FusionConfig& cfg);

EvalReport evaluate(std::span<const BenchmarkItem> items, std::span<const PixelPoint> predictions);

}  // namespace groundfuse::serial
