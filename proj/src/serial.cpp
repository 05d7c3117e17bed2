#include "groundfuse/serial.hpp"

#include <algorithm>
#include <cmath>

namespace groundfuse::serial {

Heatmap project_boxes(std::span<const ScoredBox> scored, const PatchGrid& grid) {
  Heatmap out(grid);
  for (const auto& sb : scored) {
    if (!(sb.score >= 0.0) || !std::isfinite(sb.score)) {
      throw InvalidInput("project_boxes: scores must be finite and non-negative");
    }
    const BBox b = clamp_to_image(sb.box, grid);
    if (b.w <= 0 || b.h <= 0) continue;
    for (std::size_t r = 0; r < grid.rows(); ++r) {
      if (grid.row_edge(r + 1) <= b.y || grid.row_edge(r) >= b.y + b.h) continue;
      for (std::size_t c = 0; c < grid.cols(); ++c) {
        if (grid.col_edge(c + 1) <= b.x || grid.col_edge(c) >= b.x + b.w) continue;
        out[grid.index(r, c)] += sb.score;
      }
    }
  }
  return out;
}

std::vector<HeadScore> head_entropies(const AttentionStack& stack, std::size_t token_id) {
  if (token_id >= stack.tokens()) throw InvalidInput("head_entropies: token id out of range");
  std::vector<HeadScore> scores;
  for (std::size_t l = 0; l < stack.layers(); ++l) {
    for (std::size_t h = 0; h < stack.heads(); ++h) {
      const Heatmap m = stack.slice_map(l, h, token_id);
      scores.push_back({l, h, spatial_entropy(m, connected_regions(m))});
    }
  }
  return scores;
}

Heatmap single_peak_map(const ModalityMaps& maps, const FusionConfig& cfg) {
  require_same_grid(maps.attn, maps.ocr, "single_peak_map");
  require_same_grid(maps.attn, maps.cap, "single_peak_map");
  Heatmap out(maps.grid());
  for (Modality m : {Modality::attn, Modality::ocr, Modality::cap}) {
    const Heatmap& h = maps[m];
    const double tau = std::max(quantile(h.values(), modality_quantile(m, cfg)), cfg.peak_floor);
    for (std::size_t j = 0; j < h.size(); ++j) {
      if (h[j] > tau) out[j] += peak_weight(peak_confidence(m, j, maps, cfg), cfg.lambda) * h[j];
    }
  }
  return out;
}

}  // namespace groundfuse::serial
