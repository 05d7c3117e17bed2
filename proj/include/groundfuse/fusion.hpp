#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "groundfuse/config.hpp"
#include "groundfuse/grid.hpp"

namespace groundfuse {

enum class Modality { attn = 0, ocr = 1, cap = 2 };

std::string_view modality_name(Modality m) noexcept;

/// The three normalized modality heatmaps on one grid.
struct ModalityMaps {
  Heatmap attn, ocr, cap;

  const Heatmap& operator[](Modality m) const noexcept;
  const PatchGrid& grid() const noexcept { return attn.grid(); }
};

struct PeakSet {
  Modality modality = Modality::attn;
  std::vector<Cell> cells;  // row-major order
  double threshold_used = 0;
};

/// Element-wise product a*o*c.
Heatmap consensus_map(const Heatmap& a, const Heatmap& o, const Heatmap& c);

/// Cells strictly above max(quantile(h, q), floor).
PeakSet peak_set(const Heatmap& h, Modality modality, double q, double floor);

double modality_quantile(Modality m, const FusionConfig& cfg) noexcept;

/// sigmoid(alpha * (sum of the other modalities at j) / (a_j^s + eps) - beta).
double peak_confidence(Modality s, std::size_t cell, const ModalityMaps& maps,
                       const FusionConfig& cfg);

/// 1 + lambda * (2 conf - 1).
double peak_weight(double conf, double lambda) noexcept;

/// Confidence-weighted sum of each modality's above-threshold peaks.
/// OpenMP-parallel over cells.
Heatmap single_peak_map(const ModalityMaps& maps, const FusionConfig& cfg);

/// Consensus-single-peak fusion: (consensus + single-peak) / 2, min-max
/// normalized.
Heatmap fuse(const ModalityMaps& maps, const FusionConfig& cfg);

Heatmap fuse_average(const ModalityMaps& maps);

using FusionWeights = std::array<double, 3>;  // attn, ocr, cap
inline constexpr FusionWeights kDefaultCustomWeights{0.6, 0.2, 0.2};

Heatmap fuse_custom(const ModalityMaps& maps, const FusionWeights& weights = kDefaultCustomWeights);

enum class FusionStrategy { cs, average, custom };

Heatmap fuse_with(FusionStrategy strategy, const ModalityMaps& maps, const FusionConfig& cfg,
                  const FusionWeights& weights = kDefaultCustomWeights);

}  // namespace groundfuse
