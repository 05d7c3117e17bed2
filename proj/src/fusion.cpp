#include "groundfuse/fusion.hpp"

#include <cmath>
#include <string>

namespace groundfuse {

void FusionConfig::validate() const {
  auto frac = [](double q, const char* name) {
    if (!(q > 0.0 && q < 1.0)) throw InvalidInput(std::string(name) + " must lie in (0,1)");
  };
  frac(q_attn, "q_attn");
  frac(q_ocr, "q_ocr");
  frac(q_cap, "q_cap");
  if (!(epsilon > 0.0)) throw InvalidInput("epsilon must be positive");
  if (!(lambda >= 0.0)) throw InvalidInput("lambda must be non-negative");
  if (k_token < 1 || k_head < 1) throw InvalidInput("k_token and k_head must be at least 1");
  for (double v : {tau_v, peak_floor, alpha, beta, lambda}) {
    if (!std::isfinite(v)) throw InvalidInput("config values must be finite");
  }
}

std::string_view modality_name(Modality m) noexcept {
  switch (m) {
    case Modality::attn: return "attn";
    case Modality::ocr: return "ocr";
    case Modality::cap: return "cap";
  }
  return "?";
}

const Heatmap& ModalityMaps::operator[](Modality m) const noexcept {
  switch (m) {
    case Modality::ocr: return ocr;
    case Modality::cap: return cap;
    default: return attn;
  }
}

namespace {

constexpr std::array<Modality, 3> kModalities{Modality::attn, Modality::ocr, Modality::cap};

void require_triple(const ModalityMaps& m, const char* what) {
  require_same_grid(m.attn, m.ocr, what);
  require_same_grid(m.attn, m.cap, what);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Heatmap consensus_map(const Heatmap& a, const Heatmap& o, const Heatmap& c) {
  require_same_grid(a, o, "consensus_map");
  require_same_grid(a, c, "consensus_map");
  Heatmap out(a.grid());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = a[j] * o[j] * c[j];
  return out;
}

double modality_quantile(Modality m, const FusionConfig& cfg) noexcept {
  switch (m) {
    case Modality::ocr: return cfg.q_ocr;
    case Modality::cap: return cfg.q_cap;
    default: return cfg.q_attn;
  }
}

PeakSet peak_set(const Heatmap& h, Modality modality, double q, double floor) {
  PeakSet p{modality, {}, std::max(quantile(h.values(), q), floor)};
  for (std::size_t j = 0; j < h.size(); ++j) {
    if (h[j] > p.threshold_used) p.cells.push_back(h.grid().cell(j));
  }
  return p;
}

double peak_confidence(Modality s, std::size_t cell, const ModalityMaps& maps,
                       const FusionConfig& cfg) {
  if (cell >= maps.attn.size()) throw InvalidInput("peak_confidence: cell out of range");
  double support = 0.0;
  for (Modality other : kModalities) {
    if (other != s) support += maps[other][cell];
  }
  return sigmoid(cfg.alpha * support / (maps[s][cell] + cfg.epsilon) - cfg.beta);
}

double peak_weight(double conf, double lambda) noexcept { return 1.0 + lambda * (2.0 * conf - 1.0); }

Heatmap single_peak_map(const ModalityMaps& maps, const FusionConfig& cfg) {
  require_triple(maps, "single_peak_map");
  std::array<double, 3> tau{};
  for (Modality m : kModalities) {
    tau[static_cast<int>(m)] =
        std::max(quantile(maps[m].values(), modality_quantile(m, cfg)), cfg.peak_floor);
  }
  Heatmap out(maps.grid());
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static) if (n > 8192)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(i);
    double acc = 0.0;
    for (Modality m : kModalities) {
      const double v = maps[m][j];
      if (v > tau[static_cast<int>(m)]) acc += peak_weight(peak_confidence(m, j, maps, cfg), cfg.lambda) * v;
    }
    out[j] = acc;
  }
  return out;
}

Heatmap fuse(const ModalityMaps& maps, const FusionConfig& cfg) {
  require_triple(maps, "fuse");
  Heatmap cons = consensus_map(maps.attn, maps.ocr, maps.cap);
  if (cfg.renormalize_consensus) cons = minmax_normalize(cons);
  const Heatmap single = single_peak_map(maps, cfg);
  Heatmap out(maps.grid());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (cons[j] + single[j]) / 2.0;
  return minmax_normalize(out);
}

Heatmap fuse_average(const ModalityMaps& maps) {
  require_triple(maps, "fuse_average");
  Heatmap out(maps.grid());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (maps.attn[j] + maps.ocr[j] + maps.cap[j]) / 3.0;
  return minmax_normalize(out);
}

Heatmap fuse_custom(const ModalityMaps& maps, const FusionWeights& w) {
  require_triple(maps, "fuse_custom");
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("fusion weights must be non-negative");
    total += v;
  }
  if (!(total > 0.0)) throw InvalidInput("fusion weights must have a positive sum");
  Heatmap out(maps.grid());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = (w[0] * maps.attn[j] + w[1] * maps.ocr[j] + w[2] * maps.cap[j]) / total;
  }
  return minmax_normalize(out);
}

Heatmap fuse_with(FusionStrategy strategy, const ModalityMaps& maps, const FusionConfig& cfg,
                  const FusionWeights& weights) {
  switch (strategy) {
    case FusionStrategy::average: return fuse_average(maps);
    case FusionStrategy::custom: return fuse_custom(maps, weights);
    case FusionStrategy::cs: break;
  }
  return fuse(maps, cfg);
}

}  // namespace groundfuse
