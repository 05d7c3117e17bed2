#pragma once

#include <optional>
#include <vector>

#include "groundfuse/attention.hpp"
#include "groundfuse/detection.hpp"
#include "groundfuse/fusion.hpp"

namespace groundfuse {

/// Everything needed to ground one (screenshot, instruction) pair. Any
/// modality may be absent; an absent modality yields an all-zero heatmap.
struct ModalityBundle {
  PatchGrid grid;
  std::optional<AttentionStack> attention;
  std::vector<TokenRecord> tokens;
  std::optional<PatchEmbeddings> patches;
  std::optional<std::vector<double>> instruction_embedding;
  std::vector<Detection> ocr;
  std::vector<Detection> captions;
};

struct ModalityOutputs {
  ModalityMaps maps;
  std::optional<AttentionExtraction> attention;
  std::optional<QueryEmbedding> query;
};

/// The query used to score detections. Mean-of-tokens mode falls back to the
/// instruction embedding when no tokens can be filtered; whole-instruction
/// mode requires the instruction embedding.
std::optional<QueryEmbedding> resolve_query(const ModalityBundle& bundle, const FusionConfig& cfg);

/// Attention, OCR and caption heatmaps for a bundle.
ModalityOutputs compute_modality_maps(const ModalityBundle& bundle, const FusionConfig& cfg,
                                      AttentionOptions attention = {});

}  // namespace groundfuse
