#pragma once

#include <span>
#include <string>
#include <vector>

#include "groundfuse/attention.hpp"
#include "groundfuse/config.hpp"
#include "groundfuse/grid.hpp"

namespace groundfuse {

/// An OCR text instance or an icon caption: box, string, confidence and the
/// string's text embedding.
struct Detection {
  BBox bbox;
  std::string text;
  double confidence = 0;
  std::vector<double> embedding;
};

struct QueryEmbedding {
  std::vector<double> vector;
  QuerySource source = QuerySource::mean_of_filtered_tokens;
};

struct ScoredDetection {
  Detection detection;
  double score = 0;
};

/// Element-wise mean of the filtered tokens' embeddings.
QueryEmbedding query_from_tokens(std::span<const ScoredToken> tokens);

/// r_k = max(0, cos(embedding_k, query)) * confidence_k.
std::vector<ScoredDetection> score_detections(std::span<const Detection> dets,
                                              const QueryEmbedding& query);

/// Box projection of the scores onto the grid, min-max normalized. No
/// detections gives an all-zero map.
Heatmap build_detection_heatmap(std::span<const ScoredDetection> scored, const PatchGrid& grid);

}  // namespace groundfuse
