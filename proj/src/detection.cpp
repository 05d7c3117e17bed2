#include "groundfuse/detection.hpp"

#include <algorithm>

namespace groundfuse {

QueryEmbedding query_from_tokens(std::span<const ScoredToken> tokens) {
  if (tokens.empty()) throw InvalidInput("query embedding: no filtered tokens");
  const std::size_t dim = tokens.front().token.embedding.size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& t : tokens) {
    if (t.token.embedding.size() != dim) throw InvalidInput("query embedding: token dimensions differ");
    for (std::size_t i = 0; i < dim; ++i) mean[i] += t.token.embedding[i];
  }
  for (double& v : mean) v /= static_cast<double>(tokens.size());
  return {std::move(mean), QuerySource::mean_of_filtered_tokens};
}

std::vector<ScoredDetection> score_detections(std::span<const Detection> dets,
                                              const QueryEmbedding& query) {
  std::vector<ScoredDetection> out;
  out.reserve(dets.size());
  for (const auto& d : dets) {
    if (d.embedding.size() != query.vector.size()) {
      throw InvalidInput("detection '" + d.text + "': embedding dimension " +
                         std::to_string(d.embedding.size()) + " does not match query dimension " +
                         std::to_string(query.vector.size()));
    }
    const double r = cosine(d.embedding, query.vector) * d.confidence;
    out.push_back({d, std::max(0.0, r)});
  }
  return out;
}

Heatmap build_detection_heatmap(std::span<const ScoredDetection> scored, const PatchGrid& grid) {
  std::vector<ScoredBox> boxes;
  boxes.reserve(scored.size());
  for (const auto& s : scored) boxes.push_back({s.detection.bbox, s.score});
  return minmax_normalize(project_boxes(boxes, grid));
}

}  // namespace groundfuse
