#pragma once

#include <cstddef>

namespace groundfuse {

enum class QuerySource { mean_of_filtered_tokens, whole_instruction };

/// Pipeline hyperparameters. Defaults are the published settings.
struct FusionConfig {
  double tau_v = 0.5;        // token-visibility threshold
  std::size_t k_token = 1;
  std::size_t k_head = 6;
  double q_attn = 0.80;
  double q_ocr = 0.90;
  double q_cap = 0.75;
  double peak_floor = 0.35;  // lower bound on every peak threshold
  double alpha = 10.0;
  double beta = 2.0;
  double epsilon = 1e-6;
  double lambda = 0.5;
  QuerySource query_embedding_mode = QuerySource::mean_of_filtered_tokens;
  bool renormalize_consensus = false;  // min-max the consensus map before averaging

  /// Throws InvalidInput when a field is out of range.
  void validate() const;
};

}  // namespace groundfuse
