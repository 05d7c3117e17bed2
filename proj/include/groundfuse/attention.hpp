#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "groundfuse/config.hpp"
#include "groundfuse/grid.hpp"

namespace groundfuse {

struct TokenRecord {
  std::size_t token_id = 0;
  std::string text;
  std::vector<double> embedding;
};

/// One embedding row per patch, row-major over the grid.
class PatchEmbeddings {
 public:
  PatchEmbeddings() = default;
  PatchEmbeddings(const PatchGrid& grid, std::size_t dim, std::vector<double> data);

  const PatchGrid& grid() const noexcept { return grid_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> row(std::size_t patch) const noexcept {
    return {data_.data() + patch * dim_, dim_};
  }
  std::span<const double> data() const noexcept { return data_; }

 private:
  PatchGrid grid_;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

/// Patch-restricted attention, indexed [layer][head][token][patch].
class AttentionStack {
 public:
  AttentionStack() = default;
  AttentionStack(std::size_t layers, std::size_t heads, std::size_t tokens, const PatchGrid& grid,
                 std::vector<double> tensor);

  std::size_t layers() const noexcept { return layers_; }
  std::size_t heads() const noexcept { return heads_; }
  std::size_t tokens() const noexcept { return tokens_; }
  const PatchGrid& grid() const noexcept { return grid_; }
  std::span<const double> tensor() const noexcept { return tensor_; }

  std::span<const double> slice(std::size_t layer, std::size_t head, std::size_t token) const;
  Heatmap slice_map(std::size_t layer, std::size_t head, std::size_t token) const;

 private:
  std::size_t layers_ = 0, heads_ = 0, tokens_ = 0;
  PatchGrid grid_;
  std::vector<double> tensor_;
};

/// Connected foreground components; -1 marks background cells.
struct RegionLabeling {
  PatchGrid grid;
  std::vector<int> labels;
  std::size_t region_count = 0;
};

struct HeadScore {
  std::size_t layer = 0;
  std::size_t head = 0;
  double entropy = 0;
};

struct TokenHeads {
  std::size_t token_id = 0;
  std::vector<HeadScore> heads;  // ascending entropy
};

struct ScoredToken {
  TokenRecord token;
  double score = 0;
};

/// Thresholded sum of token/patch cosines: sum of cos over patches with
/// cos > tau_v (strict).
double token_relevance(const TokenRecord& tok, const PatchEmbeddings& patches, double tau_v);

/// Top-k tokens by relevance, descending; ties go to the lower token id.
std::vector<ScoredToken> select_tokens(std::span<const TokenRecord> tokens,
                                       const PatchEmbeddings& patches, double tau_v, std::size_t k);

/// Cells strictly above the map mean, grouped into maximal 4-connected
/// components by union-find. Labels are assigned in row-major order of each
/// component's first cell.
RegionLabeling connected_regions(const Heatmap& h);

/// Entropy (natural log) of the attention mass distribution over regions.
/// Returns +infinity when there are no regions or no regional mass.
double spatial_entropy(const Heatmap& attn, const RegionLabeling& regions);

/// Spatial entropy of every (layer, head) slice for one token, in
/// layer-major order. OpenMP-parallel over heads.
std::vector<HeadScore> head_entropies(const AttentionStack& stack, std::size_t token_id);

/// Orders scores by (entropy, layer, head) and keeps the first k. Infinite
/// entropies sort last, so they are used only when too few finite ones exist.
std::vector<HeadScore> lowest_entropy_heads(std::vector<HeadScore> scores, std::size_t k);

std::vector<HeadScore> select_heads(const AttentionStack& stack, std::size_t token_id, std::size_t k);

/// Max-subtracted softmax. -inf entries get weight 0; if every entry is -inf
/// the weights are uniform.
std::vector<double> softmax(std::span<const double> logits);

/// Softmax(relevance)-weighted sum over tokens of softmax(-entropy)-weighted
/// sums over each token's heads, then min-max normalized.
Heatmap aggregate_attention(const AttentionStack& stack, std::span<const ScoredToken> tokens,
                            std::span<const TokenHeads> per_token_heads);

/// Selection strategies compared in the ablation harness.
enum class TokenStrategy { all, last, top };
enum class HeadStrategy { all, range, top };

struct AttentionOptions {
  TokenStrategy tokens = TokenStrategy::top;
  HeadStrategy heads = HeadStrategy::top;
};

struct AttentionExtraction {
  Heatmap map;
  std::vector<ScoredToken> tokens;
  std::vector<TokenHeads> heads;
  std::vector<double> token_weights;
  std::vector<std::vector<double>> head_weights;
};

/// Full token filter -> head filter -> weighted aggregation. The `all`/`last`
/// token strategies and `all`/`range` head strategies weight uniformly;
/// `range` keeps layers [L/2, L).
AttentionExtraction extract_attention(const AttentionStack& stack,
                                      std::span<const TokenRecord> tokens,
                                      const PatchEmbeddings& patches, const FusionConfig& cfg,
                                      AttentionOptions opt = {});

}  // namespace groundfuse
