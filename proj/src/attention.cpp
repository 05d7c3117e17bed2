#include "groundfuse/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace groundfuse {

PatchEmbeddings::PatchEmbeddings(const PatchGrid& grid, std::size_t dim, std::vector<double> data)
    : grid_(grid), dim_(dim), data_(std::move(data)) {
  if (dim_ == 0) throw InvalidInput("patch embedding dimension must be positive");
  if (data_.size() != grid_.size() * dim_) {
    throw InvalidInput("patch embeddings: expected " + std::to_string(grid_.size()) + " rows of " +
                       std::to_string(dim_));
  }
}

AttentionStack::AttentionStack(std::size_t layers, std::size_t heads, std::size_t tokens,
                               const PatchGrid& grid, std::vector<double> tensor)
    : layers_(layers), heads_(heads), tokens_(tokens), grid_(grid), tensor_(std::move(tensor)) {
  if (layers_ == 0 || heads_ == 0 || tokens_ == 0) throw InvalidInput("empty attention stack");
  if (tensor_.size() != layers_ * heads_ * tokens_ * grid_.size()) {
    throw InvalidInput("attention tensor size does not match L*H*Q*patches");
  }
}

std::span<const double> AttentionStack::slice(std::size_t layer, std::size_t head,
                                              std::size_t token) const {
  if (layer >= layers_ || head >= heads_ || token >= tokens_) {
    throw InvalidInput("attention slice index out of range");
  }
  const std::size_t p = grid_.size();
  return {tensor_.data() + ((layer * heads_ + head) * tokens_ + token) * p, p};
}

Heatmap AttentionStack::slice_map(std::size_t layer, std::size_t head, std::size_t token) const {
  auto s = slice(layer, head, token);
  return Heatmap(grid_, std::vector<double>(s.begin(), s.end()));
}

double token_relevance(const TokenRecord& tok, const PatchEmbeddings& patches, double tau_v) {
  if (tok.embedding.size() != patches.dim()) {
    throw InvalidInput("token '" + tok.text + "': embedding dimension " +
                       std::to_string(tok.embedding.size()) + " does not match patch dimension " +
                       std::to_string(patches.dim()));
  }
  double score = 0.0;
  for (std::size_t j = 0; j < patches.grid().size(); ++j) {
    const double c = cosine(tok.embedding, patches.row(j));
    if (c > tau_v) score += c;
  }
  return score;
}

std::vector<ScoredToken> select_tokens(std::span<const TokenRecord> tokens,
                                       const PatchEmbeddings& patches, double tau_v, std::size_t k) {
  if (tokens.empty()) throw InvalidInput("select_tokens: empty token list");
  if (k < 1) throw InvalidInput("select_tokens: k must be at least 1");
  std::vector<ScoredToken> scored;
  scored.reserve(tokens.size());
  for (const auto& t : tokens) scored.push_back({t, token_relevance(t, patches, tau_v)});
  std::stable_sort(scored.begin(), scored.end(), [](const ScoredToken& a, const ScoredToken& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.token.token_id < b.token.token_id;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

namespace {

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    std::size_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {  // path compression
      std::size_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

}  // namespace

RegionLabeling connected_regions(const Heatmap& h) {
  const PatchGrid& g = h.grid();
  const std::size_t n = h.size();
  RegionLabeling out{g, std::vector<int>(n, -1), 0};
  if (n == 0) return out;

  double sum = 0.0;
  for (double v : h.values()) sum += v;
  const double mean = sum / static_cast<double>(n);

  std::vector<char> fg(n);
  for (std::size_t i = 0; i < n; ++i) fg[i] = h[i] > mean;

  UnionFind uf(n);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) {
      const std::size_t i = g.index(r, c);
      if (!fg[i]) continue;
      if (c > 0 && fg[i - 1]) uf.unite(i, i - 1);
      if (r > 0 && fg[i - g.cols()]) uf.unite(i, i - g.cols());
    }
  }

  std::vector<int> root_label(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!fg[i]) continue;
    const std::size_t root = uf.find(i);
    if (root_label[root] < 0) root_label[root] = next++;
    out.labels[i] = root_label[root];
  }
  out.region_count = static_cast<std::size_t>(next);
  return out;
}

double spatial_entropy(const Heatmap& attn, const RegionLabeling& regions) {
  if (!(attn.grid() == regions.grid) || regions.labels.size() != attn.size()) {
    throw InvalidInput("spatial_entropy: labeling does not match the heatmap grid");
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (regions.region_count == 0) return inf;
  std::vector<double> mass(regions.region_count, 0.0);
  for (std::size_t i = 0; i < attn.size(); ++i) {
    if (regions.labels[i] >= 0) mass[static_cast<std::size_t>(regions.labels[i])] += attn[i];
  }
  double total = 0.0;
  for (double m : mass) total += m;
  if (!(total > 0.0)) return inf;
  double entropy = 0.0;
  for (double m : mass) {
    if (m <= 0.0) continue;
    const double r = m / total;
    entropy -= r * std::log(r);
  }
  return entropy + 0.0;  // no negative zero
}

std::vector<HeadScore> head_entropies(const AttentionStack& stack, std::size_t token_id) {
  if (token_id >= stack.tokens()) throw InvalidInput("head_entropies: token id out of range");
  const std::size_t heads = stack.heads();
  const auto total = static_cast<std::ptrdiff_t>(stack.layers() * heads);
  std::vector<HeadScore> scores(static_cast<std::size_t>(total));
#pragma omp parallel for schedule(dynamic, 1) if (total > 4)
  for (std::ptrdiff_t i = 0; i < total; ++i) {
    const std::size_t l = static_cast<std::size_t>(i) / heads, h = static_cast<std::size_t>(i) % heads;
    const Heatmap m = stack.slice_map(l, h, token_id);
    scores[static_cast<std::size_t>(i)] = {l, h, spatial_entropy(m, connected_regions(m))};
  }
  return scores;
}

std::vector<HeadScore> lowest_entropy_heads(std::vector<HeadScore> scores, std::size_t k) {
  std::sort(scores.begin(), scores.end(), [](const HeadScore& a, const HeadScore& b) {
    if (a.entropy != b.entropy) return a.entropy < b.entropy;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.head < b.head;
  });
  if (scores.size() > k) scores.resize(k);
  return scores;
}

std::vector<HeadScore> select_heads(const AttentionStack& stack, std::size_t token_id, std::size_t k) {
  if (k < 1) throw InvalidInput("select_heads: k must be at least 1");
  return lowest_entropy_heads(head_entropies(stack, token_id), k);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> w(logits.size(), 0.0);
  if (logits.empty()) return w;
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  if (mx == -std::numeric_limits<double>::infinity()) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
    return w;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp(logits[i] - mx);
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

namespace {

Heatmap weighted_sum(const AttentionStack& stack, std::span<const ScoredToken> tokens,
                     std::span<const TokenHeads> heads, std::span<const double> token_w,
                     std::span<const std::vector<double>> head_w) {
  std::vector<double> acc(stack.grid().size(), 0.0);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::size_t q = tokens[t].token.token_id;
    for (std::size_t k = 0; k < heads[t].heads.size(); ++k) {
      const double w = token_w[t] * head_w[t][k];
      if (w == 0.0) continue;
      auto s = stack.slice(heads[t].heads[k].layer, heads[t].heads[k].head, q);
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w * s[j];
    }
  }
  return minmax_normalize(Heatmap(stack.grid(), std::move(acc)));
}

std::vector<double> uniform(std::size_t n) {
  return std::vector<double>(n, n ? 1.0 / static_cast<double>(n) : 0.0);
}

}  // namespace

Heatmap aggregate_attention(const AttentionStack& stack, std::span<const ScoredToken> tokens,
                            std::span<const TokenHeads> per_token_heads) {
  if (tokens.empty()) throw InvalidInput("aggregate_attention: no tokens selected");
  if (per_token_heads.size() != tokens.size()) {
    throw InvalidInput("aggregate_attention: need one head set per selected token");
  }
  std::vector<double> scores;
  for (const auto& t : tokens) scores.push_back(t.score);
  const auto token_w = softmax(scores);
  std::vector<std::vector<double>> head_w;
  for (const auto& th : per_token_heads) {
    if (th.heads.empty()) throw InvalidInput("aggregate_attention: empty head set");
    std::vector<double> neg;
    for (const auto& h : th.heads) neg.push_back(-h.entropy);
    head_w.push_back(softmax(neg));
  }
  return weighted_sum(stack, tokens, per_token_heads, token_w, head_w);
}

AttentionExtraction extract_attention(const AttentionStack& stack,
                                      std::span<const TokenRecord> tokens,
                                      const PatchEmbeddings& patches, const FusionConfig& cfg,
                                      AttentionOptions opt) {
  if (tokens.empty()) throw InvalidInput("extract_attention: no tokens");
  for (const auto& t : tokens) {
    if (t.token_id >= stack.tokens()) {
      throw InvalidInput("token id " + std::to_string(t.token_id) + " has no attention slice");
    }
  }
  AttentionExtraction out;
  switch (opt.tokens) {
    case TokenStrategy::top:
      out.tokens = select_tokens(tokens, patches, cfg.tau_v, cfg.k_token);
      break;
    case TokenStrategy::all:
      for (const auto& t : tokens) out.tokens.push_back({t, token_relevance(t, patches, cfg.tau_v)});
      break;
    case TokenStrategy::last: {
      auto last = std::max_element(tokens.begin(), tokens.end(),
                                   [](const auto& a, const auto& b) { return a.token_id < b.token_id; });
      out.tokens.push_back({*last, token_relevance(*last, patches, cfg.tau_v)});
      break;
    }
  }

  for (const auto& st : out.tokens) {
    TokenHeads th{st.token.token_id, {}};
    auto all = head_entropies(stack, st.token.token_id);
    switch (opt.heads) {
      case HeadStrategy::top:
        th.heads = lowest_entropy_heads(std::move(all), cfg.k_head);
        break;
      case HeadStrategy::all:
        th.heads = std::move(all);
        break;
      case HeadStrategy::range:
        for (const auto& h : all) {
          if (h.layer >= stack.layers() / 2) th.heads.push_back(h);
        }
        break;
    }
    out.heads.push_back(std::move(th));
  }

  if (opt.tokens == TokenStrategy::top) {
    std::vector<double> s;
    for (const auto& t : out.tokens) s.push_back(t.score);
    out.token_weights = softmax(s);
  } else {
    out.token_weights = uniform(out.tokens.size());
  }
  for (const auto& th : out.heads) {
    if (opt.heads == HeadStrategy::top) {
      std::vector<double> neg;
      for (const auto& h : th.heads) neg.push_back(-h.entropy);
      out.head_weights.push_back(softmax(neg));
    } else {
      out.head_weights.push_back(uniform(th.heads.size()));
    }
  }
  out.map = weighted_sum(stack, out.tokens, out.heads, out.token_weights, out.head_weights);
  return out;
}

}  // namespace groundfuse
