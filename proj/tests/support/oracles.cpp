#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>

namespace oracle {

using namespace groundfuse;

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> minmax(const std::vector<double>& v) {
  const double lo = *std::min_element(v.begin(), v.end());
  const double hi = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size(), 0.0);
  if (hi == lo) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / (hi - lo);
  return out;
}

double nearest_rank(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = std::ceil(q * static_cast<double>(v.size()));
  long idx = static_cast<long>(pos) - 1;
  idx = std::clamp(idx, 0L, static_cast<long>(v.size()) - 1);
  return v[static_cast<std::size_t>(idx)];
}

std::vector<int> bfs_labels(const std::vector<double>& values, std::size_t rows, std::size_t cols) {
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  std::vector<int> labels(values.size(), -1);
  int next = 0;
  for (std::size_t start = 0; start < values.size(); ++start) {
    if (labels[start] != -1 || !(values[start] > mean)) continue;
    std::deque<std::size_t> queue{start};
    labels[start] = next;
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      const std::size_t r = i / cols, c = i % cols;
      std::vector<std::size_t> nb;
      if (r > 0) nb.push_back(i - cols);
      if (r + 1 < rows) nb.push_back(i + cols);
      if (c > 0) nb.push_back(i - 1);
      if (c + 1 < cols) nb.push_back(i + 1);
      for (std::size_t n : nb) {
        if (labels[n] == -1 && values[n] > mean) {
          labels[n] = next;
          queue.push_back(n);
        }
      }
    }
    ++next;
  }
  return labels;
}

std::vector<int> canonical(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out(labels.size(), -1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    auto it = remap.emplace(labels[i], static_cast<int>(remap.size())).first;
    out[i] = it->second;
  }
  return out;
}

double entropy(const std::vector<double>& values, const std::vector<int>& labels) {
  std::map<int, double> mass;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (labels[i] >= 0) mass[labels[i]] += values[i];
  double total = 0;
  for (const auto& [k, m] : mass) total += m;
  if (mass.empty() || !(total > 0)) return std::numeric_limits<double>::infinity();
  double h = 0;
  for (const auto& [k, m] : mass) {
    if (m > 0) h -= (m / total) * std::log(m / total);
  }
  return h;
}

std::vector<double> raster_project(const std::vector<std::pair<BBox, double>>& boxes, const PatchGrid& g) {
  const int W = g.image_w(), H = g.image_h();
  std::vector<double> out(g.rows() * g.cols(), 0.0);
  const double cw = static_cast<double>(W) / static_cast<double>(g.cols());
  const double ch = static_cast<double>(H) / static_cast<double>(g.rows());
  for (const auto& [b, score] : boxes) {
    std::vector<char> painted(static_cast<std::size_t>(W) * static_cast<std::size_t>(H), 0);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (b.x <= x && x + 1 <= b.x + b.w && b.y <= y && y + 1 <= b.y + b.h) painted[y * W + x] = 1;
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) {
        bool hit = false;
        const int x0 = static_cast<int>(std::lround(c * cw)), x1 = static_cast<int>(std::lround((c + 1) * cw));
        const int y0 = static_cast<int>(std::lround(r * ch)), y1 = static_cast<int>(std::lround((r + 1) * ch));
        for (int y = y0; y < y1 && !hit; ++y)
          for (int x = x0; x < x1 && !hit; ++x) hit = painted[y * W + x] != 0;
        if (hit) out[r * g.cols() + c] += score;
      }
    }
  }
  return out;
}

double token_relevance(const std::vector<double>& tok, const std::vector<std::vector<double>>& patches, double tau) {
  double s = 0;
  for (const auto& p : patches) {
    const double c = cosine(tok, p);
    if (c > tau) s += c;
  }
  return s;
}

double peak_confidence(double own, double other1, double other2, double alpha, double beta, double eps) {
  return sigmoid(alpha * (other1 + other2) / (own + eps) - beta);
}

double peak_weight(double conf, double lambda) { return 1 + lambda * (2 * conf - 1); }

std::vector<double> single_peak(const Triple& t, const FusionConfig& cfg) {
  const std::vector<double>* m[3] = {&t.a, &t.o, &t.c};
  const double q[3] = {cfg.q_attn, cfg.q_ocr, cfg.q_cap};
  std::vector<double> out(t.a.size(), 0.0);
  for (std::size_t j = 0; j < out.size(); ++j) {
    for (int s = 0; s < 3; ++s) {
      const double tau = std::max(nearest_rank(*m[s], q[s]), cfg.peak_floor);
      const double v = (*m[s])[j];
      if (!(v > tau)) continue;
      const double conf = peak_confidence(v, (*m[(s + 1) % 3])[j], (*m[(s + 2) % 3])[j], cfg.alpha, cfg.beta, cfg.epsilon);
      out[j] += peak_weight(conf, cfg.lambda) * v;
    }
  }
  return out;
}

std::vector<double> consensus(const Triple& t) {
  std::vector<double> out(t.a.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = t.a[j] * t.o[j] * t.c[j];
  return out;
}

std::vector<double> fuse(const Triple& t, const FusionConfig& cfg) {
  std::vector<double> cons = consensus(t);
  if (cfg.renormalize_consensus) cons = minmax(cons);
  const std::vector<double> single = single_peak(t, cfg);
  std::vector<double> out(cons.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (cons[j] + single[j]) / 2;
  return minmax(out);
}

std::vector<double> fuse_weighted(const Triple& t, double wa, double wo, double wc) {
  std::vector<double> out(t.a.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (wa * t.a[j] + wo * t.o[j] + wc * t.c[j]) / (wa + wo + wc);
  return minmax(out);
}

std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

namespace {

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

std::vector<double> detection_map(const std::vector<Detection>& dets, const std::vector<double>& query, const PatchGrid& g) {
  std::vector<std::pair<BBox, double>> boxes;
  for (const auto& d : dets) boxes.push_back({d.bbox, std::max(0.0, cosine(d.embedding, query) * d.confidence)});
  return minmax(raster_project(boxes, g));
}

}  // namespace

PipelineTrace pipeline(const ModalityBundle& b, const FusionConfig& cfg) {
  PipelineTrace tr;
  const PatchGrid& g = b.grid;
  const std::size_t P = g.rows() * g.cols();
  std::vector<std::vector<double>> patches;
  for (std::size_t j = 0; j < P; ++j) patches.push_back(to_vec(b.patches->row(j)));
  for (const auto& t : b.tokens) tr.token_scores.push_back(token_relevance(t.embedding, patches, cfg.tau_v));
  for (std::size_t i = 1; i < tr.token_scores.size(); ++i)
    if (tr.token_scores[i] > tr.token_scores[tr.token]) tr.token = i;

  const AttentionStack& st = *b.attention;
  const std::size_t q = b.tokens[tr.token].token_id;
  const std::size_t nheads = st.layers() * st.heads();
  std::vector<std::vector<double>> slices;
  for (std::size_t lh = 0; lh < nheads; ++lh) {
    std::vector<double> s(P);
    for (std::size_t j = 0; j < P; ++j) s[j] = st.tensor()[(lh * st.tokens() + q) * P + j];
    tr.head_entropy.push_back(entropy(s, bfs_labels(s, g.rows(), g.cols())));
    slices.push_back(std::move(s));
  }
  std::vector<std::size_t> order(nheads);
  for (std::size_t i = 0; i < nheads; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return tr.head_entropy[x] < tr.head_entropy[y]; });
  order.resize(std::min(order.size(), cfg.k_head));
  tr.heads = order;

  std::vector<double> w;
  bool any_finite = false;
  for (std::size_t h : order) any_finite = any_finite || std::isfinite(tr.head_entropy[h]);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t h : order) best = std::min(best, tr.head_entropy[h]);
  double z = 0;
  for (std::size_t h : order) {
    double e = 0;
    if (!any_finite) e = 1;
    else if (std::isfinite(tr.head_entropy[h])) e = std::exp(-(tr.head_entropy[h] - best));
    w.push_back(e);
    z += e;
  }
  std::vector<double> acc(P, 0.0);
  for (std::size_t k = 0; k < order.size(); ++k)
    for (std::size_t j = 0; j < P; ++j) acc[j] += (w[k] / z) * slices[order[k]][j];
  tr.attn = minmax(acc);

  const std::vector<double>& query = b.tokens[tr.token].embedding;
  tr.ocr = detection_map(b.ocr, query, g);
  tr.cap = detection_map(b.captions, query, g);
  tr.fused = fuse({tr.attn, tr.ocr, tr.cap}, cfg);
  const std::size_t best_cell = argmax(tr.fused);
  const std::size_t r = best_cell / g.cols(), c = best_cell % g.cols();
  tr.point = {(static_cast<double>(c) + 0.5) * g.image_w() / static_cast<double>(g.cols()),
              (static_cast<double>(r) + 0.5) * g.image_h() / static_cast<double>(g.rows())};
  return tr;
}

ModalityBundle golden_bundle() {
  const PatchGrid g(4, 4, 40, 40);
  ModalityBundle b;
  b.grid = g;
  std::vector<double> patches;
  for (std::size_t j = 0; j < 16; ++j) {
    std::vector<double> v{0, 1, 0};
    if (j == 5 || j == 6) v = {1, 0, 0};
    if (j == 11) v = {0.75, 0.5, 0};
    if (j == 12) v = {0.25, 0.5, 0.5};
    patches.insert(patches.end(), v.begin(), v.end());
  }
  b.patches = PatchEmbeddings(g, 3, patches);
  b.tokens = {{0, "save", {1, 0, 0}}, {1, "the", {0, 0, 1}}};
  b.instruction_embedding = std::vector<double>{1, 0, 0.5};

  auto slice = [](std::initializer_list<std::pair<int, int>> cells, int base) {
    std::vector<double> s(16, base / 64.0);
    for (auto [j, v] : cells) s[static_cast<std::size_t>(j)] = v / 64.0;
    return s;
  };
  // [layer][head][token]
  const std::vector<std::vector<double>> slices = {
      slice({{5, 21}, {6, 21}}, 1),  // l0 h0 t0: one region
      slice({{15, 32}}, 0),          // l0 h0 t1
      slice({{5, 16}, {11, 16}}, 0), // l0 h1 t0: two equal regions
      slice({{0, 16}, {1, 16}}, 0),  // l0 h1 t1
      slice({}, 2),                  // l1 h0 t0: flat
      slice({{12, 8}}, 1),           // l1 h0 t1
      slice({{11, 24}, {0, 8}}, 0),  // l1 h1 t0: 3:1 regions
      slice({}, 1),                  // l1 h1 t1
  };
  std::vector<double> tensor;
  for (const auto& s : slices) tensor.insert(tensor.end(), s.begin(), s.end());
  b.attention = AttentionStack(2, 2, 2, g, tensor);

  b.ocr = {{{10, 10, 20, 10}, "Save", 0.75, {1, 0, 0}},
           {{30, 20, 10, 10}, "Open", 1.0, {0.75, 1, 0}},
           {{0, 0, 10, 20}, "Quit", 0.5, {-1, 0, 0}}};
  b.captions = {{{20, 10, 10, 10}, "floppy disk icon", 0.5, {0.75, 0.5, 0}},
                {{0, 30, 10, 10}, "gear icon", 0.9, {0, 1, 0}},
                {{20, 30, 20, 10}, "folder icon", 1.0, {0.5, 0.5, 0.5}}};
  return b;
}

}  // namespace oracle
