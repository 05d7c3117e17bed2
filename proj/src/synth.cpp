#include "groundfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "groundfuse/io.hpp"

namespace groundfuse {

namespace {
constexpr std::size_t kDim = 8;
constexpr int kMaxAttempts = 1000;
constexpr double kBumpSigma = 0.35;
constexpr double kClutterPerNoise = 5.0;
constexpr double kClutterLo = 0.1, kClutterHi = 0.5;
constexpr double kJunkSkew = 3.0;

using Vec = std::vector<double>;

Vec basis(std::size_t i) {
  Vec v(kDim, 0.0);
  v[i] = 1.0;
  return v;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(Vec& v) {
  const double n = std::sqrt(dot(v, v));
  for (auto& x : v) x /= n;
}

Vec quantized(Vec v) {
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  return v;
}

// Random unit vector in the span of the given basis dimensions.
Vec random_unit(Rng& rng, std::initializer_list<std::size_t> dims) {
  Vec v(kDim, 0.0);
  do {
    for (auto d : dims) v[d] = rng.normal();
  } while (dot(v, v) < 1e-12);
  normalize(v);
  return v;
}

// Random unit vector orthogonal to the unit vector q.
Vec random_orthogonal(Rng& rng, const Vec& q) {
  Vec v(kDim);
  for (;;) {
    for (auto& x : v) x = rng.normal();
    const double p = dot(v, q);
    for (std::size_t i = 0; i < kDim; ++i) v[i] -= p * q[i];
    if (dot(v, v) > 1e-6) break;
  }
  normalize(v);
  return v;
}

struct CellSpan {
  std::size_t c0, c1, r0, r1;  // inclusive
};

// Cells overlapped with positive area by a box with positive extent.
CellSpan cell_span(const PatchGrid& g, const BBox& b) {
  CellSpan s{0, 0, 0, 0};
  while (s.c0 + 1 < g.cols() && g.col_edge(s.c0 + 1) <= b.x) ++s.c0;
  s.c1 = s.c0;
  while (s.c1 + 1 < g.cols() && g.col_edge(s.c1 + 1) < b.x + b.w) ++s.c1;
  while (s.r0 + 1 < g.rows() && g.row_edge(s.r0 + 1) <= b.y) ++s.r0;
  s.r1 = s.r0;
  while (s.r1 + 1 < g.rows() && g.row_edge(s.r1 + 1) < b.y + b.h) ++s.r1;
  return s;
}

bool spans_intersect(const CellSpan& a, const CellSpan& b) {
  return a.c0 <= b.c1 && b.c0 <= a.c1 && a.r0 <= b.r1 && b.r0 <= a.r1;
}

std::optional<BBox> clip_to_view(const BBox& b, const CropSpec& v) {
  const double x0 = std::max(b.x, static_cast<double>(v.x));
  const double y0 = std::max(b.y, static_cast<double>(v.y));
  const double x1 = std::min(b.x + b.w, static_cast<double>(v.x + v.w));
  const double y1 = std::min(b.y + b.h, static_cast<double>(v.y + v.h));
  if (!(x1 > x0 && y1 > y0)) return std::nullopt;
  return BBox{x0 - v.x, y0 - v.y, x1 - x0, y1 - y0};
}

double distance_sq_axis(double c, double lo, double hi) {
  if (c < lo) return (lo - c) * (lo - c);
  if (c > hi) return (c - hi) * (c - hi);
  return 0.0;
}

// Half cell coverage, half Gaussian falloff with the distance from the cell
// centre to the box, so cells whose centre lies inside the box score highest.
Vec bump(const PatchGrid& g, const BBox& b) {
  const double cw = static_cast<double>(g.image_w()) / static_cast<double>(g.cols());
  const double ch = static_cast<double>(g.image_h()) / static_cast<double>(g.rows());
  const double sx = kBumpSigma * cw;
  const double sy = kBumpSigma * ch;
  Vec out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Cell c = g.cell(i);
    const auto r = g.cell_rect(c.row, c.col);
    const double ox = std::max(0.0, std::min(r.x1, b.x + b.w) - std::max(r.x0, b.x));
    const double oy = std::max(0.0, std::min(r.y1, b.y + b.h) - std::max(r.y0, b.y));
    const double coverage = ox * oy / ((r.x1 - r.x0) * (r.y1 - r.y0));
    const auto p = cell_center_px(g, c);
    const double dx2 = distance_sq_axis(p.x, b.x, b.x + b.w);
    const double dy2 = distance_sq_axis(p.y, b.y, b.y + b.h);
    out[i] = 0.5 * coverage + 0.5 * std::exp(-(dx2 / (2 * sx * sx) + dy2 / (2 * sy * sy)));
  }
  return out;
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

std::uint64_t view_key(const CropSpec& v) {
  std::uint64_t h = 0x9E3779B97F4A7C15ull;
  for (int x : {v.x, v.y, v.w, v.h}) h = splitmix64(h ^ static_cast<std::uint32_t>(x));
  return h;
}

}  // namespace

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t Rng::index(std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

void SceneParams::validate() const {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput(std::string(what) + " must lie in [0, 1]");
  };
  for (const auto* m : {&attention, &ocr, &caption}) {
    prob(m->hit_probability, "hit_probability");
    prob(m->dropout, "dropout");
    if (!(m->noise >= 0.0 && m->noise <= 1.0)) throw InvalidInput("noise must lie in [0, 1]");
  }
  prob(last_token_hit, "last_token_hit");
  if (rows < 1 || cols < 1) throw InvalidInput("grid needs rows, cols >= 1");
  if (image_w < static_cast<int>(2 * cols) || image_h < static_cast<int>(2 * rows)) {
    throw InvalidInput("image must be at least two pixels per cell");
  }
  if (layers < 1 || heads < 1) throw InvalidInput("layers and heads must be >= 1");
  if (tokens < 2) throw InvalidInput("tokens must be >= 2");
  if (!(min_w > 0 && min_w <= max_w && min_h > 0 && min_h <= max_h)) {
    throw InvalidInput("element size range invalid");
  }
  if (max_w > static_cast<double>(cols) || max_h > static_cast<double>(rows)) {
    throw InvalidInput("elements larger than the image");
  }
  if (target_min || target_max) {
    const double lo = target_min.value_or(min_w), hi = target_max.value_or(max_w);
    if (!(lo > 0 && lo <= hi && hi <= static_cast<double>(std::min(rows, cols)))) {
      throw InvalidInput("target size range invalid");
    }
  }
}

SceneParams SceneParams::standard() { return SceneParams{}; }

SceneParams SceneParams::small_target() {
  SceneParams p;
  p.image_w = 2560;
  p.image_h = 1440;
  p.min_w = p.min_h = 0.25;
  p.max_w = p.max_h = 0.6;
  p.snap_to_cells = false;
  return p;
}

namespace {

nlohmann::json noise_to_json(const ModalityNoise& m) {
  return {{"hit_probability", m.hit_probability}, {"noise", m.noise}, {"dropout", m.dropout}};
}

ModalityNoise noise_from_json(const nlohmann::json& j, ModalityNoise m, const std::string& where) {
  if (!j.is_object()) throw ValidationError("params_type", where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw ValidationError("params_type", where + "." + k + " must be a number");
    if (k == "hit_probability") m.hit_probability = v.get<double>();
    else if (k == "noise") m.noise = v.get<double>();
    else if (k == "dropout") m.dropout = v.get<double>();
    else throw ValidationError("unknown_field", where + "." + k);
  }
  return m;
}

}  // namespace

nlohmann::json scene_params_to_json(const SceneParams& p) {
  nlohmann::json j = {{"format_version", io::kFormatVersion},
                      {"rows", p.rows},
                      {"cols", p.cols},
                      {"image_w", p.image_w},
                      {"image_h", p.image_h},
                      {"target_kind", p.target_kind == ElementKind::text ? "text" : "icon"},
                      {"distractors", p.distractors},
                      {"attention", noise_to_json(p.attention)},
                      {"ocr", noise_to_json(p.ocr)},
                      {"caption", noise_to_json(p.caption)},
                      {"seed", p.seed},
                      {"layers", p.layers},
                      {"heads", p.heads},
                      {"tokens", p.tokens},
                      {"min_w", p.min_w},
                      {"max_w", p.max_w},
                      {"min_h", p.min_h},
                      {"max_h", p.max_h},
                      {"snap_to_cells", p.snap_to_cells},
                      {"last_token_hit", p.last_token_hit}};
  if (p.target_min) j["target_min"] = *p.target_min;
  if (p.target_max) j["target_max"] = *p.target_max;
  return j;
}

SceneParams scene_params_from_json(const nlohmann::json& doc, SceneParams p) {
  if (!doc.is_object()) throw ValidationError("params_type", "scene params must be an object");
  auto count = [](const std::string& k, const nlohmann::json& v) {
    if (!v.is_number_integer() || v.get<long long>() < 0 || v.get<long long>() > std::numeric_limits<int>::max()) {
      throw ValidationError("params_type", k + " must be a non-negative integer");
    }
    return v.get<std::size_t>();
  };
  auto num = [](const std::string& k, const nlohmann::json& v) {
    if (!v.is_number()) throw ValidationError("params_type", k + " must be a number");
    return v.get<double>();
  };
  for (const auto& [k, v] : doc.items()) {
    if (k == "format_version") {
      if (v != io::kFormatVersion) throw ValidationError("format_version_unsupported", "params: format_version must be 1");
    } else if (k == "rows") p.rows = count(k, v);
    else if (k == "cols") p.cols = count(k, v);
    else if (k == "image_w") p.image_w = static_cast<int>(count(k, v));
    else if (k == "image_h") p.image_h = static_cast<int>(count(k, v));
    else if (k == "distractors") p.distractors = count(k, v);
    else if (k == "seed") p.seed = v.is_number_unsigned() ? v.get<std::uint64_t>() : throw ValidationError("params_type", "seed must be an unsigned integer");
    else if (k == "layers") p.layers = count(k, v);
    else if (k == "heads") p.heads = count(k, v);
    else if (k == "tokens") p.tokens = count(k, v);
    else if (k == "min_w") p.min_w = num(k, v);
    else if (k == "max_w") p.max_w = num(k, v);
    else if (k == "min_h") p.min_h = num(k, v);
    else if (k == "max_h") p.max_h = num(k, v);
    else if (k == "target_min") p.target_min = num(k, v);
    else if (k == "target_max") p.target_max = num(k, v);
    else if (k == "last_token_hit") p.last_token_hit = num(k, v);
    else if (k == "attention") p.attention = noise_from_json(v, p.attention, k);
    else if (k == "ocr") p.ocr = noise_from_json(v, p.ocr, k);
    else if (k == "caption") p.caption = noise_from_json(v, p.caption, k);
    else if (k == "snap_to_cells") {
      if (!v.is_boolean()) throw ValidationError("params_type", "snap_to_cells must be a boolean");
      p.snap_to_cells = v.get<bool>();
    } else if (k == "target_kind") {
      if (v == "text") p.target_kind = ElementKind::text;
      else if (v == "icon") p.target_kind = ElementKind::icon;
      else throw ValidationError("params_type", "target_kind must be \"text\" or \"icon\"");
    } else {
      throw ValidationError("unknown_field", "params." + k);
    }
  }
  try {
    p.validate();
  } catch (const InvalidInput& e) {
    throw ValidationError("params_range", e.what());
  }
  return p;
}

PatchGrid Scene::full_grid() const {
  return PatchGrid(params_.rows, params_.cols, params_.image_w, params_.image_h);
}

Scene::Scene(const SceneParams& params) : params_(params) {
  params_.validate();
  Rng rng(split_seed(params_.seed, 0));
  const PatchGrid grid = full_grid();
  const double cw = static_cast<double>(params_.image_w) / static_cast<double>(params_.cols);
  const double ch = static_cast<double>(params_.image_h) / static_cast<double>(params_.rows);

  // Placement: boxes never share a stage-1 cell.
  std::vector<CellSpan> taken;
  const std::size_t n = 1 + params_.distractors;
  for (std::size_t e = 0; e < n; ++e) {
    double lw = params_.min_w, hw = params_.max_w, lh = params_.min_h, hh = params_.max_h;
    if (e == 0 && (params_.target_min || params_.target_max)) {
      lw = lh = params_.target_min.value_or(params_.min_w);
      hw = hh = params_.target_max.value_or(params_.max_w);
    }
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      BBox b;
      b.w = rng.uniform(lw, hw) * cw;
      b.h = rng.uniform(lh, hh) * ch;
      if (params_.snap_to_cells) {
        b.x = (static_cast<double>(rng.index(params_.cols)) + rng.uniform(0.0, 0.4)) * cw;
        b.y = (static_cast<double>(rng.index(params_.rows)) + rng.uniform(0.0, 0.4)) * ch;
      } else {
        b.x = rng.uniform(0.0, params_.image_w - b.w);
        b.y = rng.uniform(0.0, params_.image_h - b.h);
      }
      if (b.x + b.w > params_.image_w || b.y + b.h > params_.image_h) continue;
      const CellSpan s = cell_span(grid, b);
      if (std::any_of(taken.begin(), taken.end(), [&](const CellSpan& t) { return spans_intersect(s, t); })) {
        continue;
      }
      taken.push_back(s);
      elements_.push_back({b, ElementKind::text, {}});
      placed = true;
    }
    if (!placed) throw GenerationError("could not place element " + std::to_string(e) + " without overlap");
  }

  // Kinds: the hard negative shares the target's kind, the next distractor
  // has the other kind, the rest are random.
  const auto other = [](ElementKind k) { return k == ElementKind::text ? ElementKind::icon : ElementKind::text; };
  elements_[0].kind = params_.target_kind;
  for (std::size_t e = 1; e < n; ++e) {
    if (e == 1) elements_[e].kind = params_.target_kind;
    else if (e == 2) elements_[e].kind = other(params_.target_kind);
    else elements_[e].kind = rng.bernoulli(0.5) ? ElementKind::text : ElementKind::icon;
  }

  // Concepts: e0 is the instruction's meaning, e1 is background.
  query_ = basis(0);
  for (std::size_t i = 0; i < kDim; ++i) query_[i] = 0.9 * basis(0)[i] + std::sqrt(0.19) * basis(2)[i];
  elements_[0].concept_vec = query_;
  for (std::size_t e = 1; e < n; ++e) {
    const double a = rng.uniform(0.0, 0.4);
    Vec v = random_unit(rng, {3, 4, 5});
    for (std::size_t i = 0; i < kDim; ++i) v[i] = a * basis(0)[i] + std::sqrt(1 - a * a) * v[i];
    elements_[e].concept_vec = v;
  }

  // Tokens: one carries the target concept, the last one is a generic
  // summary, the rest are function words with no visual counterpart.
  const std::size_t q = params_.tokens;
  relevant_token_ = rng.index(q - 1);
  token_embeddings_.resize(q);
  token_focus_.assign(q, 0);
  auto random_distractor = [&]() -> std::size_t { return n > 1 ? 1 + rng.index(n - 1) : 0; };
  auto random_of_kind = [&](ElementKind k, std::size_t avoid) -> std::size_t {
    std::vector<std::size_t> c;
    for (std::size_t e = 1; e < n; ++e)
      if (elements_[e].kind == k && e != avoid) c.push_back(e);
    return c.empty() ? 0 : c[rng.index(c.size())];
  };

  attn_hit_ = rng.bernoulli(params_.attention.hit_probability);
  ocr_hit_ = rng.bernoulli(params_.ocr.hit_probability);
  cap_hit_ = rng.bernoulli(params_.caption.hit_probability);
  // Modalities that miss err on different elements.
  const std::size_t attn_decoy = random_distractor();
  miss_support_ = rng.uniform(0.3, 0.6);
  const std::size_t ocr_decoy = random_of_kind(ElementKind::text, attn_decoy);
  const std::size_t cap_decoy = random_of_kind(ElementKind::icon, attn_decoy);

  for (std::size_t t = 0; t < q; ++t) {
    if (t == relevant_token_) {
      token_embeddings_[t] = query_;
      token_focus_[t] = attn_hit_ ? 0 : attn_decoy;
    } else if (t == q - 1) {
      Vec v(kDim, 0.0);
      v[0] = 0.6;
      v[6] = 0.8;
      token_embeddings_[t] = v;
      token_focus_[t] = rng.bernoulli(params_.last_token_hit) ? 0 : random_distractor();
    } else {
      token_embeddings_[t] = random_unit(rng, {6, 7});
      token_focus_[t] = rng.bernoulli(0.7) && n > 1 ? 1 : random_distractor();
    }
  }

  // Heads: a handful of grounding heads in the upper half of the stack;
  // attention sinks and diffuse heads elsewhere.
  const std::size_t L = params_.layers, H = params_.heads;
  roles_.assign(L * H, HeadRole::diffuse);
  std::vector<std::size_t> upper;
  for (std::size_t l = L / 2; l < L; ++l)
    for (std::size_t h = 0; h < H; ++h) upper.push_back(l * H + h);
  shuffle(upper, rng);
  const std::size_t good = std::min(upper.size(), 6 + rng.index(3));
  for (std::size_t i = 0; i < upper.size(); ++i) {
    roles_[upper[i]] = i < good ? HeadRole::good : (rng.bernoulli(0.35) ? HeadRole::sink : HeadRole::diffuse);
  }
  for (std::size_t i = 0; i < (L / 2) * H; ++i) roles_[i] = rng.bernoulli(0.5) ? HeadRole::sink : HeadRole::diffuse;
  head_dropped_.assign(L * H, false);
  for (std::size_t i = 0; i < L * H; ++i) {
    if (roles_[i] == HeadRole::good) head_dropped_[i] = rng.bernoulli(params_.attention.dropout);
  }

  // Detection draws are fixed per scene so both zoom stages agree.
  det_.resize(n);
  for (std::size_t e = 0; e < n; ++e) {
    const bool text = elements_[e].kind == ElementKind::text;
    const ModalityNoise& m = text ? params_.ocr : params_.caption;
    const bool hit = text ? ocr_hit_ : cap_hit_;
    const std::size_t decoy = text ? ocr_decoy : cap_decoy;
    DetectionDraw& d = det_[e];
    if (e == 0) d.cosine = hit ? rng.uniform(0.85, 0.95) : rng.uniform(0.35, 0.6);
    else if (!hit && e == decoy && elements_[0].kind == elements_[e].kind) d.cosine = rng.uniform(0.85, 0.95);
    else d.cosine = (0.3 + 0.5 * m.noise) * std::pow(rng.uniform(), kJunkSkew);
    d.confidence = rng.uniform(0.8, 1.0);
    d.dropped = rng.bernoulli(m.dropout);
    d.orth = random_orthogonal(rng, query_);
  }
}

ModalityBundle Scene::render(const CropSpec& view) const {
  if (view.x < 0 || view.y < 0 || view.w < static_cast<int>(params_.cols) || view.h < static_cast<int>(params_.rows) ||
      view.x + view.w > params_.image_w || view.y + view.h > params_.image_h) {
    throw InvalidInput("view lies outside the image or is smaller than the grid");
  }
  Rng rng(split_seed(params_.seed, view_key(view)));
  const PatchGrid grid(params_.rows, params_.cols, view.w, view.h);
  const std::size_t P = grid.size(), n = elements_.size();

  std::vector<std::optional<BBox>> visible(n);
  for (std::size_t e = 0; e < n; ++e) visible[e] = clip_to_view(elements_[e].box, view);

  ModalityBundle b;
  b.grid = grid;

  // Patch embeddings: background plus the concept of every element touching
  // the cell.
  const double attn_noise = params_.attention.noise;
  std::vector<double> patch(P * kDim, 0.0);
  for (std::size_t e = 0; e < n; ++e) {
    if (!visible[e]) continue;
    const CellSpan s = cell_span(grid, *visible[e]);
    for (std::size_t r = s.r0; r <= s.r1; ++r)
      for (std::size_t c = s.c0; c <= s.c1; ++c)
        for (std::size_t i = 0; i < kDim; ++i) patch[grid.index(r, c) * kDim + i] += elements_[e].concept_vec[i];
  }
  for (std::size_t p = 0; p < P; ++p) {
    patch[p * kDim + 1] += 0.3;
    if (attn_noise > 0)
      for (std::size_t i = 1; i < 6; ++i) patch[p * kDim + i] += 0.05 * attn_noise * rng.normal();
  }
  b.patches = PatchEmbeddings(grid, kDim, quantized(std::move(patch)));

  for (std::size_t t = 0; t < token_embeddings_.size(); ++t) {
    const char* text = t == relevant_token_ ? "target" : (t + 1 == token_embeddings_.size() ? "<eos>" : "the");
    b.tokens.push_back({t, text, quantized(token_embeddings_[t])});
  }
  b.instruction_embedding = quantized(query_);

  // Attention: [layer][head][token][patch].
  std::vector<Vec> bumps(n);
  for (std::size_t e = 0; e < n; ++e)
    if (visible[e]) bumps[e] = bump(grid, *visible[e]);
  const std::size_t L = params_.layers, H = params_.heads, Q = token_embeddings_.size();
  // Clutter: elements other than the focus that every grounding head also
  // lights up for a given token.
  std::vector<Vec> clutter(Q, Vec(n, 0.0));
  const int clutter_count = static_cast<int>(std::lround(kClutterPerNoise * attn_noise));
  for (std::size_t t = 0; t < Q; ++t) {
    for (int i = 0; i < clutter_count && n > 1; ++i) {
      const std::size_t e = rng.index(n);
      if (e != token_focus_[t]) clutter[t][e] = rng.uniform(kClutterLo, kClutterHi);
    }
  }

  std::vector<double> tensor(L * H * Q * P);
  Vec slice(P);
  for (std::size_t lh = 0; lh < L * H; ++lh) {
    for (std::size_t t = 0; t < Q; ++t) {
      std::fill(slice.begin(), slice.end(), 1e-3);
      switch (roles_[lh]) {
        case HeadRole::good: {
          const std::size_t f = token_focus_[t];
          if (!head_dropped_[lh] && visible[f])
            for (std::size_t p = 0; p < P; ++p) slice[p] += bumps[f][p];
          // A missed target is still weakly attended.
          if (t == relevant_token_ && f != 0 && !head_dropped_[lh] && visible[0])
            for (std::size_t p = 0; p < P; ++p) slice[p] += miss_support_ * bumps[0][p];
          for (std::size_t e = 0; e < n; ++e) {
            if (clutter[t][e] == 0 || !visible[e]) continue;
            const double amp = clutter[t][e] * rng.uniform(0.5, 1.5);
            for (std::size_t p = 0; p < P; ++p) slice[p] += amp * bumps[e][p];
          }
          for (std::size_t p = 0; p < P; ++p) slice[p] += 0.05 * attn_noise * rng.uniform();
          break;
        }
        case HeadRole::sink: {
          slice[0] += 1.0;
          std::size_t other = 0;
          if (P > 4) {
            do {
              other = rng.index(P);
            } while (grid.cell(other).row <= 1 && grid.cell(other).col <= 1);
            slice[other] += rng.uniform(0.5, 1.0);
          }
          for (std::size_t p = 0; p < P; ++p) slice[p] += 0.02 * rng.uniform();
          break;
        }
        case HeadRole::diffuse:
          if (attn_noise > 0)
            for (std::size_t p = 0; p < P; ++p) slice[p] += rng.uniform();
          else
            for (std::size_t p = 0; p < P; ++p) slice[p] += 1.0;
          break;
      }
      double sum = 0;
      for (double v : slice) sum += v;
      const double mass = rng.uniform(0.3, 0.8);
      double* out = tensor.data() + (lh * Q + t) * P;
      for (std::size_t p = 0; p < P; ++p) out[p] = static_cast<double>(static_cast<float>(slice[p] / sum * mass));
    }
  }
  b.attention = AttentionStack(L, H, Q, grid, std::move(tensor));

  for (std::size_t e = 0; e < n; ++e) {
    if (!visible[e] || det_[e].dropped) continue;
    const DetectionDraw& d = det_[e];
    Detection det;
    det.bbox = *visible[e];
    det.text = (elements_[e].kind == ElementKind::text ? "text-" : "icon-") + std::to_string(e);
    det.confidence = d.confidence;
    det.embedding.resize(kDim);
    const double s = std::sqrt(1 - d.cosine * d.cosine);
    for (std::size_t i = 0; i < kDim; ++i) det.embedding[i] = d.cosine * query_[i] + s * d.orth[i];
    (elements_[e].kind == ElementKind::text ? b.ocr : b.captions).push_back(std::move(det));
  }
  return b;
}

Stage2Supplier Scene::stage2() const {
  return [this](const CropSpec& crop) -> std::optional<ModalityBundle> { return render(crop); };
}

std::filesystem::path write_scene_bundle(const Scene& scene, const std::filesystem::path& dir) {
  nlohmann::json extra = {{"metadata", {{"generator", "synth"}, {"params", scene_params_to_json(scene.params())}}}};
  return io::write_bundle(dir, scene.render(), extra);
}

SinglePeakFixtureSet gen_single_peak_fixtures(std::size_t n, std::uint64_t seed, const FusionConfig& cfg) {
  if (n < 1) throw InvalidInput("fixture count must be >= 1");
  cfg.validate();
  SinglePeakFixtureSet set;
  constexpr int kRetries = 100;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(split_seed(seed, i));
    bool ok = false;
    for (int attempt = 0; attempt < kRetries && !ok; ++attempt) {
      const std::size_t rows = 4 + rng.index(5), cols = 4 + rng.index(5);
      const PatchGrid grid(rows, cols, static_cast<int>(cols * 10), static_cast<int>(rows * 10));
      const std::size_t N = grid.size();
      std::vector<std::size_t> order(N);
      for (std::size_t k = 0; k < N; ++k) order[k] = k;
      shuffle(order, rng);

      const auto strong = static_cast<Modality>(rng.index(3));
      const std::size_t target = order[0], wrong = order[1];
      std::array<Vec, 3> v;
      for (auto& m : v) {
        m.resize(N);
        for (auto& x : m) x = rng.uniform(0.0, 0.1);
      }
      const double v_wrong = rng.uniform(0.8, 0.88);
      std::size_t next = 2;
      bool fits = true;
      for (int mi = 0; mi < 3; ++mi) {
        const auto m = static_cast<Modality>(mi);
        Vec& h = v[static_cast<std::size_t>(mi)];
        if (m == strong) {
          h[target] = 1.0;
          h[wrong] = rng.uniform(0.1, 0.2);
          continue;
        }
        h[target] = rng.uniform(0.2, 0.3);
        h[wrong] = v_wrong;
        // A plateau of higher cells lifts this modality's quantile above the
        // wrong cell's value.
        const auto q = modality_quantile(m, cfg);
        const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(N) - 1e-9));
        const std::size_t plateau = N - (k == 0 ? 0 : k - 1) + 1;
        if (next + plateau > N) {
          fits = false;
          break;
        }
        for (std::size_t c = 0; c < plateau; ++c) h[order[next++]] = rng.uniform(0.9, 1.0);
      }
      if (!fits) continue;

      SinglePeakFixture fx;
      fx.maps = {Heatmap(grid, v[0]), Heatmap(grid, v[1]), Heatmap(grid, v[2])};
      fx.strong = strong;
      fx.target = grid.cell(target);
      fx.wrong = grid.cell(wrong);
      const Cell cs = argmax_cell(fuse(fx.maps, cfg));
      const Cell avg = argmax_cell(fuse_average(fx.maps));
      if (!(cs == fx.target) || !(avg == fx.wrong)) continue;
      set.fixtures.push_back(std::move(fx));
      ok = true;
    }
    if (!ok) throw GenerationError("single-peak fixture " + std::to_string(i) + " exceeded its retry bound");
  }
  for (const auto& fx : set.fixtures) {
    if (argmax_cell(fuse_average(fx.maps)) == fx.target) ++set.average_hits;
  }
  return set;
}

}  // namespace groundfuse
