#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "groundfuse/fusion.hpp"
#include "groundfuse/synth.hpp"
#include "oracles.hpp"

using namespace groundfuse;

namespace {

std::vector<double> vec(const Heatmap& h) { return {h.values().begin(), h.values().end()}; }

// Maps with a mix of exact zeros, flat plateaus and spread values so every
// branch of the peak threshold is exercised.
std::vector<double> random_normalized(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  const int style = static_cast<int>(rng.index(3));
  for (auto& x : v) {
    if (style == 0) x = rng.uniform();
    else if (style == 1) x = rng.bernoulli(0.8) ? 0.0 : rng.uniform();
    else x = rng.bernoulli(0.5) ? 0.3 : rng.uniform(0.3, 1.0);
  }
  return oracle::minmax(v);
}

oracle::Triple random_triple(Rng& rng, std::size_t n) {
  return {random_normalized(rng, n), random_normalized(rng, n), random_normalized(rng, n)};
}

ModalityMaps to_maps(const oracle::Triple& t, const PatchGrid& g) {
  return {Heatmap(g, t.a), Heatmap(g, t.o), Heatmap(g, t.c)};
}

}  // namespace

TEST_CASE("consensus map") {
  const PatchGrid g(1, 3, 3, 3);
  const Heatmap c = consensus_map(Heatmap(g, {0.5, 0, 1}), Heatmap(g, {0.5, 1, 1}), Heatmap(g, {0.5, 1, 0.2}));
  CHECK(c[0] == 0.125);
  CHECK(c[1] == 0.0);
  CHECK(c[2] == 0.2);
  CHECK_THROWS_AS(consensus_map(Heatmap(g), Heatmap(PatchGrid(3, 1, 3, 3)), Heatmap(g)), InvalidInput);

  Rng rng(30);
  const PatchGrid g8(8, 8, 8, 8);
  for (int t = 0; t < 100; ++t) {
    const auto tr = random_triple(rng, g8.size());
    const Heatmap m = consensus_map(Heatmap(g8, tr.a), Heatmap(g8, tr.o), Heatmap(g8, tr.c));
    const auto o = oracle::consensus(tr);
    for (std::size_t j = 0; j < m.size(); ++j) {
      CHECK(std::abs(m[j] - o[j]) <= 1e-15);
      CHECK(m[j] <= std::min({tr.a[j], tr.o[j], tr.c[j]}));
    }
  }
}

TEST_CASE("peak sets") {
  const PatchGrid g(2, 2, 2, 2);
  const PeakSet empty = peak_set(Heatmap(g), Modality::ocr, 0.9, 0.35);
  CHECK(empty.cells.empty());
  CHECK(empty.threshold_used == 0.35);
  const PatchGrid g4(4, 4, 4, 4);
  std::vector<double> spike(16, 0.0);
  spike[9] = 1.0;
  const PeakSet lone = peak_set(Heatmap(g4, spike), Modality::ocr, 0.9, 0.35);
  REQUIRE(lone.cells.size() == 1);
  CHECK(lone.cells[0] == Cell{2, 1});
  // on four cells the nearest-rank 0.9 quantile is the maximum itself
  CHECK(peak_set(Heatmap(g, {0, 0, 1, 0}), Modality::ocr, 0.9, 0.35).cells.empty());

  Rng rng(31);
  const PatchGrid g10(10, 10, 10, 10);
  for (int t = 0; t < 100; ++t) {
    const auto v = random_normalized(rng, g10.size());
    const PeakSet p = peak_set(Heatmap(g10, v), Modality::attn, 0.8, 0.35);
    const double tau = std::max(oracle::nearest_rank(v, 0.8), 0.35);
    CHECK(p.threshold_used == tau);
    std::vector<std::size_t> expect;
    for (std::size_t j = 0; j < v.size(); ++j)
      if (v[j] > tau) expect.push_back(j);
    REQUIRE(p.cells.size() == expect.size());
    for (std::size_t k = 0; k < expect.size(); ++k) {
      CHECK(g10.index(p.cells[k].row, p.cells[k].col) == expect[k]);
      CHECK(v[expect[k]] > p.threshold_used);
    }
  }
}

TEST_CASE("peak confidence and weight") {
  const PatchGrid g(1, 1, 1, 1);
  FusionConfig cfg;
  // ratio 0.2 gives sigma(0)
  const ModalityMaps mid{Heatmap(g, {1.0 - 1e-6}), Heatmap(g, {0.1}), Heatmap(g, {0.1})};
  CHECK(peak_confidence(Modality::attn, 0, mid, cfg) == doctest::Approx(0.5).epsilon(1e-12));
  const ModalityMaps lone{Heatmap(g, {1.0}), Heatmap(g, {0.0}), Heatmap(g, {0.0})};
  CHECK(std::abs(peak_confidence(Modality::attn, 0, lone, cfg) - 0.119203) < 1e-6);
  CHECK(peak_confidence(Modality::attn, 0, lone, cfg) == 1.0 / (1.0 + std::exp(2.0)));
  const ModalityMaps strong{Heatmap(g, {0.5}), Heatmap(g, {0.4}), Heatmap(g, {0.3})};
  CHECK(std::abs(peak_confidence(Modality::attn, 0, strong, cfg) - 0.9999939) < 1e-7);
  CHECK_THROWS_AS(peak_confidence(Modality::attn, 1, lone, cfg), InvalidInput);

  CHECK(peak_weight(0.5, 0.5) == 1.0);
  CHECK(peak_weight(1.0, 0.5) == 1.5);
  CHECK(peak_weight(0.0, 0.5) == 0.5);

  Rng rng(32);
  for (int t = 0; t < 1000; ++t) {
    const double lambda = rng.uniform(0, 1);
    const double w = peak_weight(rng.uniform(), lambda);
    CHECK(w >= 1 - lambda);
    CHECK(w <= 1 + lambda);
  }
  // monotone in support and in own value
  for (int t = 0; t < 1000; ++t) {
    const double own = rng.uniform(0.01, 1), o1 = rng.uniform(0, 0.5), o2 = rng.uniform(0, 0.5);
    const double d = rng.uniform(0, 0.5);
    const ModalityMaps base{Heatmap(g, {own}), Heatmap(g, {o1}), Heatmap(g, {o2})};
    const ModalityMaps more{Heatmap(g, {own}), Heatmap(g, {o1 + d}), Heatmap(g, {o2})};
    const ModalityMaps higher{Heatmap(g, {std::min(1.0, own + d)}), Heatmap(g, {o1}), Heatmap(g, {o2})};
    const double c = peak_confidence(Modality::attn, 0, base, cfg);
    CHECK(peak_confidence(Modality::attn, 0, more, cfg) >= c);
    if (o1 + o2 > 0) CHECK(peak_confidence(Modality::attn, 0, higher, cfg) <= c);
    CHECK(std::abs(c - oracle::peak_confidence(own, o1, o2, cfg.alpha, cfg.beta, cfg.epsilon)) <= 1e-12);
  }
}

TEST_CASE("single-peak map") {
  FusionConfig cfg;
  const PatchGrid g(3, 3, 3, 3);
  const ModalityMaps zero{Heatmap(g), Heatmap(g), Heatmap(g)};
  const Heatmap zs = single_peak_map(zero, cfg);
  for (double v : zs.values()) CHECK(v == 0.0);

  std::vector<double> a(9, 0.0);
  a[4] = 1.0;
  const ModalityMaps lone{Heatmap(g, a), Heatmap(g), Heatmap(g)};
  const Heatmap s = single_peak_map(lone, cfg);
  CHECK(std::abs(s[4] - 0.619203) < 1e-6);
  for (std::size_t j = 0; j < 9; ++j)
    if (j != 4) CHECK(s[j] == 0.0);

  CHECK_THROWS_AS(single_peak_map({Heatmap(g), Heatmap(PatchGrid(1, 9, 9, 1)), Heatmap(g)}, cfg), InvalidInput);

  Rng rng(33);
  const PatchGrid g8(8, 8, 8, 8);
  for (int t = 0; t < 250; ++t) {
    FusionConfig c = cfg;
    c.lambda = rng.uniform(0, 1);
    c.alpha = rng.uniform(1, 20);
    c.beta = rng.uniform(0, 4);
    const auto tr = random_triple(rng, g8.size());
    const Heatmap m = single_peak_map(to_maps(tr, g8), c);
    const auto o = oracle::single_peak(tr, c);
    for (std::size_t j = 0; j < m.size(); ++j) CHECK(std::abs(m[j] - o[j]) <= 1e-9);

    c.lambda = 0;
    const Heatmap masked = single_peak_map(to_maps(tr, g8), c);
    const double taus[3] = {std::max(oracle::nearest_rank(tr.a, c.q_attn), c.peak_floor),
                            std::max(oracle::nearest_rank(tr.o, c.q_ocr), c.peak_floor),
                            std::max(oracle::nearest_rank(tr.c, c.q_cap), c.peak_floor)};
    for (std::size_t j = 0; j < masked.size(); ++j) {
      double expect = 0;
      if (tr.a[j] > taus[0]) expect += tr.a[j];
      if (tr.o[j] > taus[1]) expect += tr.o[j];
      if (tr.c[j] > taus[2]) expect += tr.c[j];
      CHECK(masked[j] == expect);
    }
  }
}

TEST_CASE("fuse") {
  FusionConfig cfg;
  const PatchGrid g(2, 2, 2, 2);
  const Heatmap zf = fuse({Heatmap(g), Heatmap(g), Heatmap(g)}, cfg);
  for (double v : zf.values()) CHECK(v == 0.0);

  // a flat pre-normalization map collapses to zeros and the argmax picks cell 0
  const PatchGrid g12(1, 2, 2, 1);
  const ModalityMaps flat{Heatmap(g12, {0, 1}), Heatmap(g12, {0, 1}), Heatmap(g12, {0, 1})};
  const Heatmap f = fuse(flat, cfg);
  const auto sp = single_peak_map(flat, cfg);
  CHECK(sp[0] == 0.0);
  CHECK(f[0] == 0.0);
  CHECK(argmax_cell(Heatmap(g12, {0.0, 0.0})) == Cell{0, 0});

  Rng rng(34);
  const PatchGrid g8(8, 8, 8, 8);
  for (int t = 0; t < 250; ++t) {
    FusionConfig c = cfg;
    c.renormalize_consensus = (t % 2) == 1;
    const auto tr = random_triple(rng, g8.size());
    const auto maps = to_maps(tr, g8);
    const Heatmap m = fuse(maps, c);
    const auto o = oracle::fuse(tr, c);
    for (std::size_t j = 0; j < m.size(); ++j) {
      CHECK(std::abs(m[j] - o[j]) <= 1e-9);
      CHECK(m[j] >= 0.0);
      CHECK(m[j] <= 1.0);
    }
    const Heatmap avg = fuse_average(maps);
    const auto oa = oracle::fuse_weighted(tr, 1, 1, 1);
    const Heatmap cus = fuse_custom(maps);
    const auto oc = oracle::fuse_weighted(tr, 0.6, 0.2, 0.2);
    for (std::size_t j = 0; j < m.size(); ++j) {
      CHECK(std::abs(avg[j] - oa[j]) <= 1e-12);
      CHECK(std::abs(cus[j] - oc[j]) <= 1e-12);
    }
  }
}

TEST_CASE("baselines") {
  const PatchGrid g(1, 4, 4, 1);
  const Heatmap a(g, {0, 0.25, 1, 0.5});
  const ModalityMaps same{a, a, a};
  CHECK(vec(fuse_average(same)) == vec(fuse_custom(same)));
  const ModalityMaps mixed{a, Heatmap(g, {1, 0, 0, 0}), Heatmap(g, {0, 1, 0, 0})};
  CHECK(vec(fuse_custom(mixed, {1, 0, 0})) == vec(a));
  CHECK_THROWS_AS(fuse_custom(mixed, {-1, 1, 1}), InvalidInput);
  CHECK_THROWS_AS(fuse_custom(mixed, {0, 0, 0}), InvalidInput);
  FusionConfig cfg;
  CHECK(vec(fuse_with(FusionStrategy::average, mixed, cfg)) == vec(fuse_average(mixed)));
  CHECK(vec(fuse_with(FusionStrategy::custom, mixed, cfg, {0, 1, 0})) == vec(fuse_custom(mixed, {0, 1, 0})));
  CHECK(vec(fuse_with(FusionStrategy::cs, mixed, cfg)) == vec(fuse(mixed, cfg)));
}

TEST_CASE("fusion is permutation-equivariant over cells") {
  Rng rng(35);
  FusionConfig cfg;
  const PatchGrid g(6, 6, 6, 6);
  for (int t = 0; t < 50; ++t) {
    const auto tr = random_triple(rng, g.size());
    std::vector<std::size_t> perm(g.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    oracle::Triple p{tr.a, tr.o, tr.c};
    for (std::size_t j = 0; j < perm.size(); ++j) {
      p.a[j] = tr.a[perm[j]];
      p.o[j] = tr.o[perm[j]];
      p.c[j] = tr.c[perm[j]];
    }
    const auto base = to_maps(tr, g), moved = to_maps(p, g);
    const Heatmap f0 = fuse(base, cfg), f1 = fuse(moved, cfg);
    const Heatmap a0 = fuse_average(base), a1 = fuse_average(moved);
    const Heatmap c0 = fuse_custom(base), c1 = fuse_custom(moved);
    for (std::size_t j = 0; j < perm.size(); ++j) {
      CHECK(f1[j] == f0[perm[j]]);
      CHECK(a1[j] == a0[perm[j]]);
      CHECK(c1[j] == c0[perm[j]]);
    }
  }
}

TEST_CASE("config validation") {
  FusionConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = [](auto mutate) {
    FusionConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), InvalidInput);
  };
  bad([](FusionConfig& c) { c.q_attn = 1.0; });
  bad([](FusionConfig& c) { c.q_ocr = 0.0; });
  bad([](FusionConfig& c) { c.epsilon = 0.0; });
  bad([](FusionConfig& c) { c.lambda = -0.1; });
  bad([](FusionConfig& c) { c.k_head = 0; });
  bad([](FusionConfig& c) { c.alpha = std::nan(""); });
}
