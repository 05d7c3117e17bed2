#include <benchmark/benchmark.h>

#include <vector>

#include "groundfuse/bench_harness.hpp"
#include "groundfuse/serial.hpp"
#include "groundfuse/synth.hpp"

using namespace groundfuse;

namespace {

std::vector<ScoredBox> random_boxes(std::size_t n, const PatchGrid& g, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ScoredBox> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rng.uniform(10, 200), h = rng.uniform(10, 120);
    out.push_back({{rng.uniform(0, g.image_w() - w), rng.uniform(0, g.image_h() - h), w, h}, rng.uniform()});
  }
  return out;
}

Heatmap random_map(const PatchGrid& g, Rng& rng) {
  Heatmap h(g);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = rng.uniform();
  return minmax_normalize(h);
}

const PatchGrid kLarge(64, 112, 2240, 1280);

void BM_ProjectBoxes_Parallel(benchmark::State& st) {
  const auto boxes = random_boxes(static_cast<std::size_t>(st.range(0)), kLarge, 1);
  for (auto _ : st) benchmark::DoNotOptimize(project_boxes(boxes, kLarge));
}

void BM_ProjectBoxes_Serial(benchmark::State& st) {
  const auto boxes = random_boxes(static_cast<std::size_t>(st.range(0)), kLarge, 1);
  for (auto _ : st) benchmark::DoNotOptimize(serial::project_boxes(boxes, kLarge));
}

const Scene& bench_scene() {
  static const Scene scene = [] {
    SceneParams p = SceneParams::standard();
    p.rows = p.cols = 32;
    p.image_w = p.image_h = 1280;
    p.layers = 16;
    p.heads = 8;
    p.seed = 3;
    return Scene(p);
  }();
  return scene;
}

void BM_HeadEntropies_Parallel(benchmark::State& st) {
  const ModalityBundle b = bench_scene().render();
  for (auto _ : st) benchmark::DoNotOptimize(head_entropies(*b.attention, 0));
}

void BM_HeadEntropies_Serial(benchmark::State& st) {
  const ModalityBundle b = bench_scene().render();
  for (auto _ : st) benchmark::DoNotOptimize(serial::head_entropies(*b.attention, 0));
}

ModalityMaps large_maps() {
  Rng rng(5);
  return {random_map(kLarge, rng), random_map(kLarge, rng), random_map(kLarge, rng)};
}

void BM_SinglePeak_Parallel(benchmark::State& st) {
  const ModalityMaps maps = large_maps();
  const FusionConfig cfg;
  for (auto _ : st) benchmark::DoNotOptimize(single_peak_map(maps, cfg));
}

void BM_SinglePeak_Serial(benchmark::State& st) {
  const ModalityMaps maps = large_maps();
  const FusionConfig cfg;
  for (auto _ : st) benchmark::DoNotOptimize(serial::single_peak_map(maps, cfg));
}

struct EvalInput {
  std::vector<BenchmarkItem> items;
  std::vector<PixelPoint> points;
};

EvalInput eval_input(std::size_t n) {
  Rng rng(9);
  EvalInput in;
  const PatchGrid g(16, 16, 640, 640);
  for (std::size_t i = 0; i < n; ++i) {
    in.items.push_back({item_id(i), g, {rng.uniform(0, 500), rng.uniform(0, 500), 60, 40}, i % 2 ? "icon" : "text", "", i});
    in.points.push_back({rng.uniform(0, 640), rng.uniform(0, 640)});
  }
  return in;
}

void BM_Evaluate_Parallel(benchmark::State& st) {
  const EvalInput in = eval_input(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(evaluate(in.items, in.points));
}

void BM_Evaluate_Serial(benchmark::State& st) {
  const EvalInput in = eval_input(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(serial::evaluate(in.items, in.points));
}

}  // namespace

BENCHMARK(BM_ProjectBoxes_Parallel)->Arg(16)->Arg(256);
BENCHMARK(BM_ProjectBoxes_Serial)->Arg(16)->Arg(256);
BENCHMARK(BM_HeadEntropies_Parallel);
BENCHMARK(BM_HeadEntropies_Serial);
BENCHMARK(BM_SinglePeak_Parallel);
BENCHMARK(BM_SinglePeak_Serial);
BENCHMARK(BM_Evaluate_Parallel)->Arg(10000);
BENCHMARK(BM_Evaluate_Serial)->Arg(10000);

BENCHMARK_MAIN();
