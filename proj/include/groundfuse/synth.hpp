#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundfuse/bundle.hpp"
#include "groundfuse/localizer.hpp"

namespace groundfuse {

/// Placement or fixture construction gave up after its retry bound.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit Mersenne Twister with explicit conversions so streams reproduce
/// across standard libraries: uniform() takes the top 53 bits, normal() is
/// Box-Muller without caching.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();                          // [0, 1)
  double uniform(double lo, double hi);      // [lo, hi)
  std::size_t index(std::size_t n);          // [0, n)
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Seed of the i-th independent stream derived from `seed`.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(seed ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

enum class ElementKind { text, icon };

struct ModalityNoise {
  double hit_probability = 0.7;
  double noise = 0.3;
  double dropout = 0.0;
};

struct SceneParams {
  std::size_t rows = 16, cols = 16;
  int image_w = 640, image_h = 640;
  ElementKind target_kind = ElementKind::text;
  std::size_t distractors = 30;
  ModalityNoise attention, ocr, caption;
  std::uint64_t seed = 0;

  std::size_t layers = 8, heads = 4, tokens = 5;
  // Element extents in cells.
  double min_w = 1.0, max_w = 2.0, min_h = 1.0, max_h = 2.0;
  // Target extents in cells; defaults to the element range when unset.
  std::optional<double> target_min = {}, target_max = {};
  // Snap element origins into the first 40% of a cell so the top-left
  // overlapped cell's centre lies inside the element.
  bool snap_to_cells = true;
  double last_token_hit = 0.5;

  void validate() const;

  static SceneParams standard();
  static SceneParams small_target();
};

nlohmann::json scene_params_to_json(const SceneParams& p);
/// Fields absent from `doc` keep the values of `base`.
SceneParams scene_params_from_json(const nlohmann::json& doc, SceneParams base = SceneParams::standard());

struct Element {
  BBox box;
  ElementKind kind = ElementKind::text;
  std::vector<double> concept_vec;
};

enum class HeadRole { good, sink, diffuse };

/// A generated screen with ground truth. Modality bundles are rendered on
/// demand for any view window; every stochastic choice that defines the
/// scene is fixed at construction, and per-view noise is drawn from a stream
/// keyed by the view, so rendering is a pure function of (params, view).
class Scene {
 public:
  explicit Scene(const SceneParams& params);

  const SceneParams& params() const noexcept { return params_; }
  const std::vector<Element>& elements() const noexcept { return elements_; }
  const Element& target() const noexcept { return elements_.front(); }
  PatchGrid full_grid() const;
  CropSpec full_view() const { return {0, 0, params_.image_w, params_.image_h}; }

  ModalityBundle render(const CropSpec& view) const;
  ModalityBundle render() const { return render(full_view()); }

  /// Stage-2 supplier rendering the crop from this scene.
  Stage2Supplier stage2() const;

  bool attention_hit() const noexcept { return attn_hit_; }
  bool ocr_hit() const noexcept { return ocr_hit_; }
  bool caption_hit() const noexcept { return cap_hit_; }

 private:
  struct DetectionDraw {
    double cosine = 0, confidence = 0;
    bool dropped = false;
    std::vector<double> orth;  // unit vector orthogonal to the query
  };

  SceneParams params_;
  std::vector<Element> elements_;  // [0] is the target
  std::vector<double> query_;
  std::vector<std::vector<double>> token_embeddings_;
  std::size_t relevant_token_ = 0;
  std::vector<std::size_t> token_focus_;  // element index per token
  std::vector<HeadRole> roles_;           // layer-major
  std::vector<bool> head_dropped_;
  std::vector<DetectionDraw> det_;        // per element
  bool attn_hit_ = true, ocr_hit_ = true, cap_hit_ = true;
  double miss_support_ = 0;  // attention left on a missed target
};

/// Writes the scene's full-view bundle under `dir`; returns the manifest path.
std::filesystem::path write_scene_bundle(const Scene& scene, const std::filesystem::path& dir);

/// Adversarial fusion fixtures: one modality has the only strong peak, on the
/// target, with moderate support from the others; a wrong cell carries high
/// but sub-threshold values in the two other modalities.
struct SinglePeakFixture {
  ModalityMaps maps;
  Modality strong = Modality::attn;
  Cell target;
  Cell wrong;
};

struct SinglePeakFixtureSet {
  std::vector<SinglePeakFixture> fixtures;
  std::size_t average_hits = 0;  // fixtures where average fusion finds the target
};

SinglePeakFixtureSet gen_single_peak_fixtures(std::size_t n, std::uint64_t seed,
                                              const FusionConfig& cfg = {});

}  // namespace groundfuse
