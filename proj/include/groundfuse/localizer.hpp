#pragma once

#include <functional>
#include <optional>

#include "groundfuse/bundle.hpp"

namespace groundfuse {

/// Crop window in original-image pixels; origin is integral.
struct CropSpec {
  int x = 0, y = 0, w = 0, h = 0;
  friend bool operator==(const CropSpec&, const CropSpec&) = default;
};

enum class Stage { direct, two_stage };

struct GroundingResult {
  PixelPoint point;
  PixelPoint coarse_point;
  std::optional<CropSpec> crop;
  Stage stage = Stage::direct;
  Heatmap fused_map_stage1;
  std::optional<Heatmap> fused_map_stage2;
};

/// A floor(W/2) x floor(H/2) window centred on `center`, shifted (never
/// shrunk) to fit inside the image. Images narrower or shorter than 2 px
/// use the whole extent along that axis.
CropSpec make_crop(const PixelPoint& center, int image_w, int image_h);

struct CoarseLocation {
  PixelPoint point;
  CropSpec crop;
};

CoarseLocation coarse_locate(const Heatmap& fused);

/// Maps the stage-2 argmax back to original-image coordinates. The stage-2
/// grid must span exactly the crop's pixel extent.
PixelPoint refine(const Heatmap& stage2_fused, const CropSpec& crop);

/// Supplies the modality bundle for a crop, or nothing to stop at stage 1.
using Stage2Supplier = std::function<std::optional<ModalityBundle>(const CropSpec&)>;

struct GroundOptions {
  FusionStrategy strategy = FusionStrategy::cs;
  FusionWeights custom_weights = kDefaultCustomWeights;
  AttentionOptions attention;
};

/// Full pipeline with at most one zoom-in refinement.
GroundingResult ground(const ModalityBundle& stage1, const Stage2Supplier& stage2_supplier,
                       const FusionConfig& cfg, const GroundOptions& opt = {});

}  // namespace groundfuse
