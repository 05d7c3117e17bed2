#include "groundfuse/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace groundfuse {

std::optional<QueryEmbedding> resolve_query(const ModalityBundle& bundle, const FusionConfig& cfg) {
  const bool have_tokens = !bundle.tokens.empty() && bundle.patches.has_value();
  if (cfg.query_embedding_mode == QuerySource::whole_instruction) {
    if (!bundle.instruction_embedding) {
      throw InvalidInput("whole-instruction query mode needs an instruction embedding");
    }
    return QueryEmbedding{*bundle.instruction_embedding, QuerySource::whole_instruction};
  }
  if (have_tokens) {
    return query_from_tokens(select_tokens(bundle.tokens, *bundle.patches, cfg.tau_v, cfg.k_token));
  }
  if (bundle.instruction_embedding) {
    return QueryEmbedding{*bundle.instruction_embedding, QuerySource::whole_instruction};
  }
  return std::nullopt;
}

ModalityOutputs compute_modality_maps(const ModalityBundle& bundle, const FusionConfig& cfg,
                                      AttentionOptions attention) {
  cfg.validate();
  ModalityOutputs out{{Heatmap(bundle.grid), Heatmap(bundle.grid), Heatmap(bundle.grid)}, {}, {}};
  if (bundle.attention) {
    if (bundle.tokens.empty() || !bundle.patches) {
      throw InvalidInput("attention needs token records and patch embeddings");
    }
    out.attention = extract_attention(*bundle.attention, bundle.tokens, *bundle.patches, cfg, attention);
    out.maps.attn = out.attention->map;
  }
  if (bundle.ocr.empty() && bundle.captions.empty()) return out;
  out.query = resolve_query(bundle, cfg);
  if (!out.query) throw InvalidInput("detections present but no query embedding is available");
  out.maps.ocr = build_detection_heatmap(score_detections(bundle.ocr, *out.query), bundle.grid);
  out.maps.cap = build_detection_heatmap(score_detections(bundle.captions, *out.query), bundle.grid);
  return out;
}

CropSpec make_crop(const PixelPoint& center, int image_w, int image_h) {
  if (!(center.x >= 0 && center.x <= image_w && center.y >= 0 && center.y <= image_h)) {
    throw InvalidInput("crop center outside the image");
  }
  auto axis = [](double c, int extent, int& origin, int& size) {
    if (extent < 2) {
      origin = 0;
      size = extent;
      return;
    }
    size = extent / 2;
    const auto start = static_cast<long long>(std::floor(c - size / 2.0));
    origin = static_cast<int>(std::clamp<long long>(start, 0, extent - size));
  };
  CropSpec crop;
  axis(center.x, image_w, crop.x, crop.w);
  axis(center.y, image_h, crop.y, crop.h);
  return crop;
}

CoarseLocation coarse_locate(const Heatmap& fused) {
  const PixelPoint p = cell_center_px(fused.grid(), argmax_cell(fused));
  return {p, make_crop(p, fused.grid().image_w(), fused.grid().image_h())};
}

PixelPoint refine(const Heatmap& stage2_fused, const CropSpec& crop) {
  const PatchGrid& g = stage2_fused.grid();
  if (g.image_w() != crop.w || g.image_h() != crop.h) {
    throw InvalidInput("stage-2 grid spans " + std::to_string(g.image_w()) + "x" +
                       std::to_string(g.image_h()) + " px but the crop is " +
                       std::to_string(crop.w) + "x" + std::to_string(crop.h));
  }
  const PixelPoint local = cell_center_px(g, argmax_cell(stage2_fused));
  return {crop.x + local.x, crop.y + local.y};
}

namespace {

template <class F>
auto with_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const InvalidInput& e) {
    throw InvalidInput(std::string(stage) + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(e.code(), std::string(stage) + ": " + e.what());
  }
}

}  // namespace

GroundingResult ground(const ModalityBundle& stage1, const Stage2Supplier& stage2_supplier,
                       const FusionConfig& cfg, const GroundOptions& opt) {
  GroundingResult res;
  res.fused_map_stage1 = with_stage("stage 1", [&] {
    const auto maps = compute_modality_maps(stage1, cfg, opt.attention).maps;
    return fuse_with(opt.strategy, maps, cfg, opt.custom_weights);
  });
  const CoarseLocation coarse = coarse_locate(res.fused_map_stage1);
  res.coarse_point = coarse.point;
  res.point = coarse.point;
  res.crop = coarse.crop;
  if (!stage2_supplier) return res;

  std::optional<ModalityBundle> stage2 = stage2_supplier(coarse.crop);
  if (!stage2) return res;
  with_stage("stage 2", [&] {
    const auto maps = compute_modality_maps(*stage2, cfg, opt.attention).maps;
    res.fused_map_stage2 = fuse_with(opt.strategy, maps, cfg, opt.custom_weights);
    res.point = refine(*res.fused_map_stage2, coarse.crop);
    return 0;
  });
  res.stage = Stage::two_stage;
  return res;
}

}  // namespace groundfuse
