#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "groundfuse/bundle.hpp"
#include "groundfuse/config.hpp"
#include "groundfuse/localizer.hpp"

namespace groundfuse::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;

/// A dense float tensor. On disk: one JSON header line
/// {"dims":[...],"dtype":"f32le","format_version":1,"layout":"row-major",...}
/// followed by product(dims) little-endian 32-bit floats.
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<float> values;
  json extra = json::object();  // additional header fields (e.g. heatmap grid)
};

std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(std::string_view bytes);

Tensor read_tensor(const fs::path& path);
void write_tensor(const fs::path& path, const Tensor& t);

json grid_to_json(const PatchGrid& g);
PatchGrid grid_from_json(const json& j);

/// .hm files: a tensor with dims [rows, cols] and the grid in the header.
Heatmap read_heatmap(const fs::path& path);
void write_heatmap(const fs::path& path, const Heatmap& h);

std::vector<Detection> detections_from_json(const json& doc, const std::string& source);
json detections_to_json(const std::vector<Detection>& dets);
std::vector<Detection> read_detections(const fs::path& path);
void write_detections(const fs::path& path, const std::vector<Detection>& dets);

/// Loads and cross-validates a manifest and every file it references.
/// Each inconsistency raises a ValidationError with a distinct code.
ModalityBundle load_bundle(const fs::path& manifest_path);

/// Writes manifest.json plus tensors and detection files into `dir`;
/// returns the manifest path. `extra` fields are merged into the manifest.
fs::path write_bundle(const fs::path& dir, const ModalityBundle& bundle,
                      const json& extra = json::object());

FusionConfig config_from_json(const json& doc);
json config_to_json(const FusionConfig& cfg);
FusionConfig read_config(const fs::path& path);

json crop_to_json(const CropSpec& crop);
CropSpec crop_from_json(const json& doc);

json result_to_json(const GroundingResult& result, const FusionConfig& cfg);

std::string read_file(const fs::path& path);
json read_json(const fs::path& path);
/// Pretty-printed, key-sorted, newline-terminated.
std::string dump_json(const json& doc);

/// Writes to a sibling temporary and renames it into place.
void atomic_write(const fs::path& path, std::string_view bytes);

}  // namespace groundfuse::io
