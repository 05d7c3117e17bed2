#include "groundfuse/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace groundfuse::io {

namespace {

void put_f32le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

float get_f32le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

void check_version(const json& doc, const std::string& what) {
  auto it = doc.find("format_version");
  if (it == doc.end()) throw ValidationError("format_version_missing", what + " has no format_version");
  if (!it->is_number_integer() || it->get<long long>() != kFormatVersion) {
    throw ValidationError("format_version_unsupported", what + ": format_version must be 1");
  }
}

}  // namespace

std::string encode_tensor(const Tensor& t) {
  std::size_t count = 1;
  for (auto d : t.dims) count *= d;
  if (t.dims.empty() || count != t.values.size()) {
    throw InvalidInput("tensor dims do not match value count");
  }
  json header = t.extra.is_object() ? t.extra : json::object();
  header["dims"] = t.dims;
  header["dtype"] = "f32le";
  header["layout"] = "row-major";
  header["format_version"] = kFormatVersion;
  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + 4 * t.values.size());
  for (float v : t.values) put_f32le(out, v);
  return out;
}

Tensor decode_tensor(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) {
    throw ParseError("header", bytes.size(), "no newline terminating the JSON header");
  }
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::parse_error& e) {
    throw ParseError("header", e.byte > 0 ? e.byte - 1 : 0, "malformed JSON header");
  }
  if (!header.is_object()) throw ParseError("header", 0, "header is not a JSON object");

  auto dtype = header.find("dtype");
  if (dtype == header.end() || *dtype != "f32le") {
    throw ParseError("dtype", 0, "expected \"f32le\"");
  }
  auto layout = header.find("layout");
  if (layout == header.end() || *layout != "row-major") {
    throw ParseError("layout", 0, "expected \"row-major\"");
  }
  auto version = header.find("format_version");
  if (version != header.end() && (!version->is_number_integer() || *version != kFormatVersion)) {
    throw ParseError("format_version", 0, "unsupported format version");
  }
  auto dims = header.find("dims");
  if (dims == header.end() || !dims->is_array() || dims->empty()) {
    throw ParseError("dims", 0, "expected a non-empty array");
  }
  Tensor t;
  std::size_t count = 1;
  for (const auto& d : *dims) {
    if (!d.is_number_integer() || d.get<long long>() < 1) {
      throw ParseError("dims", 0, "every dimension must be an integer >= 1");
    }
    const auto v = d.get<std::size_t>();
    if (count > std::numeric_limits<std::size_t>::max() / 4 / v) {
      throw ParseError("dims", 0, "tensor too large");
    }
    count *= v;
    t.dims.push_back(v);
  }
  const std::size_t body_offset = nl + 1;
  const std::size_t found = bytes.size() - body_offset;
  if (found != 4 * count) {
    throw ParseError("body", body_offset,
                     "expected " + std::to_string(4 * count) + " bytes, found " + std::to_string(found));
  }
  t.values.resize(count);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + body_offset);
  for (std::size_t i = 0; i < count; ++i) t.values[i] = get_f32le(p + 4 * i);
  header.erase("dims");
  header.erase("dtype");
  header.erase("layout");
  header.erase("format_version");
  t.extra = std::move(header);
  return t;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("file_missing", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path.filename().string(), e.byte > 0 ? e.byte - 1 : 0, "malformed JSON");
  }
}

std::string dump_json(const json& doc) { return doc.dump(2) + "\n"; }

void atomic_write(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

Tensor read_tensor(const fs::path& path) { return decode_tensor(read_file(path)); }

void write_tensor(const fs::path& path, const Tensor& t) { atomic_write(path, encode_tensor(t)); }

json grid_to_json(const PatchGrid& g) {
  return {{"rows", g.rows()}, {"cols", g.cols()}, {"image_w", g.image_w()}, {"image_h", g.image_h()}};
}

PatchGrid grid_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("grid_invalid", "grid must be an object");
  for (const char* k : {"rows", "cols", "image_w", "image_h"}) {
    if (!j.contains(k) || !j[k].is_number_integer()) {
      throw ValidationError("grid_invalid", std::string("grid.") + k + " must be an integer");
    }
  }
  for (const auto& [k, v] : j.items()) {
    if (k != "rows" && k != "cols" && k != "image_w" && k != "image_h") {
      throw ValidationError("unknown_field", "grid." + k);
    }
  }
  const auto rows = j["rows"].get<long long>(), cols = j["cols"].get<long long>();
  const auto w = j["image_w"].get<long long>(), h = j["image_h"].get<long long>();
  if (rows < 1 || cols < 1) throw ValidationError("grid_invalid", "grid needs rows, cols >= 1");
  if (w < cols || h < rows || w > std::numeric_limits<int>::max() || h > std::numeric_limits<int>::max()) {
    throw ValidationError("grid_image_too_small", "image must be at least one pixel per cell");
  }
  return PatchGrid(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), static_cast<int>(w),
                   static_cast<int>(h));
}


Heatmap read_heatmap(const fs::path& path) {
  Tensor t = read_tensor(path);
  if (!t.extra.contains("grid")) throw ParseError("grid", 0, "heatmap header has no grid");
  PatchGrid grid;
  try {
    grid = grid_from_json(t.extra["grid"]);
  } catch (const ValidationError& e) {
    throw ParseError("grid", 0, e.what());
  }
  if (t.dims.size() != 2 || t.dims[0] != grid.rows() || t.dims[1] != grid.cols()) {
    throw ParseError("dims", 0, "heatmap dims must equal [grid.rows, grid.cols]");
  }
  std::vector<double> values(t.values.begin(), t.values.end());
  for (double v : values) {
    if (!std::isfinite(v)) throw ParseError("body", 0, "heatmap values must be finite");
  }
  return Heatmap(grid, std::move(values));
}

void write_heatmap(const fs::path& path, const Heatmap& h) {
  Tensor t;
  t.dims = {h.grid().rows(), h.grid().cols()};
  t.values.assign(h.values().begin(), h.values().end());
  t.extra = {{"grid", grid_to_json(h.grid())}};
  write_tensor(path, t);
}

std::vector<Detection> detections_from_json(const json& doc, const std::string& source) {
  const json* list = &doc;
  if (doc.is_object()) {
    check_version(doc, source);
    for (const auto& [k, v] : doc.items()) {
      if (k != "format_version" && k != "detections") throw ValidationError("unknown_field", source + ": " + k);
    }
    if (!doc.contains("detections")) throw ValidationError("detection_file", source + ": no detections array");
    list = &doc["detections"];
  }
  if (!list->is_array()) throw ValidationError("detection_file", source + ": detections must be an array");
  std::vector<Detection> out;
  for (std::size_t i = 0; i < list->size(); ++i) {
    const json& d = (*list)[i];
    const std::string where = source + "[" + std::to_string(i) + "]";
    if (!d.is_object()) throw ValidationError("detection_file", where + " is not an object");
    for (const auto& [k, v] : d.items()) {
      if (k != "bbox" && k != "text" && k != "confidence" && k != "embedding") {
        throw ValidationError("unknown_field", where + "." + k);
      }
    }
    Detection det;
    if (!d.contains("bbox") || !d["bbox"].is_array() || d["bbox"].size() != 4) {
      throw ValidationError("detection_bbox", where + ".bbox must be [x,y,w,h]");
    }
    for (const auto& v : d["bbox"]) {
      if (!v.is_number() || !std::isfinite(v.get<double>())) {
        throw ValidationError("detection_bbox", where + ".bbox must hold finite numbers");
      }
    }
    det.bbox = {d["bbox"][0].get<double>(), d["bbox"][1].get<double>(), d["bbox"][2].get<double>(),
                d["bbox"][3].get<double>()};
    if (!(det.bbox.w > 0 && det.bbox.h > 0)) {
      throw ValidationError("detection_bbox", where + ".bbox needs positive width and height");
    }
    if (!d.contains("text") || !d["text"].is_string()) {
      throw ValidationError("detection_text", where + ".text must be a string");
    }
    det.text = d["text"].get<std::string>();
    if (!d.contains("confidence") || !d["confidence"].is_number()) {
      throw ValidationError("detection_confidence", where + ".confidence must be a number");
    }
    det.confidence = d["confidence"].get<double>();
    if (!(det.confidence >= 0.0 && det.confidence <= 1.0)) {
      throw ValidationError("detection_confidence", where + ".confidence outside [0,1]");
    }
    if (!d.contains("embedding") || !d["embedding"].is_array() || d["embedding"].empty()) {
      throw ValidationError("detection_embedding", where + ".embedding must be a non-empty array");
    }
    for (const auto& v : d["embedding"]) {
      if (!v.is_number() || !std::isfinite(v.get<double>())) {
        throw ValidationError("detection_embedding", where + ".embedding must hold finite numbers");
      }
      det.embedding.push_back(v.get<double>());
    }
    out.push_back(std::move(det));
  }
  return out;
}

json detections_to_json(const std::vector<Detection>& dets) {
  json list = json::array();
  for (const auto& d : dets) {
    list.push_back({{"bbox", {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h}},
                    {"text", d.text},
                    {"confidence", d.confidence},
                    {"embedding", d.embedding}});
  }
  return {{"format_version", kFormatVersion}, {"detections", std::move(list)}};
}

std::vector<Detection> read_detections(const fs::path& path) {
  json doc;
  try {
    doc = read_json(path);
  } catch (const ParseError& e) {
    throw ValidationError("detection_file", e.what());
  }
  return detections_from_json(doc, path.filename().string());
}

void write_detections(const fs::path& path, const std::vector<Detection>& dets) {
  atomic_write(path, dump_json(detections_to_json(dets)));
}

namespace {

class BundleLoader {
 public:
  explicit BundleLoader(const fs::path& manifest) : base_(manifest.parent_path()) {}

  fs::path resolve(const json& v, const std::string& field) const {
    if (!v.is_string() || v.get<std::string>().empty()) {
      throw ValidationError("path_invalid", field + " must be a non-empty path string");
    }
    fs::path p(v.get<std::string>());
    if (p.is_relative()) p = base_ / p;
    if (!fs::is_regular_file(p)) throw ValidationError("file_missing", field + ": " + p.string() + " not found");
    return p;
  }

  const Tensor& tensor(const json& v, const std::string& field) {
    const fs::path p = resolve(v, field);
    auto it = cache_.find(p.string());
    if (it != cache_.end()) return it->second;
    try {
      return cache_.emplace(p.string(), read_tensor(p)).first->second;
    } catch (const ParseError& e) {
      throw ValidationError("tensor_parse", field + ": " + e.what());
    }
  }

  std::vector<double> embedding_row(const json& ref, const std::string& field) {
    if (!ref.is_object() || !ref.contains("path") || !ref.contains("row") || ref.size() != 2 ||
        !ref["row"].is_number_integer()) {
      throw ValidationError("embedding_ref", field + " must be {\"path\":..., \"row\":...}");
    }
    const Tensor& t = tensor(ref["path"], field + ".path");
    if (t.dims.size() != 2) throw ValidationError("embedding_rank", field + ": embedding tensor must be 2-D");
    const auto row = ref["row"].get<long long>();
    if (row < 0 || static_cast<std::size_t>(row) >= t.dims[0]) {
      throw ValidationError("embedding_row", field + ".row out of range");
    }
    const std::size_t d = t.dims[1];
    std::vector<double> out(t.values.begin() + static_cast<std::ptrdiff_t>(row * d),
                            t.values.begin() + static_cast<std::ptrdiff_t>((row + 1) * d));
    for (double v : out) {
      if (!std::isfinite(v)) throw ValidationError("embedding_value", field + " holds a non-finite value");
    }
    return out;
  }

 private:
  fs::path base_;
  std::map<std::string, Tensor> cache_;
};

}  // namespace

ModalityBundle load_bundle(const fs::path& manifest_path) {
  json m;
  try {
    m = read_json(manifest_path);
  } catch (const ParseError& e) {
    throw ValidationError("manifest_parse", e.what());
  }
  if (!m.is_object()) throw ValidationError("manifest_parse", "manifest must be a JSON object");
  check_version(m, "manifest");
  static const std::set<std::string> known{"format_version", "grid", "attention", "patch_embeddings",
                                           "tokens", "instruction_embedding", "ocr", "captions",
                                           "crop", "metadata"};
  for (const auto& [k, v] : m.items()) {
    if (!known.count(k)) throw ValidationError("unknown_field", "manifest." + k);
  }
  if (!m.contains("grid")) throw ValidationError("grid_invalid", "manifest has no grid");

  ModalityBundle b;
  b.grid = grid_from_json(m["grid"]);
  const std::size_t patches = b.grid.size();
  BundleLoader loader(manifest_path);

  std::size_t dim = 0;  // shared embedding dimension, 0 = not yet known
  auto agree = [&dim](std::size_t d, const char* code, const std::string& what) {
    if (dim == 0) dim = d;
    if (d != dim) {
      throw ValidationError(code, what + " has dimension " + std::to_string(d) + ", expected " +
                                      std::to_string(dim));
    }
  };

  if (m.contains("patch_embeddings")) {
    const Tensor& t = loader.tensor(m["patch_embeddings"], "patch_embeddings");
    if (t.dims.size() != 2) throw ValidationError("patch_embeddings_rank", "patch embeddings must be [P, D]");
    if (t.dims[0] != patches) {
      throw ValidationError("patch_grid_mismatch", "patch embeddings have " + std::to_string(t.dims[0]) +
                                                       " rows, grid has " + std::to_string(patches) +
                                                       " cells");
    }
    std::vector<double> data(t.values.begin(), t.values.end());
    for (double v : data) {
      if (!std::isfinite(v)) throw ValidationError("embedding_value", "patch embeddings hold a non-finite value");
    }
    agree(t.dims[1], "patch_embeddings_dim", "patch embeddings");
    b.patches = PatchEmbeddings(b.grid, t.dims[1], std::move(data));
  }

  if (m.contains("tokens")) {
    const json& toks = m["tokens"];
    if (!toks.is_array()) throw ValidationError("token_invalid", "tokens must be an array");
    for (std::size_t i = 0; i < toks.size(); ++i) {
      const json& t = toks[i];
      const std::string where = "tokens[" + std::to_string(i) + "]";
      if (!t.is_object() || !t.contains("id") || !t.contains("text") || !t.contains("embedding") ||
          t.size() != 3) {
        throw ValidationError("token_invalid", where + " must have exactly id, text, embedding");
      }
      if (!t["id"].is_number_integer() || t["id"].get<long long>() != static_cast<long long>(i)) {
        throw ValidationError("token_id", where + ".id must equal its position " + std::to_string(i));
      }
      if (!t["text"].is_string()) throw ValidationError("token_invalid", where + ".text must be a string");
      TokenRecord rec{i, t["text"].get<std::string>(), loader.embedding_row(t["embedding"], where + ".embedding")};
      agree(rec.embedding.size(), "token_embedding_dim", where + ".embedding");
      b.tokens.push_back(std::move(rec));
    }
  }

  if (m.contains("instruction_embedding")) {
    b.instruction_embedding = loader.embedding_row(m["instruction_embedding"], "instruction_embedding");
    agree(b.instruction_embedding->size(), "instruction_embedding_dim", "instruction embedding");
  }

  if (m.contains("attention")) {
    const Tensor& t = loader.tensor(m["attention"], "attention");
    if (t.dims.size() != 4) throw ValidationError("attention_rank", "attention must be [L, H, Q, P]");
    if (t.dims[3] != patches) {
      throw ValidationError("attention_grid_mismatch",
                            "attention/grid dimension mismatch: attention has " + std::to_string(t.dims[3]) +
                                " patches, grid has " + std::to_string(patches));
    }
    if (t.dims[2] != b.tokens.size()) {
      throw ValidationError("attention_token_mismatch", "attention has " + std::to_string(t.dims[2]) +
                                                            " tokens, manifest lists " +
                                                            std::to_string(b.tokens.size()));
    }
    if (!b.patches) throw ValidationError("attention_requires_patches", "attention needs patch_embeddings");
    std::vector<double> data(t.values.begin(), t.values.end());
    for (std::size_t s = 0; s < data.size() / patches; ++s) {
      double sum = 0.0;
      for (std::size_t j = 0; j < patches; ++j) {
        const double v = data[s * patches + j];
        if (!(v >= 0.0) || !std::isfinite(v)) {
          throw ValidationError("attention_value", "attention values must be finite and non-negative");
        }
        sum += v;
      }
      if (!(sum > 0.0 && sum <= 1.0 + 1e-6)) {
        throw ValidationError("attention_slice_mass", "attention slice " + std::to_string(s) +
                                                          " sums to " + std::to_string(sum) +
                                                          ", expected (0, 1]");
      }
    }
    b.attention = AttentionStack(t.dims[0], t.dims[1], t.dims[2], b.grid, std::move(data));
  }

  auto load_dets = [&](const char* key) {
    std::vector<Detection> dets;
    if (!m.contains(key)) return dets;
    dets = read_detections(loader.resolve(m[key], key));
    for (auto& d : dets) {
      agree(d.embedding.size(), "detection_embedding_dim", std::string(key) + " embedding");
      d.bbox = clamp_to_image(d.bbox, b.grid);
    }
    return dets;
  };
  b.ocr = load_dets("ocr");
  b.captions = load_dets("captions");

  if (m.contains("crop")) crop_from_json(m["crop"]);
  if (m.contains("metadata") && !m["metadata"].is_object()) {
    throw ValidationError("metadata_invalid", "metadata must be an object");
  }
  return b;
}

fs::path write_bundle(const fs::path& dir, const ModalityBundle& b, const json& extra) {
  fs::create_directories(dir);
  json m = extra.is_object() ? extra : json::object();
  m["format_version"] = kFormatVersion;
  m["grid"] = grid_to_json(b.grid);

  auto to_f32 = [](std::span<const double> v) { return std::vector<float>(v.begin(), v.end()); };
  if (b.patches) {
    write_tensor(dir / "patches.f32", {{b.grid.size(), b.patches->dim()}, to_f32(b.patches->data()), {}});
    m["patch_embeddings"] = "patches.f32";
  }
  if (!b.tokens.empty()) {
    const std::size_t d = b.tokens.front().embedding.size();
    std::vector<float> rows;
    json toks = json::array();
    for (const auto& t : b.tokens) {
      rows.insert(rows.end(), t.embedding.begin(), t.embedding.end());
      toks.push_back({{"id", t.token_id}, {"text", t.text},
                      {"embedding", {{"path", "tokens.f32"}, {"row", t.token_id}}}});
    }
    write_tensor(dir / "tokens.f32", {{b.tokens.size(), d}, std::move(rows), {}});
    m["tokens"] = std::move(toks);
  }
  if (b.instruction_embedding) {
    write_tensor(dir / "instruction.f32",
                 {{1, b.instruction_embedding->size()}, to_f32(*b.instruction_embedding), {}});
    m["instruction_embedding"] = {{"path", "instruction.f32"}, {"row", 0}};
  }
  if (b.attention) {
    const auto& a = *b.attention;
    write_tensor(dir / "attention.f32",
                 {{a.layers(), a.heads(), a.tokens(), b.grid.size()}, to_f32(a.tensor()), {}});
    m["attention"] = "attention.f32";
  }
  write_detections(dir / "ocr.json", b.ocr);
  m["ocr"] = "ocr.json";
  write_detections(dir / "captions.json", b.captions);
  m["captions"] = "captions.json";
  const fs::path manifest = dir / "manifest.json";
  atomic_write(manifest, dump_json(m));
  return manifest;
}

FusionConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ValidationError("config_invalid", "config must be a JSON object");
  FusionConfig cfg;
  auto num = [&](const std::string& k, const json& v) {
    if (!v.is_number()) throw ValidationError("config_type", "config." + k + " must be a number");
    return v.get<double>();
  };
  auto count = [&](const std::string& k, const json& v) {
    if (!v.is_number_integer() || v.get<long long>() < 1) {
      throw ValidationError("config_type", "config." + k + " must be an integer >= 1");
    }
    return v.get<std::size_t>();
  };
  for (const auto& [k, v] : doc.items()) {
    if (k == "format_version") {
      if (!v.is_number_integer() || v != kFormatVersion) {
        throw ValidationError("format_version_unsupported", "config: format_version must be 1");
      }
    } else if (k == "tau_v") cfg.tau_v = num(k, v);
    else if (k == "k_token") cfg.k_token = count(k, v);
    else if (k == "k_head") cfg.k_head = count(k, v);
    else if (k == "q_attn") cfg.q_attn = num(k, v);
    else if (k == "q_ocr") cfg.q_ocr = num(k, v);
    else if (k == "q_cap") cfg.q_cap = num(k, v);
    else if (k == "peak_floor") cfg.peak_floor = num(k, v);
    else if (k == "alpha") cfg.alpha = num(k, v);
    else if (k == "beta") cfg.beta = num(k, v);
    else if (k == "epsilon") cfg.epsilon = num(k, v);
    else if (k == "lambda") cfg.lambda = num(k, v);
    else if (k == "renormalize_consensus") {
      if (!v.is_boolean()) throw ValidationError("config_type", "config.renormalize_consensus must be a boolean");
      cfg.renormalize_consensus = v.get<bool>();
    } else if (k == "query_embedding_mode") {
      if (v == "mean-of-filtered-tokens") cfg.query_embedding_mode = QuerySource::mean_of_filtered_tokens;
      else if (v == "whole-instruction") cfg.query_embedding_mode = QuerySource::whole_instruction;
      else throw ValidationError("config_type", "config.query_embedding_mode is not a known mode");
    } else {
      throw ValidationError("unknown_field", "config." + k);
    }
  }
  try {
    cfg.validate();
  } catch (const InvalidInput& e) {
    throw ValidationError("config_range", e.what());
  }
  return cfg;
}

json config_to_json(const FusionConfig& cfg) {
  return {{"format_version", kFormatVersion},
          {"tau_v", cfg.tau_v},
          {"k_token", cfg.k_token},
          {"k_head", cfg.k_head},
          {"q_attn", cfg.q_attn},
          {"q_ocr", cfg.q_ocr},
          {"q_cap", cfg.q_cap},
          {"peak_floor", cfg.peak_floor},
          {"alpha", cfg.alpha},
          {"beta", cfg.beta},
          {"epsilon", cfg.epsilon},
          {"lambda", cfg.lambda},
          {"renormalize_consensus", cfg.renormalize_consensus},
          {"query_embedding_mode", cfg.query_embedding_mode == QuerySource::whole_instruction
                                       ? "whole-instruction"
                                       : "mean-of-filtered-tokens"}};
}

FusionConfig read_config(const fs::path& path) {
  try {
    return config_from_json(read_json(path));
  } catch (const ParseError& e) {
    throw ValidationError("config_parse", e.what());
  }
}

json crop_to_json(const CropSpec& c) {
  return {{"format_version", kFormatVersion}, {"x", c.x}, {"y", c.y}, {"w", c.w}, {"h", c.h}};
}

CropSpec crop_from_json(const json& doc) {
  if (!doc.is_object()) throw ValidationError("crop_invalid", "crop must be an object");
  CropSpec c;
  for (const auto& [k, v] : doc.items()) {
    if (k == "format_version") continue;
    if (k != "x" && k != "y" && k != "w" && k != "h") throw ValidationError("unknown_field", "crop." + k);
  }
  for (const char* k : {"x", "y", "w", "h"}) {
    if (!doc.contains(k) || !doc[k].is_number_integer()) {
      throw ValidationError("crop_invalid", std::string("crop.") + k + " must be an integer");
    }
  }
  c.x = doc["x"].get<int>();
  c.y = doc["y"].get<int>();
  c.w = doc["w"].get<int>();
  c.h = doc["h"].get<int>();
  if (c.x < 0 || c.y < 0 || c.w < 1 || c.h < 1) throw ValidationError("crop_invalid", "crop out of range");
  return c;
}

json result_to_json(const GroundingResult& r, const FusionConfig& cfg) {
  json j = {{"format_version", kFormatVersion},
            {"stage", r.stage == Stage::two_stage ? "two-stage" : "direct"},
            {"point", {r.point.x, r.point.y}},
            {"coarse_point", {r.coarse_point.x, r.coarse_point.y}},
            {"config", config_to_json(cfg)}};
  if (r.crop) {
    json c = crop_to_json(*r.crop);
    c.erase("format_version");
    j["crop"] = c;
  } else {
    j["crop"] = nullptr;
  }
  return j;
}

}  // namespace groundfuse::io
