// SPDX-License-Identifier: Apache-2.0
#include "tokentm/model_config.hpp"

#include <cstdint>
#include <fstream>
#include <iterator>

#include "tokentm/error.hpp"

namespace tokentm {

using nlohmann::json;

void ModelConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ModelError("image_size " + std::to_string(image_size) +
                     " is not a positive multiple of patch_size " + std::to_string(patch_size));
  }
  if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0) {
    throw ModelError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                     std::to_string(n_heads));
  }
  if (n_classes == 0) throw ModelError("n_classes must be positive");
  if (n_blocks > 0 && d_ff == 0) throw ModelError("d_ff must be positive");
  if (!(layernorm_eps > 0.0)) throw ModelError("layernorm_eps must be positive");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"d_model", c.d_model},
           {"n_heads", c.n_heads},       {"n_blocks", c.n_blocks},     {"d_ff", c.d_ff},
           {"n_classes", c.n_classes},   {"layernorm_eps", c.layernorm_eps}};
}

void from_json(const json& j, ModelConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("patch_size").get_to(c.patch_size);
  j.at("d_model").get_to(c.d_model);
  j.at("n_heads").get_to(c.n_heads);
  j.at("n_blocks").get_to(c.n_blocks);
  j.at("d_ff").get_to(c.d_ff);
  j.at("n_classes").get_to(c.n_classes);
  c.layernorm_eps = j.value("layernorm_eps", 1e-6);
}

json description_to_json(const ModelDescription& d) {
  json j = d.config;
  j["normalization"] = {{"mean", d.normalization.mean}, {"std", d.normalization.std}};
  if (!d.references.empty()) {
    json refs = json::array();
    for (const auto& r : d.references) {
      json e = {{"image", r.image}, {"fnv1a64", r.fnv1a64}, {"logits", r.logits}};
      if (!r.tokens.empty()) {
        const auto v = r.tokens.values();
        e["tokens"] = {{"shape", r.tokens.shape()}, {"data", std::vector<double>(v.begin(), v.end())}};
      }
      refs.push_back(std::move(e));
    }
    j["references"] = std::move(refs);
  }
  return j;
}

ModelDescription description_from_json(const json& j) {
  ModelDescription d;
  try {
    d.config = j.get<ModelConfig>();
    if (j.contains("normalization")) {
      const auto& n = j.at("normalization");
      n.at("mean").get_to(d.normalization.mean);
      n.at("std").get_to(d.normalization.std);
    }
    for (const auto& e : j.value("references", json::array())) {
      ReferenceDump r;
      e.at("image").get_to(r.image);
      r.fnv1a64 = e.value("fnv1a64", "");
      e.at("logits").get_to(r.logits);
      if (e.contains("tokens")) {
        r.tokens = Tensor(e["tokens"].at("shape").get<Shape>(),
                          e["tokens"].at("data").get<std::vector<double>>());
      }
      d.references.push_back(std::move(r));
    }
  } catch (const json::exception& ex) {
    throw ModelError(std::string("model config: ") + ex.what());
  } catch (const DimensionError& ex) {
    throw ModelError(std::string("model config: reference tokens: ") + ex.what());
  }
  for (double s : d.normalization.std) {
    if (!(s > 0.0)) throw ModelError("model config: normalization std must be positive");
  }
  d.config.validate();
  return d;
}

ModelDescription load_model_description(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open model config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw ModelError("model config " + path.string() + ": " + ex.what());
  }
  return description_from_json(j);
}

void save_model_description(const std::filesystem::path& path, const ModelDescription& d) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << description_to_json(d).dump(2) << '\n';
}

std::string fnv1a64_hex(std::span<const std::byte> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
    h >>= 4;
  }
  return out;
}

std::string fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64_hex(std::as_bytes(std::span<const char>(raw)));
}

}  // namespace tokentm
