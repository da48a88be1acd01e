// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tokentm/tensor.hpp"

namespace tokentm {

/// Architecture of a pre-LN ViT classifier. Each block contributes two
/// sublayers (MHSA then FFN).
struct ModelConfig {
  std::size_t image_size = 0;
  std::size_t patch_size = 0;
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  std::size_t n_blocks = 0;
  std::size_t d_ff = 0;
  std::size_t n_classes = 0;
  double layernorm_eps = 1e-6;

  /// Patches per image side.
  std::size_t grid() const { return image_size / patch_size; }
  /// [CLS] plus one token per patch.
  std::size_t n_tokens() const { return 1 + grid() * grid(); }
  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t n_sublayers() const { return 2 * n_blocks; }

  /// Throws ModelError when the extents are inconsistent.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Per-channel pixel normalization: (x - mean) / std on [0,1] RGB values.
struct Normalization {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

/// Values recorded by the exporter for one fixture image.
struct ReferenceDump {
  std::string image;     // path relative to the config file
  std::string fnv1a64;   // hex digest of the image file bytes
  std::vector<double> logits;
  Tensor tokens;         // [n×d] tokenize output; empty when not recorded
};

/// Companion JSON of a weight container.
struct ModelDescription {
  ModelConfig config;
  Normalization normalization;
  std::vector<ReferenceDump> references;
};

void to_json(nlohmann::json& j, const ModelConfig& config);
void from_json(const nlohmann::json& j, ModelConfig& config);

nlohmann::json description_to_json(const ModelDescription& description);
ModelDescription description_from_json(const nlohmann::json& j);

ModelDescription load_model_description(const std::filesystem::path& path);
void save_model_description(const std::filesystem::path& path, const ModelDescription& description);

/// 64-bit FNV-1a over raw bytes, as 16 lowercase hex digits.
std::string fnv1a64_hex(std::span<const std::byte> bytes);
std::string fnv1a64_file(const std::filesystem::path& path);

}  // namespace tokentm
