// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic models and images for tests, demos and smoke runs.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tokentm/model.hpp"

namespace tokentm {

/// Gaussian weights with standard deviation `weight_scale`; layer-norm gains
/// are 1 + noise and biases are small.
ModelBundle random_model(const ModelConfig& config, std::uint64_t seed, double weight_scale = 0.5);

/// Every tensor zero except layer-norm gains, which are one.
ModelBundle zero_model(const ModelConfig& config);

/// DeiT-Tiny geometry: 224 px, 16 px patches, d = 192, 3 heads, 12 blocks,
/// d_ff = 768, 1000 classes, ImageNet normalization constants.
ModelDescription deit_tiny_description();

Tensor random_tokens(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0);

/// [size×size×3] image in [0,1]: noisy background plus one bright disk.
/// `mask` receives the disk as {0,1}.
Tensor synthetic_image(std::size_t size, std::uint64_t seed, Tensor* mask = nullptr);

/// Writes weights.bin and config.json into `dir`.
void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle);

/// Writes `count` synthetic images (PPM), masks (PGM) and manifest.jsonl into
/// `dir`, labelled uniformly at random over the model's classes.
void write_synthetic_dataset(const std::filesystem::path& dir, const ModelConfig& config, std::size_t count,
                             std::uint64_t seed);

}  // namespace tokentm
