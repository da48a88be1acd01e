// SPDX-License-Identifier: Apache-2.0
#include "tokentm/fixtures.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "tokentm/error.hpp"
#include "tokentm/image_io.hpp"

namespace tokentm {

namespace {

bool is_norm_gain(const std::string& name) {
  return name.ends_with("ln1.g") || name.ends_with("ln2.g") || name == "norm.g";
}

bool is_bias(const std::string& name) {
  return name.ends_with(".b") || name.ends_with(".bq") || name.ends_with(".bk") || name.ends_with(".bv") ||
         name.ends_with(".bo") || name.ends_with(".b1") || name.ends_with(".b2");
}

}  // namespace

ModelBundle random_model(const ModelConfig& config, std::uint64_t seed, double weight_scale) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TensorMap weights;
  for (const auto& [name, shape] : expected_tensors(config)) {
    Tensor t(shape);
    for (auto& v : t.mutable_values()) {
      const double z = normal(rng);
      if (is_norm_gain(name)) {
        v = 1.0 + 0.1 * z;
      } else if (is_bias(name)) {
        v = 0.1 * z;
      } else {
        v = weight_scale * z;
      }
    }
    weights.emplace(name, std::move(t));
  }
  ModelDescription description;
  description.config = config;
  return ModelBundle(std::move(description), std::move(weights));
}

ModelBundle zero_model(const ModelConfig& config) {
  TensorMap weights;
  for (const auto& [name, shape] : expected_tensors(config)) {
    Tensor t(shape);
    if (is_norm_gain(name)) {
      for (auto& v : t.mutable_values()) v = 1.0;
    }
    weights.emplace(name, std::move(t));
  }
  ModelDescription description;
  description.config = config;
  return ModelBundle(std::move(description), std::move(weights));
}

ModelDescription deit_tiny_description() {
  ModelDescription d;
  d.config = {.image_size = 224,
              .patch_size = 16,
              .d_model = 192,
              .n_heads = 3,
              .n_blocks = 12,
              .d_ff = 768,
              .n_classes = 1000,
              .layernorm_eps = 1e-6};
  d.normalization.mean = {0.485, 0.456, 0.406};
  d.normalization.std = {0.229, 0.224, 0.225};
  return d;
}

Tensor random_tokens(std::size_t n, std::size_t d, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t({n, d});
  for (auto& v : t.mutable_values()) v = normal(rng);
  return t;
}

Tensor synthetic_image(std::size_t size, std::uint64_t seed, Tensor* mask) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = static_cast<double>(size);
  const double cy = s * (0.3 + 0.4 * unit(rng));
  const double cx = s * (0.3 + 0.4 * unit(rng));
  const double radius = s * (0.15 + 0.1 * unit(rng));
  const std::array<double, 3> color{0.5 + 0.5 * unit(rng), 0.5 + 0.5 * unit(rng), 0.5 + 0.5 * unit(rng)};
  Tensor image({size, size, 3});
  if (mask) *mask = Tensor({size, size});
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
      const bool inside = dy * dy + dx * dx <= radius * radius;
      for (std::size_t c = 0; c < 3; ++c) {
        image(y, x, c) = inside ? color[c] : 0.25 * unit(rng);
      }
      if (mask) (*mask)(y, x) = inside ? 1.0 : 0.0;
    }
  }
  return image;
}

void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle) {
  std::filesystem::create_directories(dir);
  write_weight_container(dir / "weights.bin", {bundle.weights(), {}});
  save_model_description(dir / "config.json", bundle.description());
}

void write_synthetic_dataset(const std::filesystem::path& dir, const ModelConfig& config, std::size_t count,
                             std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed);
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw InputError("cannot write " + (dir / "manifest.jsonl").string());
  for (std::size_t i = 0; i < count; ++i) {
    Tensor mask;
    const Tensor image = synthetic_image(config.image_size, rng(), &mask);
    const std::string stem = "image_" + std::to_string(i);
    save_ppm(dir / (stem + ".ppm"), image);
    save_pgm8(dir / (stem + "_mask.pgm"), mask);
    const nlohmann::json record = {{"image_path", stem + ".ppm"},
                                   {"label", rng() % config.n_classes},
                                   {"mask_path", stem + "_mask.pgm"}};
    manifest << record.dump() << '\n';
  }
}

}  // namespace tokentm
