// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "tokentm/fixtures.hpp"
#include "tokentm/model.hpp"

namespace testing_support {

inline tokentm::ModelConfig toy_config(std::size_t blocks = 1, std::size_t grid = 2, std::size_t d = 8,
                                       std::size_t heads = 2, std::size_t patch = 2) {
  return {.image_size = grid * patch,
          .patch_size = patch,
          .d_model = d,
          .n_heads = heads,
          .n_blocks = blocks,
          .d_ff = 2 * d,
          .n_classes = 4,
          .layernorm_eps = 1e-6};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("tokentm_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Directory holding an exported DeiT-Tiny (weights.bin + config.json), if the
/// TOKENTM_DEIT_TINY environment variable names one.
inline std::filesystem::path deit_tiny_dir() {
  const char* dir = std::getenv("TOKENTM_DEIT_TINY");
  return dir ? std::filesystem::path(dir) : std::filesystem::path();
}

/// The exported DeiT-Tiny when available, otherwise a model with DeiT-Tiny
/// geometry and seeded Gaussian weights scaled by 1/sqrt(d).
inline tokentm::ModelBundle deit_tiny_or_proxy(bool* is_real = nullptr) {
  const auto dir = deit_tiny_dir();
  if (is_real) *is_real = !dir.empty();
  if (!dir.empty()) return tokentm::ModelBundle::load(dir / "weights.bin", dir / "config.json");
  auto description = tokentm::deit_tiny_description();
  auto weights = tokentm::random_model(description.config, 2024, 0.07).weights();
  return tokentm::ModelBundle(std::move(description), std::move(weights));
}

}  // namespace testing_support
