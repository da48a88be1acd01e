// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "tokentm/evaluation.hpp"

namespace tokentm {

/// One line of a JSON-lines manifest:
///   {"image_path": "...", "label": 3, "mask_path": "..."}
/// Relative paths resolve against the manifest's directory.
struct ManifestRecord {
  std::filesystem::path image_path;
  std::size_t label = 0;
  std::optional<std::filesystem::path> mask_path;
};

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

/// Loads images (and masks when present). Masks must match the image size.
std::vector<EvalSample> load_samples(const std::vector<ManifestRecord>& records);

}  // namespace tokentm
