// SPDX-License-Identifier: Apache-2.0
//
// Replays the reference dumps stored in a model config (fixture image hash,
// expected logits and optionally expected tokens) against the engine.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tokentm/model.hpp"

namespace tokentm {

struct ReferenceCheck {
  std::string image;
  bool hash_matches = false;
  double logits_max_abs_diff = 0.0;
  std::optional<double> tokens_max_abs_diff;  // set when the dump recorded tokens
};

/// Runs every reference of `bundle.description()` at the bundle's dtype.
/// Image paths resolve against `config_dir`. Throws InputError when a fixture
/// image is missing and ModelError when a dump has the wrong logit count.
std::vector<ReferenceCheck> check_references(const ModelBundle& bundle, const std::filesystem::path& config_dir);

}  // namespace tokentm
