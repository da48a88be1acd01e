// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor weight container.
//
//   bytes [0, 8)        header length N, unsigned 64-bit little-endian
//   bytes [8, 8 + N)    UTF-8 JSON object:
//                         name -> {"dtype": "F32"|"F64", "shape": [...],
//                                  "byte_offset": o, "byte_length": l}
//                       an optional "__metadata__" entry maps strings to strings
//   bytes [8 + N, ...)  payload; byte_offset is relative to its start,
//                       values are little-endian IEEE-754
//
// The writer emits names in lexicographic order, packs payloads back to back
// and pads the header with spaces to a multiple of 8 bytes.

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tokentm/tensor.hpp"

namespace tokentm {

using TensorMap = std::map<std::string, Tensor>;

struct WeightContainer {
  TensorMap tensors;
  std::map<std::string, std::string> metadata;
};

WeightContainer parse_weight_container(std::span<const std::byte> bytes);
std::vector<std::byte> serialize_weight_container(const WeightContainer& container);

WeightContainer read_weight_container(const std::filesystem::path& path);
void write_weight_container(const std::filesystem::path& path, const WeightContainer& container);

}  // namespace tokentm
