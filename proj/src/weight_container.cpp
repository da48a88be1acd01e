// SPDX-License-Identifier: Apache-2.0
#include "tokentm/weight_container.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "tokentm/error.hpp"

namespace tokentm {

namespace {

using nlohmann::json;

constexpr const char* kMetadataKey = "__metadata__";

template <typename UInt>
UInt load_le(const std::byte* p) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(p[i]) << (8 * i);
  return v;
}

template <typename UInt>
void store_le(UInt v, std::vector<std::byte>& out) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

std::size_t element_size(DType dtype) { return dtype == DType::kReal32 ? 4 : 8; }

DType parse_dtype(const std::string& name, const std::string& tensor) {
  if (name == "F32") return DType::kReal32;
  if (name == "F64") return DType::kReal64;
  throw ModelError("tensor " + tensor + ": unsupported dtype " + name);
}

}  // namespace

WeightContainer parse_weight_container(std::span<const std::byte> bytes) {
  if (bytes.size() < 8) throw ModelError("weight container: truncated header length");
  const std::uint64_t header_len = load_le<std::uint64_t>(bytes.data());
  if (header_len > bytes.size() - 8) throw ModelError("weight container: header runs past end of file");
  const auto* text = reinterpret_cast<const char*>(bytes.data() + 8);

  json header;
  try {
    header = json::parse(text, text + header_len);
  } catch (const json::exception& ex) {
    throw ModelError(std::string("weight container: bad header JSON: ") + ex.what());
  }
  if (!header.is_object()) throw ModelError("weight container: header is not a JSON object");

  const auto payload = bytes.subspan(8 + header_len);
  WeightContainer out;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
  for (const auto& [name, entry] : header.items()) {
    if (name == kMetadataKey) {
      for (const auto& [k, v] : entry.items()) out.metadata[k] = v.get<std::string>();
      continue;
    }
    try {
      const DType dtype = parse_dtype(entry.at("dtype").get<std::string>(), name);
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("byte_offset").get<std::uint64_t>();
      const auto length = entry.at("byte_length").get<std::uint64_t>();
      const std::size_t count = shape_size(shape);
      if (length != count * element_size(dtype)) {
        throw ModelError("tensor " + name + ": byte_length " + std::to_string(length) +
                         " does not match shape " + shape_to_string(shape));
      }
      if (offset > payload.size() || length > payload.size() - offset) {
        throw ModelError("tensor " + name + ": payload range outside the file");
      }
      extents.emplace_back(offset, length);
      std::vector<double> values(count);
      const std::byte* p = payload.data() + offset;
      for (std::size_t i = 0; i < count; ++i) {
        values[i] = dtype == DType::kReal32
                        ? static_cast<double>(std::bit_cast<float>(load_le<std::uint32_t>(p + 4 * i)))
                        : std::bit_cast<double>(load_le<std::uint64_t>(p + 8 * i));
      }
      out.tensors.emplace(name, Tensor(shape, std::move(values), dtype));
    } catch (const json::exception& ex) {
      throw ModelError("tensor " + name + ": malformed header entry: " + ex.what());
    } catch (const NumericError&) {
      throw ModelError("tensor " + name + ": contains NaN or infinity");
    }
  }
  std::sort(extents.begin(), extents.end());
  for (std::size_t i = 1; i < extents.size(); ++i) {
    if (extents[i - 1].first + extents[i - 1].second > extents[i].first) {
      throw ModelError("weight container: overlapping tensor payloads");
    }
  }
  return out;
}

std::vector<std::byte> serialize_weight_container(const WeightContainer& container) {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : container.tensors) {
    if (name == kMetadataKey) throw ModelError("weight container: reserved tensor name");
    const std::uint64_t length = t.size() * element_size(t.dtype());
    header[name] = {{"dtype", dtype_name(t.dtype())},
                    {"shape", t.shape()},
                    {"byte_offset", offset},
                    {"byte_length", length}};
    offset += length;
  }
  if (!container.metadata.empty()) header[kMetadataKey] = container.metadata;

  std::string text = header.dump();
  text.append((8 - text.size() % 8) % 8, ' ');

  std::vector<std::byte> out;
  out.reserve(8 + text.size() + offset);
  store_le<std::uint64_t>(text.size(), out);
  for (char c : text) out.push_back(static_cast<std::byte>(c));
  for (const auto& [name, t] : container.tensors) {
    for (double v : t.values()) {
      if (t.dtype() == DType::kReal32) {
        store_le(std::bit_cast<std::uint32_t>(static_cast<float>(v)), out);
      } else {
        store_le(std::bit_cast<std::uint64_t>(v), out);
      }
    }
  }
  return out;
}

WeightContainer read_weight_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open weight container " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_weight_container(std::as_bytes(std::span<const char>(raw)));
}

void write_weight_container(const std::filesystem::path& path, const WeightContainer& container) {
  const auto bytes = serialize_weight_container(container);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace tokentm
