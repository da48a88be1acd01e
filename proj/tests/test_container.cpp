// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "support.hpp"
#include "tokentm/error.hpp"
#include "tokentm/fixtures.hpp"
#include "tokentm/model_config.hpp"
#include "tokentm/weight_container.hpp"

namespace tokentm {
namespace {

std::vector<std::byte> bytes_of(const std::string& s) {
  std::vector<std::byte> out;
  for (char c : s) out.push_back(static_cast<std::byte>(c));
  return out;
}

void append(std::vector<std::byte>& out, std::initializer_list<unsigned> raw) {
  for (unsigned b : raw) out.push_back(static_cast<std::byte>(b));
}

// Header length prefix followed by the given header text.
std::vector<std::byte> with_header(const std::string& header) {
  std::vector<std::byte> out;
  std::uint64_t n = header.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((n >> (8 * i)) & 0xff));
  const auto h = bytes_of(header);
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

TEST(WeightContainer, ExactBytesForOneTensor) {
  WeightContainer c;
  c.tensors.emplace("a", Tensor({2}, {1.0, -2.0}, DType::kReal32));
  const std::string header = R"({"a":{"byte_length":8,"byte_offset":0,"dtype":"F32","shape":[2]}})";
  ASSERT_EQ(header.size(), 65u);
  auto want = with_header(header + std::string(7, ' '));
  append(want, {0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0});
  EXPECT_EQ(serialize_weight_container(c), want);
  EXPECT_EQ(want[0], std::byte{72});
}

TEST(WeightContainer, ParsesHandWrittenFile) {
  // F64 tensor stored after an F32 one, header keys deliberately unsorted.
  const std::string header =
      R"({"w":{"shape":[1],"dtype":"F64","byte_offset":4,"byte_length":8},)"
      R"("v":{"dtype":"F32","shape":[],"byte_offset":0,"byte_length":4},"__metadata__":{"source":"hand"}})";
  auto bytes = with_header(header);
  append(bytes, {0x00, 0x00, 0x40, 0x40});                          // 3.0f
  append(bytes, {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xf0, 0xbf});  // -1.0
  const WeightContainer c = parse_weight_container(bytes);
  ASSERT_EQ(c.tensors.size(), 2u);
  EXPECT_EQ(c.tensors.at("v").dtype(), DType::kReal32);
  EXPECT_EQ(c.tensors.at("v").size(), 1u);
  EXPECT_EQ(c.tensors.at("v")[0], 3.0);
  EXPECT_EQ(c.tensors.at("w").dtype(), DType::kReal64);
  EXPECT_EQ(c.tensors.at("w")[0], -1.0);
  EXPECT_EQ(c.metadata.at("source"), "hand");
}

TEST(WeightContainer, RoundTripIsByteIdentical) {
  const ModelBundle bundle = random_model(testing_support::toy_config(2), 5);
  WeightContainer c{bundle.weights(), {{"seed", "5"}}};
  const auto bytes = serialize_weight_container(c);
  const WeightContainer back = parse_weight_container(bytes);
  EXPECT_EQ(back.tensors, c.tensors);
  EXPECT_EQ(back.metadata, c.metadata);
  EXPECT_EQ(serialize_weight_container(back), bytes);
  const std::uint64_t n = std::to_integer<std::uint64_t>(bytes[0]) | std::to_integer<std::uint64_t>(bytes[1]) << 8;
  EXPECT_EQ(n % 8, 0u);
}

TEST(WeightContainer, Real32RoundTripKeepsFloatValues) {
  const ModelBundle bundle = random_model(testing_support::toy_config(1), 6).as(DType::kReal32);
  const auto back = parse_weight_container(serialize_weight_container({bundle.weights(), {}}));
  EXPECT_EQ(back.tensors, bundle.weights());
}

TEST(WeightContainer, FileRoundTrip) {
  testing_support::TempDir dir("container");
  WeightContainer c;
  c.tensors.emplace("x", Tensor::from_rows({{1, 2, 3}, {4, 5, 6}}));
  write_weight_container(dir.path() / "w.bin", c);
  EXPECT_EQ(read_weight_container(dir.path() / "w.bin").tensors, c.tensors);
  EXPECT_THROW(read_weight_container(dir.path() / "missing.bin"), InputError);
}

TEST(WeightContainer, RejectsMalformedInput) {
  const std::vector<std::byte> tiny(4);
  EXPECT_THROW(parse_weight_container(tiny), ModelError);

  auto truncated = with_header(R"({"a":{"dtype":"F64","shape":[2],"byte_offset":0,"byte_length":16}})");
  append(truncated, {0, 0, 0, 0, 0, 0, 0, 0});
  EXPECT_THROW(parse_weight_container(truncated), ModelError);

  auto wrong_length = with_header(R"({"a":{"dtype":"F64","shape":[2],"byte_offset":0,"byte_length":8}})");
  append(wrong_length, {0, 0, 0, 0, 0, 0, 0, 0});
  EXPECT_THROW(parse_weight_container(wrong_length), ModelError);

  auto bad_dtype = with_header(R"({"a":{"dtype":"I8","shape":[1],"byte_offset":0,"byte_length":1}})");
  append(bad_dtype, {0});
  EXPECT_THROW(parse_weight_container(bad_dtype), ModelError);

  auto overlap = with_header(
      R"({"a":{"dtype":"F32","shape":[1],"byte_offset":0,"byte_length":4},"b":{"dtype":"F32","shape":[1],"byte_offset":2,"byte_length":4}})");
  append(overlap, {0, 0, 0, 0, 0, 0});
  EXPECT_THROW(parse_weight_container(overlap), ModelError);

  auto nan = with_header(R"({"a":{"dtype":"F32","shape":[1],"byte_offset":0,"byte_length":4}})");
  append(nan, {0x00, 0x00, 0xc0, 0x7f});
  EXPECT_THROW(parse_weight_container(nan), ModelError);

  auto not_json = with_header("not json");
  EXPECT_THROW(parse_weight_container(not_json), ModelError);
}

TEST(WeightContainer, ReservedNameRejectedOnWrite) {
  WeightContainer c;
  c.tensors.emplace("__metadata__", Tensor({1}));
  EXPECT_THROW(serialize_weight_container(c), ModelError);
}

TEST(ModelConfigJson, ParsesHandWrittenConfig) {
  const auto j = nlohmann::json::parse(R"({
    "image_size": 4, "patch_size": 2, "d_model": 8, "n_heads": 2, "n_blocks": 1,
    "d_ff": 16, "n_classes": 3,
    "normalization": {"mean": [0.5, 0.5, 0.5], "std": [0.25, 0.5, 1.0]},
    "references": [{"image": "img.ppm", "fnv1a64": "00", "logits": [1, 2, 3],
                    "tokens": {"shape": [1, 2], "data": [7, 8]}}]
  })");
  const ModelDescription d = description_from_json(j);
  EXPECT_EQ(d.config.grid(), 2u);
  EXPECT_EQ(d.config.n_tokens(), 5u);
  EXPECT_EQ(d.config.head_dim(), 4u);
  EXPECT_EQ(d.config.n_sublayers(), 2u);
  EXPECT_EQ(d.config.layernorm_eps, 1e-6);
  EXPECT_EQ(d.normalization.std[1], 0.5);
  ASSERT_EQ(d.references.size(), 1u);
  EXPECT_EQ(d.references[0].tokens, Tensor({1, 2}, {7, 8}));
  EXPECT_EQ(description_from_json(description_to_json(d)).references[0].logits, d.references[0].logits);
}

TEST(ModelConfigJson, RoundTripThroughFile) {
  testing_support::TempDir dir("config");
  ModelDescription d = deit_tiny_description();
  save_model_description(dir.path() / "config.json", d);
  const ModelDescription back = load_model_description(dir.path() / "config.json");
  EXPECT_EQ(back.config, d.config);
  EXPECT_EQ(back.normalization.mean, d.normalization.mean);
  EXPECT_EQ(back.normalization.std, d.normalization.std);
}

TEST(ModelConfigJson, InvalidConfigsAreModelErrors) {
  EXPECT_THROW(description_from_json(nlohmann::json::parse(R"({"image_size": 4})")), ModelError);
  EXPECT_THROW(description_from_json(nlohmann::json::parse(
                   R"({"image_size": 5, "patch_size": 2, "d_model": 8, "n_heads": 2, "n_blocks": 1, "d_ff": 16, "n_classes": 3})")),
               ModelError);
  EXPECT_THROW(description_from_json(nlohmann::json::parse(
                   R"({"image_size": 4, "patch_size": 2, "d_model": 9, "n_heads": 2, "n_blocks": 1, "d_ff": 16, "n_classes": 3})")),
               ModelError);
  EXPECT_THROW(description_from_json(nlohmann::json::parse(
                   R"({"image_size": 4, "patch_size": 2, "d_model": 8, "n_heads": 2, "n_blocks": 1, "d_ff": 16, "n_classes": 3,
                       "normalization": {"mean": [0, 0, 0], "std": [1, 0, 1]}})")),
               ModelError);
}

TEST(Fnv1a64, KnownDigests) {
  EXPECT_EQ(fnv1a64_hex({}), "cbf29ce484222325");
  const auto a = bytes_of("a");
  EXPECT_EQ(fnv1a64_hex(a), "af63dc4c8601ec8c");
  const auto foobar = bytes_of("foobar");
  EXPECT_EQ(fnv1a64_hex(foobar), "85944171f73967e8");
}

}  // namespace
}  // namespace tokentm
