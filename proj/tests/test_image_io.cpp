// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"
#include "tokentm/dataset.hpp"
#include "tokentm/error.hpp"
#include "tokentm/fixtures.hpp"
#include "tokentm/image_io.hpp"

namespace tokentm {
namespace {

using testing_support::TempDir;

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

TEST(ImageIo, PpmRoundTripAtEightBits) {
  TempDir dir("ppm");
  const Tensor img = synthetic_image(5, 1);
  save_ppm(dir.path() / "a.ppm", img);
  const Tensor back = load_image(dir.path() / "a.ppm");
  ASSERT_EQ(back.shape(), img.shape());
  EXPECT_LE(max_abs_difference(back, img), 0.5 / 255.0 + 1e-12);
}

TEST(ImageIo, Pgm16ExactBytes) {
  TempDir dir("pgm16");
  save_pgm16(dir.path() / "h.pgm", Tensor::from_rows({{0.0, 1.0}, {0.5, 0.25}}));
  std::string want = "P5\n2 2\n65535\n";
  for (unsigned v : {0u, 65535u, 32768u, 16384u}) {
    want.push_back(static_cast<char>(v >> 8));
    want.push_back(static_cast<char>(v & 0xff));
  }
  EXPECT_EQ(read_all(dir.path() / "h.pgm"), want);
  const Tensor g = load_gray(dir.path() / "h.pgm");
  EXPECT_DOUBLE_EQ(g(0, 1), 1.0);
  EXPECT_NEAR(g(1, 0), 0.5, 1e-5);
}

TEST(ImageIo, GrayExpandsToRgbAndMaskThresholds) {
  TempDir dir("gray");
  write_all(dir.path() / "m.pgm", std::string("P5\n# comment\n3 1\n255\n") + '\x00' + '\x80' + '\xff');
  const Tensor rgb = load_image(dir.path() / "m.pgm");
  EXPECT_EQ(rgb.shape(), (Shape{1, 3, 3}));
  EXPECT_EQ(rgb(0, 2, 1), 1.0);
  EXPECT_EQ(load_mask(dir.path() / "m.pgm"), Tensor::from_rows({{0, 1, 1}}));
}

TEST(ImageIo, DecodesPng) {
  TempDir dir("png");
  const unsigned char png[] = {
      0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00,
      0x00, 0x02, 0x00, 0x00, 0x00, 0x01, 0x08, 0x02, 0x00, 0x00, 0x00, 0x7b, 0x40, 0xe8, 0xdd, 0x00, 0x00, 0x00,
      0x0f, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0xf8, 0xcf, 0xc0, 0xc0, 0xd0, 0xf0, 0x1f, 0x00, 0x08, 0x00,
      0x02, 0x7f, 0x9c, 0x45, 0x40, 0x4e, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82};
  write_all(dir.path() / "p.png", std::string(reinterpret_cast<const char*>(png), sizeof(png)));
  const Tensor img = load_image(dir.path() / "p.png");
  ASSERT_EQ(img.shape(), (Shape{1, 2, 3}));
  EXPECT_EQ(img(0, 0, 0), 1.0);
  EXPECT_EQ(img(0, 0, 1), 0.0);
  EXPECT_DOUBLE_EQ(img(0, 1, 1), 128.0 / 255.0);
  EXPECT_EQ(img(0, 1, 2), 1.0);
}

TEST(ImageIo, Errors) {
  TempDir dir("bad");
  EXPECT_THROW(load_image(dir.path() / "missing.ppm"), InputError);
  write_all(dir.path() / "t.ppm", "P6\n4 4\n255\nabc");
  EXPECT_THROW(load_image(dir.path() / "t.ppm"), InputError);
  write_all(dir.path() / "x.txt", "hello");
  EXPECT_THROW(load_image(dir.path() / "x.txt"), InputError);
}

TEST(Viridis, EndpointsAndOverlay) {
  const auto lo = viridis(0.0), hi = viridis(1.0);
  EXPECT_NEAR(lo[0], 0.267, 0.01);
  EXPECT_NEAR(lo[2], 0.329, 0.01);
  EXPECT_NEAR(hi[0], 0.993, 0.01);
  EXPECT_NEAR(hi[1], 0.906, 0.01);
  EXPECT_EQ(viridis(-3.0), lo);
  Tensor img({1, 1, 3});
  const Tensor o = overlay(img, Tensor({1, 1}, {1.0}), 0.5);
  EXPECT_DOUBLE_EQ(o(0, 0, 0), 0.5 * hi[0]);
  EXPECT_THROW(overlay(img, Tensor({2, 1}), 0.5), DimensionError);
}

TEST(Dataset, ManifestResolvesRelativePaths) {
  TempDir dir("manifest");
  write_synthetic_dataset(dir.path(), {.image_size = 8,
                                       .patch_size = 4,
                                       .d_model = 4,
                                       .n_heads = 1,
                                       .n_blocks = 1,
                                       .d_ff = 4,
                                       .n_classes = 3,
                                       .layernorm_eps = 1e-6},
                          3, 7);
  const auto records = read_manifest(dir.path() / "manifest.jsonl");
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0].image_path, dir.path() / "image_0.ppm");
  EXPECT_LT(records[0].label, 3u);
  const auto samples = load_samples(records);
  EXPECT_EQ(samples[2].image.shape(), (Shape{8, 8, 3}));
  EXPECT_EQ(samples[2].mask.shape(), (Shape{8, 8}));
}

TEST(Dataset, ManifestErrorsNameTheLine) {
  TempDir dir("badmanifest");
  write_all(dir.path() / "m.jsonl", "{\"image_path\": \"a.ppm\", \"label\": 1}\n\n{\"label\": 2}\n");
  try {
    read_manifest(dir.path() / "m.jsonl");
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos);
  }
  write_all(dir.path() / "empty.jsonl", "\n");
  EXPECT_THROW(read_manifest(dir.path() / "empty.jsonl"), InputError);
}

TEST(Dataset, MaskSizeMustMatchImage) {
  TempDir dir("masksize");
  save_ppm(dir.path() / "a.ppm", synthetic_image(4, 1));
  save_pgm8(dir.path() / "a_mask.pgm", Tensor({3, 4}));
  ManifestRecord r{dir.path() / "a.ppm", 0, dir.path() / "a_mask.pgm"};
  EXPECT_THROW(load_samples({r}), InputError);
}

}  // namespace
}  // namespace tokentm
