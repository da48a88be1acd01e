// SPDX-License-Identifier: Apache-2.0
#include "tokentm/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "tokentm/error.hpp"

namespace tokentm {

namespace {

constexpr unsigned char kViridis[256][3] = {
#include "viridis.inc"
};

struct Netpbm {
  int channels = 0;
  std::size_t width = 0, height = 0;
  unsigned maxval = 0;
  std::vector<double> values;  // interleaved, scaled to [0,1]
};

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Netpbm parse_netpbm(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  std::size_t pos = 2;
  auto next_number = [&]() -> std::size_t {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t value = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) value = value * 10 + (bytes[pos++] - '0');
    if (pos == start) throw InputError("malformed netpbm header in " + path.string());
    return value;
  };
  Netpbm img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  img.width = next_number();
  img.height = next_number();
  img.maxval = static_cast<unsigned>(next_number());
  if (img.maxval == 0 || img.maxval > 65535) throw InputError("unsupported maxval in " + path.string());
  ++pos;  // single whitespace before the raster
  const std::size_t bytes_per = img.maxval > 255 ? 2 : 1;
  const std::size_t count = img.width * img.height * static_cast<std::size_t>(img.channels);
  if (pos + count * bytes_per > bytes.size()) throw InputError("truncated raster in " + path.string());
  img.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned raw = bytes_per == 1 ? bytes[pos + i]
                                        : (static_cast<unsigned>(bytes[pos + 2 * i]) << 8) | bytes[pos + 2 * i + 1];
    img.values[i] = static_cast<double>(raw) / img.maxval;
  }
  return img;
}

Netpbm read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw InputError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw InputError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  Netpbm img;
  img.channels = 3;
  img.width = image.width;
  img.height = image.height;
  img.maxval = 255;
  img.values.resize(buffer.size());
  std::transform(buffer.begin(), buffer.end(), img.values.begin(), [](unsigned char c) { return c / 255.0; });
  return img;
}

Netpbm read_any(const std::filesystem::path& path) {
  auto bytes = read_bytes(path);
  if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G') {
    return read_png(path);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) return parse_netpbm(bytes, path);
  throw InputError("unsupported image format: " + path.string() + " (expected binary PPM/PGM or PNG)");
}

void write_file(const std::filesystem::path& path, const std::string& header, const std::vector<unsigned char>& raster) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << header;
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
}

unsigned quantize(double v, unsigned maxval) {
  return static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
  const Netpbm img = read_any(path);
  Tensor out({img.height, img.width, 3});
  auto v = out.mutable_values();
  for (std::size_t p = 0; p < img.width * img.height; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      v[3 * p + c] = img.channels == 3 ? img.values[3 * p + c] : img.values[p];
    }
  }
  return out;
}

Tensor load_gray(const std::filesystem::path& path) {
  const Netpbm img = read_any(path);
  Tensor out({img.height, img.width});
  auto v = out.mutable_values();
  for (std::size_t p = 0; p < img.width * img.height; ++p) {
    v[p] = img.channels == 1 ? img.values[p]
                             : (img.values[3 * p] + img.values[3 * p + 1] + img.values[3 * p + 2]) / 3.0;
  }
  return out;
}

Tensor load_mask(const std::filesystem::path& path) {
  Tensor gray = load_gray(path);
  for (auto& v : gray.mutable_values()) v = v >= 0.5 ? 1.0 : 0.0;
  return gray;
}

void save_ppm(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) throw DimensionError("save_ppm: expected an H×W×3 image");
  std::vector<unsigned char> raster(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) raster[i] = static_cast<unsigned char>(quantize(rgb[i], 255));
  write_file(path, "P6\n" + std::to_string(rgb.dim(1)) + " " + std::to_string(rgb.dim(0)) + "\n255\n", raster);
}

void save_pgm8(const std::filesystem::path& path, const Tensor& gray) {
  if (gray.rank() != 2) throw DimensionError("save_pgm8: expected a matrix");
  std::vector<unsigned char> raster(gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i) raster[i] = static_cast<unsigned char>(quantize(gray[i], 255));
  write_file(path, "P5\n" + std::to_string(gray.cols()) + " " + std::to_string(gray.rows()) + "\n255\n", raster);
}

void save_pgm16(const std::filesystem::path& path, const Tensor& gray) {
  if (gray.rank() != 2) throw DimensionError("save_pgm16: expected a matrix");
  std::vector<unsigned char> raster;
  raster.reserve(2 * gray.size());
  for (double v : gray.values()) {
    const unsigned q = quantize(v, 65535);
    raster.push_back(static_cast<unsigned char>(q >> 8));
    raster.push_back(static_cast<unsigned char>(q & 0xFF));
  }
  write_file(path, "P5\n" + std::to_string(gray.cols()) + " " + std::to_string(gray.rows()) + "\n65535\n", raster);
}

std::array<double, 3> viridis(double v) {
  const auto idx = static_cast<std::size_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  return {kViridis[idx][0] / 255.0, kViridis[idx][1] / 255.0, kViridis[idx][2] / 255.0};
}

Tensor overlay(const Tensor& image, const Tensor& heat, double alpha) {
  if (image.rank() != 3 || heat.rank() != 2 || image.dim(0) != heat.rows() || image.dim(1) != heat.cols()) {
    throw DimensionError("overlay: heat map does not match image");
  }
  Tensor out = image;
  auto v = out.mutable_values();
  for (std::size_t p = 0; p < heat.size(); ++p) {
    const auto color = viridis(heat[p]);
    for (std::size_t c = 0; c < 3; ++c) v[3 * p + c] = alpha * color[c] + (1.0 - alpha) * v[3 * p + c];
  }
  return out;
}

}  // namespace tokentm
