// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "tokentm/tensor.hpp"

namespace tokentm {

/// RGB image as [H×W×3] in [0,1]. Reads binary PPM/PGM (8 or 16 bit; gray is
/// replicated to three channels) and PNG.
Tensor load_image(const std::filesystem::path& path);

/// Single-channel image as [H×W] in [0,1] (color inputs are averaged).
Tensor load_gray(const std::filesystem::path& path);

/// Binary mask as [H×W] in {0,1}: gray values ≥ 0.5 are foreground.
Tensor load_mask(const std::filesystem::path& path);

/// 8-bit binary PPM (P6) from [H×W×3] in [0,1].
void save_ppm(const std::filesystem::path& path, const Tensor& rgb);

/// 8-bit binary PGM (P5) from [H×W] in [0,1].
void save_pgm8(const std::filesystem::path& path, const Tensor& gray);

/// 16-bit binary PGM (P5, big-endian samples, maxval 65535) from [H×W] in [0,1].
void save_pgm16(const std::filesystem::path& path, const Tensor& gray);

/// Viridis color for v in [0,1] (clamped), channels in [0,1].
std::array<double, 3> viridis(double v);

/// alpha·viridis(heat) + (1 − alpha)·image, per pixel. `heat` is [H×W].
Tensor overlay(const Tensor& image, const Tensor& heat, double alpha = 0.5);

}  // namespace tokentm
