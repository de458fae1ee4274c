// Copyright 2026 The SA-Adjust Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// sRGB <-> CIELab (D65) conversion and the Lab-space L2 image distance.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace saadjust {

/// 8-bit raster, interleaved channels, row-major.
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> data;

  Raster() = default;
  Raster(int h, int w, int c = 3)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, 0) {}

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width;
  }
  std::uint8_t& at(int r, int c, int ch) {
    return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  std::uint8_t at(int r, int c, int ch) const {
    return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
};

using Lab = std::array<double, 3>;

/// Lab image, interleaved (L, a, b) per pixel, row-major.
struct LabImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  LabImage() = default;
  LabImage(int h, int w)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0.0) {}

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width;
  }
  bool same_shape(const LabImage& o) const {
    return height == o.height && width == o.width;
  }
  double* px(int r, int c) {
    return &data[(static_cast<std::size_t>(r) * width + c) * 3];
  }
  const double* px(int r, int c) const {
    return &data[(static_cast<std::size_t>(r) * width + c) * 3];
  }
  Lab get(int r, int c) const {
    const double* p = px(r, c);
    return {p[0], p[1], p[2]};
  }
  void set(int r, int c, const Lab& v) {
    double* p = px(r, c);
    p[0] = v[0];
    p[1] = v[1];
    p[2] = v[2];
  }
};

namespace detail {

// sRGB primaries to XYZ, D65.
inline constexpr double kRgbToXyz[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041}};

inline constexpr double kXyzToRgb[3][3] = {
    {3.2404542, -1.5371385, -0.4985314},
    {-0.9692660, 1.8760108, 0.0415560},
    {0.0556434, -0.2040259, 1.0572252}};

// White point = image of linear (1,1,1), so reference white lands exactly on
// L=100, a=b=0.
inline constexpr double kWhite[3] = {
    kRgbToXyz[0][0] + kRgbToXyz[0][1] + kRgbToXyz[0][2],
    kRgbToXyz[1][0] + kRgbToXyz[1][1] + kRgbToXyz[1][2],
    kRgbToXyz[2][0] + kRgbToXyz[2][1] + kRgbToXyz[2][2]};

inline constexpr double kEpsilon = 216.0 / 24389.0;  // (6/29)^3
inline constexpr double kKappa = 24389.0 / 27.0;

inline double srgb_decode(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double srgb_encode(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

inline double lab_f(double t) {
  return t > kEpsilon ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0;
}

inline double lab_f_inv(double f) {
  const double f3 = f * f * f;
  return f3 > kEpsilon ? f3 : (116.0 * f - 16.0) / kKappa;
}

inline const std::array<double, 256>& decode_table() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) t[i] = srgb_decode(i / 255.0);
    return t;
  }();
  return table;
}

}  // namespace detail

inline Lab rgb_to_lab(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const auto& dec = detail::decode_table();
  const double rgb[3] = {dec[r8], dec[g8], dec[b8]};
  double f[3];
  for (int i = 0; i < 3; ++i) {
    const double v = detail::kRgbToXyz[i][0] * rgb[0] +
                     detail::kRgbToXyz[i][1] * rgb[1] +
                     detail::kRgbToXyz[i][2] * rgb[2];
    f[i] = detail::lab_f(v / detail::kWhite[i]);
  }
  // Grays: equal channels give x/Xn, y/Yn, z/Zn equal up to rounding; collapse
  // them so achromatic input has exactly zero chroma.
  if (r8 == g8 && g8 == b8) f[0] = f[2] = f[1];
  return {116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])};
}

inline std::array<std::uint8_t, 3> lab_to_rgb(const Lab& lab) {
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  const double xyz[3] = {detail::lab_f_inv(fx) * detail::kWhite[0],
                         detail::lab_f_inv(fy) * detail::kWhite[1],
                         detail::lab_f_inv(fz) * detail::kWhite[2]};
  std::array<std::uint8_t, 3> out{};
  for (int i = 0; i < 3; ++i) {
    const double lin = detail::kXyzToRgb[i][0] * xyz[0] +
                       detail::kXyzToRgb[i][1] * xyz[1] +
                       detail::kXyzToRgb[i][2] * xyz[2];
    const double enc = std::clamp(detail::srgb_encode(std::max(lin, 0.0)), 0.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::lround(enc * 255.0));
  }
  return out;
}

inline LabImage srgb_to_lab(const Raster& image) {
  if (image.channels != 3) {
    throw std::invalid_argument("srgb_to_lab: expected 3 channels, got " +
                                std::to_string(image.channels));
  }
  LabImage out(image.height, image.width);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      out.set(r, c, rgb_to_lab(image.at(r, c, 0), image.at(r, c, 1), image.at(r, c, 2)));
    }
  }
  return out;
}

inline Raster lab_to_srgb(const LabImage& image) {
  Raster out(image.height, image.width, 3);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const auto rgb = lab_to_rgb(image.get(r, c));
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = rgb[ch];
    }
  }
  return out;
}

/// Mean over (masked) pixels of the per-pixel Euclidean Lab difference.
/// `mask`, when given, has one entry per pixel; nonzero selects the pixel.
inline double lab_l2_distance(const LabImage& a, const LabImage& b,
                              std::optional<std::span<const std::uint8_t>> mask = std::nullopt) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("lab_l2_distance: shape mismatch (" +
                                std::to_string(a.height) + "x" + std::to_string(a.width) +
                                " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + ")");
  }
  if (mask && mask->size() != a.pixel_count()) {
    throw std::invalid_argument("lab_l2_distance: mask size does not match image");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < a.pixel_count(); ++i) {
    if (mask && (*mask)[i] == 0) continue;
    const double dl = a.data[3 * i] - b.data[3 * i];
    const double da = a.data[3 * i + 1] - b.data[3 * i + 1];
    const double db = a.data[3 * i + 2] - b.data[3 * i + 2];
    sum += std::sqrt(dl * dl + da * da + db * db);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("lab_l2_distance: no pixels selected");
  return sum / static_cast<double>(count);
}

}  // namespace saadjust
