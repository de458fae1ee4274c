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

// PNG encode/decode on top of libpng. RGB rasters for images, 8-bit indexed
// (or grayscale) rasters for label maps where the stored index is the label.

#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "saadjust/colorspace.hpp"

namespace saadjust {

using Bytes = std::vector<std::uint8_t>;

/// Single-channel 8-bit map (parse labels, adjustment maps).
struct IndexMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  IndexMap() = default;
  IndexMap(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t pixel_count() const { return data.size(); }
  std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * width + c];
  }
  bool operator==(const IndexMap&) const = default;
};

namespace detail {

struct PngReadCursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t offset;
};

inline void png_read_from_memory(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + len > cur->size) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, cur->data + cur->offset, len);
  cur->offset += len;
}

inline void png_write_to_memory(png_structp png, png_bytep in, png_size_t len) {
  auto* buf = static_cast<Bytes*>(png_get_io_ptr(png));
  buf->insert(buf->end(), in, in + len);
}

inline void png_flush_noop(png_structp) {}

inline void png_warning_silent(png_structp, png_const_charp) {}

// Decoded pixel rows plus the properties needed to interpret them.
struct DecodedPng {
  int height = 0;
  int width = 0;
  int channels = 0;
  bool palette = false;
  Bytes pixels;
  std::string error;
};

// Decodes to 8 bits per sample. Palette images keep their indices when
// `keep_indices` is set and are expanded to RGB otherwise.
inline DecodedPng decode_png(const Bytes& encoded, bool keep_indices) {
  DecodedPng out;
  if (encoded.size() < 8 || png_sig_cmp(encoded.data(), 0, 8) != 0) {
    out.error = "not a PNG stream";
    return out;
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                           png_warning_silent);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    out.error = "libpng allocation failed";
    return out;
  }
  PngReadCursor cursor{encoded.data(), encoded.size(), 0};
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    out.pixels.clear();
    out.error = "corrupt PNG stream";
    return out;
  }
  png_set_read_fn(png, &cursor, png_read_from_memory);
  png_read_info(png, info);
  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (bit_depth < 8) png_set_packing(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    out.palette = true;
    if (!keep_indices) png_set_palette_to_rgb(png);
  } else if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8 && !keep_indices) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (!keep_indices && png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.pixels.resize(stride * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int r = 0; r < out.height; ++r) rows[r] = out.pixels.data() + stride * r;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline Bytes encode_png(int height, int width, int color_type, const std::uint8_t* pixels,
                        int channels, const std::vector<png_color>& palette) {
  Bytes out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                            png_warning_silent);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng allocation failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_write_to_memory, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_set_PLTE(png, info, palette.data(), static_cast<int>(palette.size()));
  }
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (int r = 0; r < height; ++r) {
    rows[r] = const_cast<png_bytep>(pixels + stride * r);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace detail

inline Bytes read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

/// Decodes any PNG to 8-bit RGB (gray is replicated, alpha dropped).
inline Raster decode_png_rgb(const Bytes& encoded) {
  auto dec = detail::decode_png(encoded, /*keep_indices=*/false);
  if (!dec.error.empty()) throw std::runtime_error(dec.error);
  Raster out(dec.height, dec.width, 3);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    for (int ch = 0; ch < 3; ++ch) {
      out.data[3 * i + ch] = dec.pixels[i * dec.channels + (dec.channels >= 3 ? ch : 0)];
    }
  }
  return out;
}

/// Decodes an indexed or 8-bit grayscale PNG; the stored value is the label.
inline IndexMap decode_png_indices(const Bytes& encoded) {
  auto dec = detail::decode_png(encoded, /*keep_indices=*/true);
  if (!dec.error.empty()) throw std::runtime_error(dec.error);
  if (dec.channels != 1) {
    throw std::runtime_error("label PNG must be indexed or single-channel gray");
  }
  IndexMap out(dec.height, dec.width);
  out.data = std::move(dec.pixels);
  return out;
}

inline Bytes encode_png_rgb(const Raster& image) {
  if (image.channels != 3) throw std::invalid_argument("encode_png_rgb: need 3 channels");
  return detail::encode_png(image.height, image.width, PNG_COLOR_TYPE_RGB, image.data.data(),
                            3, {});
}

/// Fixed palette for label visualisation; palette index == label.
inline std::vector<png_color> label_palette() {
  static const png_color base[] = {{230, 25, 75},  {60, 180, 75},   {255, 225, 25},
                                   {0, 130, 200},  {245, 130, 48},  {145, 30, 180},
                                   {70, 240, 240}, {240, 50, 230}};
  std::vector<png_color> pal(256);
  for (int i = 0; i < 256; ++i) {
    if (i < 8) {
      pal[i] = base[i];
    } else {
      const auto v = static_cast<png_byte>(i);
      pal[i] = {v, static_cast<png_byte>(255 - v), static_cast<png_byte>((v * 7) & 255)};
    }
  }
  return pal;
}

inline Bytes encode_png_indexed(const IndexMap& map) {
  return detail::encode_png(map.height, map.width, PNG_COLOR_TYPE_PALETTE, map.data.data(), 1,
                            label_palette());
}

inline Raster read_png_rgb(const std::filesystem::path& path) {
  try {
    return decode_png_rgb(read_file_bytes(path));
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

inline IndexMap read_png_indices(const std::filesystem::path& path) {
  try {
    return decode_png_indices(read_file_bytes(path));
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

inline void write_png_rgb(const std::filesystem::path& path, const Raster& image) {
  write_file_bytes(path, encode_png_rgb(image));
}

inline void write_png_indexed(const std::filesystem::path& path, const IndexMap& map) {
  write_file_bytes(path, encode_png_indexed(map));
}

}  // namespace saadjust
