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

// Training data: dataset ingestion, augmentation, sparse pixel sampling and a
// synthetic benchmark with known per-region presets.
//
// Dataset layout on disk:
//   root/input/<name>.png             sRGB input photos
//   root/target/<effect>/<name>.png   retouched ground truth, one dir per effect
//   root/parse/<name>.png             optional label map (indexed or gray PNG,
//                                     255 = ignore)

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "saadjust/colorspace.hpp"
#include "saadjust/kv_config.hpp"
#include "saadjust/png_io.hpp"

namespace saadjust {

inline constexpr std::uint8_t kIgnoreLabel = 255;

enum class Effect { ForegroundPopOut, LocalXpro, Watercolor, Synthetic };

inline std::string effect_name(Effect e) {
  switch (e) {
    case Effect::ForegroundPopOut: return "foreground_popout";
    case Effect::LocalXpro: return "local_xpro";
    case Effect::Watercolor: return "watercolor";
    case Effect::Synthetic: return "synthetic";
  }
  return "unknown";
}

inline Effect parse_effect(const std::string& s) {
  for (Effect e : {Effect::ForegroundPopOut, Effect::LocalXpro, Effect::Watercolor,
                   Effect::Synthetic}) {
    if (effect_name(e) == s) return e;
  }
  throw std::invalid_argument("unknown effect '" + s + "'");
}

struct AdjustmentExample {
  std::string name;
  Effect effect = Effect::Synthetic;
  LabImage input;
  LabImage target;
  std::optional<IndexMap> parse_labels;

  int height() const { return input.height; }
  int width() const { return input.width; }

  void validate() const {
    if (!input.same_shape(target)) {
      throw std::invalid_argument("example '" + name + "': input " +
                                  std::to_string(input.height) + "x" +
                                  std::to_string(input.width) + " vs target " +
                                  std::to_string(target.height) + "x" +
                                  std::to_string(target.width));
    }
    if (parse_labels &&
        (parse_labels->height != input.height || parse_labels->width != input.width)) {
      throw std::invalid_argument("example '" + name + "': parse labels shape mismatch");
    }
  }
};

struct PixelCoord {
  int row = 0;
  int col = 0;
  bool operator==(const PixelCoord&) const = default;
  auto operator<=>(const PixelCoord&) const = default;
};

struct PixelBatch {
  std::vector<PixelCoord> coordinates;
  std::vector<Lab> input_colors;
  std::vector<Lab> target_colors;
};

// ---------------------------------------------------------------------------
// Loading

inline std::vector<AdjustmentExample> load_dataset(const std::filesystem::path& root,
                                                   std::optional<Effect> only = std::nullopt) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) {
    throw std::runtime_error("dataset root is not a directory: " + root.string());
  }
  std::vector<AdjustmentExample> out;
  const fs::path input_dir = root / "input";
  const fs::path target_dir = root / "target";
  const fs::path parse_dir = root / "parse";
  if (!fs::is_directory(input_dir)) return out;

  std::vector<fs::path> inputs;
  for (const auto& entry : fs::directory_iterator(input_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      inputs.push_back(entry.path());
    }
  }
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) return out;

  std::vector<Effect> effects;
  if (fs::is_directory(target_dir)) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(target_dir)) {
      if (entry.is_directory()) names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    for (const auto& n : names) {
      const Effect e = parse_effect(n);
      if (!only || *only == e) effects.push_back(e);
    }
  }
  if (effects.empty()) {
    throw std::runtime_error("dataset " + root.string() + ": no target/<effect> directory" +
                             (only ? " for effect " + effect_name(*only) : std::string()));
  }

  for (Effect effect : effects) {
    for (const auto& in_path : inputs) {
      const auto fname = in_path.filename();
      const fs::path tgt_path = target_dir / effect_name(effect) / fname;
      if (!fs::exists(tgt_path)) {
        throw std::runtime_error("missing target for input " + in_path.string() +
                                 " (expected " + tgt_path.string() + ")");
      }
      AdjustmentExample ex;
      ex.name = in_path.stem().string();
      ex.effect = effect;
      ex.input = srgb_to_lab(read_png_rgb(in_path));
      ex.target = srgb_to_lab(read_png_rgb(tgt_path));
      if (fs::exists(parse_dir / fname)) ex.parse_labels = read_png_indices(parse_dir / fname);
      try {
        ex.validate();
      } catch (const std::exception& e) {
        throw std::runtime_error("size mismatch in pair " + in_path.string() + " / " +
                                 tgt_path.string() + ": " + e.what());
      }
      out.push_back(std::move(ex));
    }
  }
  return out;
}

/// Writes examples in the dataset layout. Lab values are clipped to sRGB.
inline void save_dataset(const std::filesystem::path& root,
                         const std::vector<AdjustmentExample>& examples) {
  namespace fs = std::filesystem;
  for (const auto& ex : examples) {
    const fs::path tdir = root / "target" / effect_name(ex.effect);
    fs::create_directories(root / "input");
    fs::create_directories(tdir);
    write_png_rgb(root / "input" / (ex.name + ".png"), lab_to_srgb(ex.input));
    write_png_rgb(tdir / (ex.name + ".png"), lab_to_srgb(ex.target));
    if (ex.parse_labels) {
      fs::create_directories(root / "parse");
      write_png_indexed(root / "parse" / (ex.name + ".png"), *ex.parse_labels);
    }
  }
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentParams {
  double angle_degrees = 0.0;
  bool flip = false;
};

inline constexpr double kMaxRotationDegrees = 10.0;

inline AugmentParams draw_augment_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(-kMaxRotationDegrees, kMaxRotationDegrees);
  std::bernoulli_distribution flip(0.5);
  AugmentParams p;
  p.angle_degrees = angle(rng);
  p.flip = flip(rng);
  return p;
}

namespace detail {

// Maps an output canvas pixel to a (fractional) source location. Rotation is
// about the source image centre; the source occupies the top-left of the
// canvas and everything outside it replicates the nearest boundary pixel.
struct WarpMap {
  double cos_t, sin_t, cy, cx;
  bool flip;
  int src_w;

  WarpMap(const AugmentParams& p, int src_h, int src_w_)
      : cos_t(std::cos(p.angle_degrees * std::numbers::pi / 180.0)),
        sin_t(std::sin(p.angle_degrees * std::numbers::pi / 180.0)),
        cy(0.5 * (src_h - 1)),
        cx(0.5 * (src_w_ - 1)),
        flip(p.flip),
        src_w(src_w_) {}

  std::pair<double, double> source(int r, int c) const {
    const double dy = r - cy;
    const double dx = c - cx;
    const double sy = cos_t * dy - sin_t * dx + cy;
    double sx = sin_t * dy + cos_t * dx + cx;
    if (flip) sx = (src_w - 1) - sx;
    return {sy, sx};
  }
};

inline Lab sample_bilinear_clamped(const LabImage& img, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double wy = y - y0;
  const double wx = x - x0;
  Lab out{};
  const double* p00 = img.px(y0, x0);
  const double* p01 = img.px(y0, x1);
  const double* p10 = img.px(y1, x0);
  const double* p11 = img.px(y1, x1);
  for (int ch = 0; ch < 3; ++ch) {
    if (wy == 0.0 && wx == 0.0) {
      out[ch] = p00[ch];
    } else {
      out[ch] = (1 - wy) * ((1 - wx) * p00[ch] + wx * p01[ch]) +
                wy * ((1 - wx) * p10[ch] + wx * p11[ch]);
    }
  }
  return out;
}

inline LabImage warp_lab(const LabImage& src, const WarpMap& warp, int out_h, int out_w) {
  LabImage out(out_h, out_w);
  for (int r = 0; r < out_h; ++r) {
    for (int c = 0; c < out_w; ++c) {
      auto [sy, sx] = warp.source(r, c);
      out.set(r, c, sample_bilinear_clamped(src, sy, sx));
    }
  }
  return out;
}

inline IndexMap warp_labels(const IndexMap& src, const WarpMap& warp, int out_h, int out_w) {
  IndexMap out(out_h, out_w);
  for (int r = 0; r < out_h; ++r) {
    for (int c = 0; c < out_w; ++c) {
      auto [sy, sx] = warp.source(r, c);
      const int iy = std::clamp(static_cast<int>(std::lround(sy)), 0, src.height - 1);
      const int ix = std::clamp(static_cast<int>(std::lround(sx)), 0, src.width - 1);
      out.at(r, c) = src.at(iy, ix);
    }
  }
  return out;
}

}  // namespace detail

/// Applies one shared rotation/flip to input, target and labels and places the
/// result on an out_h x out_w canvas with boundary replication.
inline AdjustmentExample augment(const AdjustmentExample& ex, const AugmentParams& params,
                                 int out_h, int out_w) {
  const detail::WarpMap warp(params, ex.height(), ex.width());
  AdjustmentExample out;
  out.name = ex.name;
  out.effect = ex.effect;
  out.input = detail::warp_lab(ex.input, warp, out_h, out_w);
  out.target = detail::warp_lab(ex.target, warp, out_h, out_w);
  if (ex.parse_labels) out.parse_labels = detail::warp_labels(*ex.parse_labels, warp, out_h, out_w);
  return out;
}

inline AdjustmentExample augment(const AdjustmentExample& ex, std::uint64_t seed, int out_h,
                                 int out_w) {
  return augment(ex, draw_augment_params(seed), out_h, out_w);
}

// ---------------------------------------------------------------------------
// Sparse sampling

inline PixelBatch sample_sparse_pixels(const AdjustmentExample& ex, std::size_t count,
                                       std::uint64_t seed) {
  const std::size_t n = ex.input.pixel_count();
  if (count > n) {
    throw std::invalid_argument("sample_sparse_pixels: requested " + std::to_string(count) +
                                " pixels from an image with " + std::to_string(n));
  }
  // Partial Fisher-Yates: the first `count` slots are a uniform sample
  // without replacement.
  std::vector<std::uint32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  PixelBatch batch;
  batch.coordinates.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int r = static_cast<int>(idx[i] / ex.width());
    const int c = static_cast<int>(idx[i] % ex.width());
    batch.coordinates.push_back({r, c});
    batch.input_colors.push_back(ex.input.get(r, c));
    batch.target_colors.push_back(ex.target.get(r, c));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

/// target = A * input + t, in Lab units.
struct AffinePreset {
  std::array<double, 9> matrix{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> offset{0, 0, 0};

  Lab apply(const Lab& x) const {
    Lab y{};
    for (int i = 0; i < 3; ++i) {
      y[i] = matrix[3 * i] * x[0] + matrix[3 * i + 1] * x[1] + matrix[3 * i + 2] * x[2] +
             offset[i];
    }
    return y;
  }
};

struct SyntheticSpec {
  int K = 2;
  std::vector<AffinePreset> presets;  // size K
  double noise_sigma = 0.5;
  int height = 64;
  int width = 64;
  int min_sites = 3;
  int max_sites = 8;
  // Fraction of pixels, nearest to preset boundaries first, whose target is
  // produced by the neighbouring region's preset instead of their own.
  double boundary_corruption = 0.0;

  void validate() const {
    if (K < 1) throw std::invalid_argument("synthetic spec: K must be >= 1");
    if (static_cast<int>(presets.size()) != K) {
      throw std::invalid_argument("synthetic spec: expected " + std::to_string(K) +
                                  " presets, got " + std::to_string(presets.size()));
    }
    if (min_sites < 1 || max_sites < min_sites) {
      throw std::invalid_argument("synthetic spec: bad site range");
    }
    if (height < 1 || width < 1) throw std::invalid_argument("synthetic spec: bad size");
    if (noise_sigma < 0) throw std::invalid_argument("synthetic spec: noise_sigma < 0");
    if (boundary_corruption < 0 || boundary_corruption > 1) {
      throw std::invalid_argument("synthetic spec: boundary_corruption outside [0,1]");
    }
  }
};

/// Two clearly different presets: a contrast/saturation boost with a warm
/// shift, and a flattening desaturate-and-brighten with a cool shift.
inline std::vector<AffinePreset> default_presets(int K, std::uint64_t seed = 7) {
  std::vector<AffinePreset> out;
  if (K >= 1) {
    AffinePreset p;
    p.matrix = {1.25, 0, 0, 0, 1.4, 0, 0, 0, 1.4};
    p.offset = {-8.0, 6.0, 10.0};
    out.push_back(p);
  }
  if (K >= 2) {
    AffinePreset p;
    p.matrix = {0.75, 0, 0, 0, 0.5, 0, 0, 0, 0.5};
    p.offset = {22.0, -4.0, -12.0};
    out.push_back(p);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> scale(0.6, 1.4);
  std::uniform_real_distribution<double> shift(-15.0, 15.0);
  while (static_cast<int>(out.size()) < K) {
    AffinePreset p;
    p.matrix = {scale(rng), 0, 0, 0, scale(rng), 0, 0, 0, scale(rng)};
    p.offset = {shift(rng), shift(rng), shift(rng)};
    out.push_back(p);
  }
  return out;
}

/// Key-value form:
///   K, noise_sigma, height, width, min_sites, max_sites, boundary_corruption,
///   preset.<k>.matrix = 9 numbers (row-major), preset.<k>.offset = 3 numbers
/// Presets not listed fall back to default_presets(K).
inline SyntheticSpec synthetic_spec_from_config(const KeyValueConfig& cfg) {
  SyntheticSpec spec;
  spec.K = static_cast<int>(cfg.get_int("K", 2));
  spec.noise_sigma = cfg.get_double("noise_sigma", spec.noise_sigma);
  spec.height = static_cast<int>(cfg.get_int("height", spec.height));
  spec.width = static_cast<int>(cfg.get_int("width", spec.width));
  spec.min_sites = static_cast<int>(cfg.get_int("min_sites", spec.min_sites));
  spec.max_sites = static_cast<int>(cfg.get_int("max_sites", spec.max_sites));
  spec.boundary_corruption = cfg.get_double("boundary_corruption", 0.0);
  spec.presets = default_presets(spec.K);
  for (int k = 0; k < spec.K; ++k) {
    const std::string base = "preset." + std::to_string(k);
    if (cfg.has(base + ".matrix")) {
      auto m = cfg.get_doubles(base + ".matrix", {});
      if (m.size() != 9) throw std::runtime_error(base + ".matrix needs 9 values");
      std::copy(m.begin(), m.end(), spec.presets[k].matrix.begin());
    }
    if (cfg.has(base + ".offset")) {
      auto t = cfg.get_doubles(base + ".offset", {});
      if (t.size() != 3) throw std::runtime_error(base + ".offset needs 3 values");
      std::copy(t.begin(), t.end(), spec.presets[k].offset.begin());
    }
  }
  spec.validate();
  return spec;
}

inline KeyValueConfig synthetic_spec_to_config(const SyntheticSpec& spec) {
  KeyValueConfig cfg;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  cfg.set("K", std::to_string(spec.K));
  cfg.set("noise_sigma", num(spec.noise_sigma));
  cfg.set("height", std::to_string(spec.height));
  cfg.set("width", std::to_string(spec.width));
  cfg.set("min_sites", std::to_string(spec.min_sites));
  cfg.set("max_sites", std::to_string(spec.max_sites));
  cfg.set("boundary_corruption", num(spec.boundary_corruption));
  for (int k = 0; k < spec.K; ++k) {
    std::string m, t;
    for (double v : spec.presets[k].matrix) m += (m.empty() ? "" : ", ") + num(v);
    for (double v : spec.presets[k].offset) t += (t.empty() ? "" : ", ") + num(v);
    cfg.set("preset." + std::to_string(k) + ".matrix", m);
    cfg.set("preset." + std::to_string(k) + ".offset", t);
  }
  return cfg;
}

namespace detail {

// Region appearance for preset k: a distinct hue per preset so that the
// preset correlates with what the region looks like.
inline Lab preset_appearance(int k, int K) {
  const double hue = 0.6 + 2.0 * std::numbers::pi * k / std::max(K, 1);
  const double chroma = 28.0;
  return {50.0 + (k % 2 == 0 ? -6.0 : 6.0), chroma * std::cos(hue), chroma * std::sin(hue)};
}

// For every pixel: distance (4-neighbour BFS) to the nearest pixel carrying a
// different label, and that label.
inline void boundary_distance(const IndexMap& labels, std::vector<int>& dist,
                              std::vector<std::uint8_t>& other) {
  const int h = labels.height, w = labels.width;
  dist.assign(labels.pixel_count(), -1);
  other.assign(labels.pixel_count(), 0);
  // Multi-source BFS per "foreign" label seeds: seed every pixel with a
  // differently-labelled 4-neighbour at distance 1.
  std::deque<int> queue;
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int d = 0; d < 4; ++d) {
        const int rr = r + dr[d], cc = c + dc[d];
        if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
        if (labels.at(rr, cc) != labels.at(r, c)) {
          const int i = r * w + c;
          dist[i] = 1;
          other[i] = labels.at(rr, cc);
          queue.push_back(i);
          break;
        }
      }
    }
  }
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    const int r = i / w, c = i % w;
    for (int d = 0; d < 4; ++d) {
      const int rr = r + dr[d], cc = c + dc[d];
      if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
      const int j = rr * w + cc;
      if (dist[j] >= 0 || labels.data[j] != labels.data[i]) continue;
      dist[j] = dist[i] + 1;
      other[j] = other[i];
      queue.push_back(j);
    }
  }
}

}  // namespace detail

/// Generates `n_images` examples. parse_labels holds the true per-pixel
/// preset index. Inputs are quantised through 8-bit sRGB so they are
/// representable as ordinary photos.
inline std::vector<AdjustmentExample> generate_synthetic_benchmark(const SyntheticSpec& spec,
                                                                   int n_images,
                                                                   std::uint64_t seed) {
  spec.validate();
  std::vector<AdjustmentExample> out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int h = spec.height, w = spec.width;
  for (int n = 0; n < n_images; ++n) {
    std::uniform_int_distribution<int> site_count(spec.min_sites, spec.max_sites);
    const int sites = site_count(rng);
    std::vector<std::array<double, 2>> pos(sites);
    std::vector<Lab> site_color(sites);
    for (int s = 0; s < sites; ++s) {
      pos[s] = {unit(rng) * h, unit(rng) * w};
      const Lab base = detail::preset_appearance(s % spec.K, spec.K);
      site_color[s] = {base[0] + 16.0 * (unit(rng) - 0.5), base[1] + 10.0 * (unit(rng) - 0.5),
                       base[2] + 10.0 * (unit(rng) - 0.5)};
    }
    const double grad_y = 10.0 * (unit(rng) - 0.5);
    const double grad_x = 10.0 * (unit(rng) - 0.5);

    IndexMap layout(h, w);
    Raster rgb(h, w, 3);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        int best = 0;
        double best_d = 1e300;
        for (int s = 0; s < sites; ++s) {
          const double dy = r + 0.5 - pos[s][0], dx = c + 0.5 - pos[s][1];
          const double d = dy * dy + dx * dx;
          if (d < best_d) {
            best_d = d;
            best = s;
          }
        }
        const int preset = best % spec.K;
        layout.at(r, c) = static_cast<std::uint8_t>(preset);
        Lab v = site_color[best];
        v[0] += grad_y * (r / static_cast<double>(h) - 0.5) +
                grad_x * (c / static_cast<double>(w) - 0.5) + 2.0 * gauss(rng);
        v[1] += 1.5 * gauss(rng);
        v[2] += 1.5 * gauss(rng);
        const auto px = lab_to_rgb(v);
        for (int ch = 0; ch < 3; ++ch) rgb.at(r, c, ch) = px[ch];
      }
    }

    AdjustmentExample ex;
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", n);
    ex.name = name;
    ex.effect = Effect::Synthetic;
    ex.input = srgb_to_lab(rgb);
    ex.target = LabImage(h, w);

    std::vector<std::uint8_t> applied(layout.data);
    if (spec.boundary_corruption > 0 && spec.K > 1) {
      std::vector<int> dist;
      std::vector<std::uint8_t> other;
      detail::boundary_distance(layout, dist, other);
      std::vector<std::pair<std::pair<int, double>, int>> order;
      for (std::size_t i = 0; i < layout.pixel_count(); ++i) {
        if (dist[i] > 0) order.push_back({{dist[i], unit(rng)}, static_cast<int>(i)});
      }
      std::sort(order.begin(), order.end());
      const auto budget = static_cast<std::size_t>(
          std::lround(spec.boundary_corruption * static_cast<double>(layout.pixel_count())));
      for (std::size_t j = 0; j < std::min(budget, order.size()); ++j) {
        applied[order[j].second] = other[order[j].second];
      }
    }

    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        Lab y = spec.presets[applied[static_cast<std::size_t>(r) * w + c]].apply(ex.input.get(r, c));
        if (spec.noise_sigma > 0) {
          for (double& v : y) v += spec.noise_sigma * gauss(rng);
        }
        ex.target.set(r, c, y);
      }
    }
    ex.parse_labels = std::move(layout);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace saadjust
