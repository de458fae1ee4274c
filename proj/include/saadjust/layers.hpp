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

// Low-level building blocks with explicit forward/backward passes.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <type_traits>

#include "saadjust/tensor.hpp"

namespace saadjust {

inline constexpr double kNormEpsilon = 1e-8;

// ---------------------------------------------------------------------------
// 2-D convolution, zero padding.

struct Conv2d {
  int weight = -1;
  int bias = -1;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  template <typename T>
  static Conv2d create(ParamStore<T>& store, const std::string& name, int in_c, int out_c,
                       int kernel, int stride, ParamGroup group) {
    Conv2d c;
    c.in_channels = in_c;
    c.out_channels = out_c;
    c.kernel = kernel;
    c.stride = stride;
    c.pad = kernel / 2;
    c.weight = store.add(name + ".weight", {out_c, in_c, kernel, kernel}, group);
    c.bias = store.add(name + ".bias", {out_c}, group);
    return c;
  }

  int out_size(int n) const { return (n + 2 * pad - kernel) / stride + 1; }

  template <typename T>
  void init(ParamStore<T>& store, std::mt19937_64& rng) const {
    // He-uniform for ReLU stacks.
    const double fan_in = static_cast<double>(in_channels) * kernel * kernel;
    fill_uniform(store[weight].value, std::sqrt(6.0 / fan_in), rng);
    std::fill(store[bias].value.begin(), store[bias].value.end(), T(0));
  }

  // Valid output index range [lo, hi) along one axis for kernel tap `k`.
  void tap_range(int k, int in_n, int out_n, int& lo, int& hi) const {
    // need 0 <= o*stride + k - pad < in_n
    const int off = k - pad;
    lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    hi = (in_n - 1 - off) >= 0 ? (in_n - 1 - off) / stride + 1 : 0;
    hi = std::min(hi, out_n);
    lo = std::min(lo, hi);
  }

  template <typename T>
  FeatureMap<T> forward(const ParamStore<T>& store, const FeatureMap<T>& in) const {
    const int oh = out_size(in.height), ow = out_size(in.width);
    FeatureMap<T> out(out_channels, oh, ow);
    const T* w = store.data(weight);
    const T* b = store.data(bias);
    for (int o = 0; o < out_channels; ++o) {
      T* op = out.plane(o);
      std::fill(op, op + out.plane_size(), b[o]);
      for (int i = 0; i < in_channels; ++i) {
        const T* ip = in.plane(i);
        for (int ky = 0; ky < kernel; ++ky) {
          int ylo, yhi;
          tap_range(ky, in.height, oh, ylo, yhi);
          for (int kx = 0; kx < kernel; ++kx) {
            int xlo, xhi;
            tap_range(kx, in.width, ow, xlo, xhi);
            const T wv = w[((o * in_channels + i) * kernel + ky) * kernel + kx];
            for (int y = ylo; y < yhi; ++y) {
              const T* irow = ip + static_cast<std::size_t>(y * stride + ky - pad) * in.width;
              T* orow = op + static_cast<std::size_t>(y) * ow;
              if (stride == 1) {
                const T* src = irow + kx - pad;
                for (int x = xlo; x < xhi; ++x) orow[x] += wv * src[x];
              } else {
                for (int x = xlo; x < xhi; ++x) orow[x] += wv * irow[x * stride + kx - pad];
              }
            }
          }
        }
      }
    }
    return out;
  }

  /// Accumulates weight/bias gradients; returns the input gradient when
  /// `din` is non-null.
  template <typename T>
  void backward(const ParamStore<T>& store, const FeatureMap<T>& in, const FeatureMap<T>& dout,
                GradStore<T>& grads, std::type_identity_t<FeatureMap<T>>* din) const {
    const int oh = dout.height, ow = dout.width;
    const T* w = store.data(weight);
    T* dw = grads[weight].data();
    T* db = grads[bias].data();
    if (din) *din = FeatureMap<T>(in.channels, in.height, in.width);
    for (int o = 0; o < out_channels; ++o) {
      const T* gp = dout.plane(o);
      T acc = 0;
      for (std::size_t p = 0; p < dout.plane_size(); ++p) acc += gp[p];
      db[o] += acc;
      for (int i = 0; i < in_channels; ++i) {
        const T* ip = in.plane(i);
        T* dip = din ? din->plane(i) : nullptr;
        for (int ky = 0; ky < kernel; ++ky) {
          int ylo, yhi;
          tap_range(ky, in.height, oh, ylo, yhi);
          for (int kx = 0; kx < kernel; ++kx) {
            int xlo, xhi;
            tap_range(kx, in.width, ow, xlo, xhi);
            const std::size_t widx = ((o * in_channels + i) * kernel + ky) * kernel + kx;
            const T wv = w[widx];
            T dwacc = 0;
            for (int y = ylo; y < yhi; ++y) {
              const std::size_t irow = static_cast<std::size_t>(y * stride + ky - pad) * in.width;
              const T* grow = gp + static_cast<std::size_t>(y) * ow;
              if (stride == 1) {
                const T* src = ip + irow + kx - pad;
                for (int x = xlo; x < xhi; ++x) dwacc += grow[x] * src[x];
                if (dip) {
                  T* dst = dip + irow + kx - pad;
                  for (int x = xlo; x < xhi; ++x) dst[x] += wv * grow[x];
                }
              } else {
                for (int x = xlo; x < xhi; ++x) {
                  const std::size_t ii = irow + x * stride + kx - pad;
                  dwacc += grow[x] * ip[ii];
                  if (dip) dip[ii] += wv * grow[x];
                }
              }
            }
            dw[widx] += dwacc;
          }
        }
      }
    }
  }
};

template <typename T>
void relu_inplace(FeatureMap<T>& m) {
  for (auto& v : m.data) v = v > T(0) ? v : T(0);
}

/// Zeroes gradient where the (post-ReLU) activation is not positive.
template <typename T>
void relu_backward_inplace(const FeatureMap<T>& activation, FeatureMap<T>& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (!(activation.data[i] > T(0))) grad.data[i] = T(0);
  }
}

// ---------------------------------------------------------------------------
// L2 normalisation, u = v / (||v|| + eps).

template <typename T>
T l2_normalize(std::span<const T> v, std::span<T> out) {
  T ss = 0;
  for (T x : v) ss += x * x;
  const T norm = std::sqrt(ss);
  const T s = norm + static_cast<T>(kNormEpsilon);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / s;
  return norm;
}

/// Accumulates dv given du for u = v / (||v|| + eps).
template <typename T>
void l2_normalize_backward(std::span<const T> v, T norm, std::span<const T> du,
                           std::span<T> dv) {
  const T s = norm + static_cast<T>(kNormEpsilon);
  T dot = 0;
  for (std::size_t i = 0; i < v.size(); ++i) dot += du[i] * v[i];
  const T coef = norm > T(0) ? dot / (s * s * norm) : T(0);
  for (std::size_t i = 0; i < v.size(); ++i) dv[i] += du[i] / s - coef * v[i];
}

// ---------------------------------------------------------------------------
// Bilinear readout of a downsampled map at image pixel centres
// (align_corners = false), clamped at the border.

struct BilinearTap {
  int y0, y1, x0, x1;
  double wy, wx;
};

inline double map_coordinate(int pixel, int image_extent, int map_extent) {
  const double v = (pixel + 0.5) * map_extent / static_cast<double>(image_extent) - 0.5;
  return std::clamp(v, 0.0, static_cast<double>(map_extent - 1));
}

inline BilinearTap bilinear_tap(int row, int col, int image_h, int image_w, int map_h,
                                int map_w) {
  const double y = map_coordinate(row, image_h, map_h);
  const double x = map_coordinate(col, image_w, map_w);
  BilinearTap t;
  t.y0 = static_cast<int>(std::floor(y));
  t.x0 = static_cast<int>(std::floor(x));
  t.y1 = std::min(t.y0 + 1, map_h - 1);
  t.x1 = std::min(t.x0 + 1, map_w - 1);
  t.wy = y - t.y0;
  t.wx = x - t.x0;
  return t;
}

template <typename T>
void bilinear_sample(const FeatureMap<T>& m, const BilinearTap& t, std::span<T> out) {
  const T w00 = static_cast<T>((1 - t.wy) * (1 - t.wx));
  const T w01 = static_cast<T>((1 - t.wy) * t.wx);
  const T w10 = static_cast<T>(t.wy * (1 - t.wx));
  const T w11 = static_cast<T>(t.wy * t.wx);
  const std::size_t i00 = static_cast<std::size_t>(t.y0) * m.width + t.x0;
  const std::size_t i01 = static_cast<std::size_t>(t.y0) * m.width + t.x1;
  const std::size_t i10 = static_cast<std::size_t>(t.y1) * m.width + t.x0;
  const std::size_t i11 = static_cast<std::size_t>(t.y1) * m.width + t.x1;
  for (int c = 0; c < m.channels; ++c) {
    const T* p = m.plane(c);
    if (t.wy == 0.0 && t.wx == 0.0) {
      out[c] = p[i00];
    } else {
      out[c] = w00 * p[i00] + w01 * p[i01] + w10 * p[i10] + w11 * p[i11];
    }
  }
}

template <typename T>
void bilinear_scatter(FeatureMap<T>& grad, const BilinearTap& t, std::span<const T> g) {
  const T w00 = static_cast<T>((1 - t.wy) * (1 - t.wx));
  const T w01 = static_cast<T>((1 - t.wy) * t.wx);
  const T w10 = static_cast<T>(t.wy * (1 - t.wx));
  const T w11 = static_cast<T>(t.wy * t.wx);
  const std::size_t i00 = static_cast<std::size_t>(t.y0) * grad.width + t.x0;
  const std::size_t i01 = static_cast<std::size_t>(t.y0) * grad.width + t.x1;
  const std::size_t i10 = static_cast<std::size_t>(t.y1) * grad.width + t.x0;
  const std::size_t i11 = static_cast<std::size_t>(t.y1) * grad.width + t.x1;
  for (int c = 0; c < grad.channels; ++c) {
    T* p = grad.plane(c);
    if (t.wy == 0.0 && t.wx == 0.0) {
      p[i00] += g[c];
    } else {
      p[i00] += w00 * g[c];
      p[i01] += w01 * g[c];
      p[i10] += w10 * g[c];
      p[i11] += w11 * g[c];
    }
  }
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace saadjust
