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

// Four-directional spatial GRU (ReNet style). Each direction sweeps every
// row (or column) of the map independently; the four hidden-state maps are
// concatenated and projected by a 1x1 convolution.
//
// Cell, per step with input pre-activations a = BN(Wx x):
//   z = sigmoid(a_z + Uz h)      r = sigmoid(a_r + Ur h)
//   n = tanh(a_n + r * (Un h))   h' = (1 - z) * n + z * h
// BN statistics are taken per sweep position over (batch, orthogonal axis).

#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "saadjust/layers.hpp"
#include "saadjust/tensor.hpp"

namespace saadjust {

enum class SweepDirection { LeftToRight = 0, RightToLeft = 1, TopToBottom = 2, BottomToTop = 3 };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct SpatialRnn {
  struct Direction {
    int wx = -1;        // [3H, Cin]
    int uh = -1;        // [3H, H]
    int gamma = -1;     // [3H]
    int beta = -1;      // [3H]
    int run_mean = -1;  // [3H]
    int run_var = -1;   // [3H]
  };

  int in_channels = 0;
  int hidden = 0;
  int out_channels = 0;
  std::array<Direction, 4> dirs{};
  Conv2d proj;

  template <typename T>
  struct DirCache {
    std::vector<T> xhat;     // [b][g][pix]
    std::vector<T> inv_std;  // [pos][g]
    std::vector<T> z, r, n, q, h;  // [b][pix][H]
    std::vector<T> batch_mean, batch_var;  // [3H], averaged over positions
  };

  template <typename T>
  struct Cache {
    bool training = false;
    int batch = 0, height = 0, width = 0;
    std::vector<FeatureMap<T>> inputs;
    std::vector<FeatureMap<T>> concat;  // [4H, h, w] per image
    std::array<DirCache<T>, 4> dirs;
  };

  template <typename T>
  static SpatialRnn create(ParamStore<T>& store, const std::string& name, int in_c, int hidden,
                           int out_c) {
    SpatialRnn rnn;
    rnn.in_channels = in_c;
    rnn.hidden = hidden;
    rnn.out_channels = out_c;
    static const char* kNames[4] = {"l2r", "r2l", "t2b", "b2t"};
    for (int d = 0; d < 4; ++d) {
      const std::string p = name + "." + kNames[d];
      auto& dir = rnn.dirs[d];
      dir.wx = store.add(p + ".wx", {3 * hidden, in_c}, ParamGroup::Head);
      dir.uh = store.add(p + ".uh", {3 * hidden, hidden}, ParamGroup::Head);
      dir.gamma = store.add(p + ".bn_gamma", {3 * hidden}, ParamGroup::Head);
      dir.beta = store.add(p + ".bn_beta", {3 * hidden}, ParamGroup::Head);
      dir.run_mean = store.add(p + ".bn_running_mean", {3 * hidden}, ParamGroup::Head, false);
      dir.run_var = store.add(p + ".bn_running_var", {3 * hidden}, ParamGroup::Head, false);
    }
    rnn.proj = Conv2d::create(store, name + ".proj", 4 * hidden, out_c, 1, 1, ParamGroup::Head);
    return rnn;
  }

  template <typename T>
  void init(ParamStore<T>& store, std::mt19937_64& rng) const {
    for (const auto& dir : dirs) {
      fill_uniform(store[dir.wx].value, std::sqrt(3.0 / in_channels), rng);
      fill_uniform(store[dir.uh].value, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
      std::fill(store[dir.gamma].value.begin(), store[dir.gamma].value.end(), T(1));
      std::fill(store[dir.beta].value.begin(), store[dir.beta].value.end(), T(0));
      std::fill(store[dir.run_mean].value.begin(), store[dir.run_mean].value.end(), T(0));
      std::fill(store[dir.run_var].value.begin(), store[dir.run_var].value.end(), T(1));
    }
    proj.init(store, rng);
  }

  /// Geometry of one sweep: t-th step of sequence `o` maps to pixel index.
  struct Sweep {
    bool horizontal;
    bool reverse;
    int h, w;
    int length() const { return horizontal ? w : h; }
    int orth() const { return horizontal ? h : w; }
    int position(int t) const { return reverse ? length() - 1 - t : t; }
    int pixel(int o, int pos) const { return horizontal ? o * w + pos : pos * w + o; }
  };

  static Sweep sweep_of(int d, int h, int w) {
    return Sweep{d < 2, d == 1 || d == 3, h, w};
  }

  /// Training mode normalises with batch statistics; inference mode with the
  /// running averages.
  template <typename T>
  std::vector<FeatureMap<T>> forward(const ParamStore<T>& store,
                                     const std::vector<FeatureMap<T>>& in, bool training,
                                     std::type_identity_t<Cache<T>>* cache) const {
    const int B = static_cast<int>(in.size());
    if (B == 0) return {};
    const int h = in[0].height, w = in[0].width;
    const std::size_t npix = static_cast<std::size_t>(h) * w;
    const int G = 3 * hidden;
    const int H = hidden;
    std::vector<FeatureMap<T>> concat(B, FeatureMap<T>(4 * H, h, w));

    for (int d = 0; d < 4; ++d) {
      const Direction& dir = dirs[d];
      const Sweep sw = sweep_of(d, h, w);
      const T* wx = store.data(dir.wx);
      const T* uh = store.data(dir.uh);
      const T* gamma = store.data(dir.gamma);
      const T* beta = store.data(dir.beta);

      // Input pre-activations [b][g][pix].
      std::vector<T> pre(static_cast<std::size_t>(B) * G * npix, T(0));
      for (int b = 0; b < B; ++b) {
        for (int g = 0; g < G; ++g) {
          T* dst = &pre[(static_cast<std::size_t>(b) * G + g) * npix];
          for (int c = 0; c < in_channels; ++c) {
            const T wv = wx[g * in_channels + c];
            const T* src = in[b].plane(c);
            for (std::size_t p = 0; p < npix; ++p) dst[p] += wv * src[p];
          }
        }
      }

      // Batch normalisation per sweep position.
      const int L = sw.length(), O = sw.orth();
      std::vector<T> xhat(pre.size());
      std::vector<T> inv_std(static_cast<std::size_t>(L) * G);
      std::vector<T> batch_mean(G, T(0)), batch_var(G, T(0));
      const T eps = static_cast<T>(kBatchNormEpsilon);
      for (int pos = 0; pos < L; ++pos) {
        for (int g = 0; g < G; ++g) {
          T mean, var;
          if (training) {
            T s = 0;
            for (int b = 0; b < B; ++b) {
              const T* a = &pre[(static_cast<std::size_t>(b) * G + g) * npix];
              for (int o = 0; o < O; ++o) s += a[sw.pixel(o, pos)];
            }
            const T m = static_cast<T>(B * O);
            mean = s / m;
            T v = 0;
            for (int b = 0; b < B; ++b) {
              const T* a = &pre[(static_cast<std::size_t>(b) * G + g) * npix];
              for (int o = 0; o < O; ++o) {
                const T dv = a[sw.pixel(o, pos)] - mean;
                v += dv * dv;
              }
            }
            var = v / m;
            batch_mean[g] += mean;
            batch_var[g] += var;
          } else {
            mean = store.data(dir.run_mean)[g];
            var = store.data(dir.run_var)[g];
          }
          const T is = T(1) / std::sqrt(var + eps);
          inv_std[static_cast<std::size_t>(pos) * G + g] = is;
          for (int b = 0; b < B; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * G + g) * npix;
            for (int o = 0; o < O; ++o) {
              const std::size_t idx = base + sw.pixel(o, pos);
              xhat[idx] = (pre[idx] - mean) * is;
            }
          }
        }
      }
      for (int g = 0; g < G; ++g) {
        batch_mean[g] /= static_cast<T>(L);
        batch_var[g] /= static_cast<T>(L);
      }

      // Recurrence.
      const std::size_t state = static_cast<std::size_t>(B) * npix * H;
      std::vector<T> zs(state), rs(state), ns(state), qs(state), hs(state);
      std::vector<T> hprev(H), uhh(G);
      for (int b = 0; b < B; ++b) {
        for (int o = 0; o < O; ++o) {
          std::fill(hprev.begin(), hprev.end(), T(0));
          for (int t = 0; t < L; ++t) {
            const int pix = sw.pixel(o, sw.position(t));
            for (int g = 0; g < G; ++g) {
              T acc = 0;
              const T* row = uh + static_cast<std::size_t>(g) * H;
              for (int k = 0; k < H; ++k) acc += row[k] * hprev[k];
              uhh[g] = acc;
            }
            const std::size_t sidx = (static_cast<std::size_t>(b) * npix + pix) * H;
            for (int k = 0; k < H; ++k) {
              auto act = [&](int g) {
                return gamma[g] * xhat[(static_cast<std::size_t>(b) * G + g) * npix + pix] +
                       beta[g];
              };
              const T z = sigmoid(act(k) + uhh[k]);
              const T r = sigmoid(act(H + k) + uhh[H + k]);
              const T q = uhh[2 * H + k];
              const T n = std::tanh(act(2 * H + k) + r * q);
              const T hn = (T(1) - z) * n + z * hprev[k];
              zs[sidx + k] = z;
              rs[sidx + k] = r;
              ns[sidx + k] = n;
              qs[sidx + k] = q;
              hs[sidx + k] = hn;
            }
            for (int k = 0; k < H; ++k) hprev[k] = hs[sidx + k];
          }
        }
      }

      for (int b = 0; b < B; ++b) {
        for (int k = 0; k < H; ++k) {
          T* dst = concat[b].plane(d * H + k);
          for (std::size_t p = 0; p < npix; ++p) dst[p] = hs[(b * npix + p) * H + k];
        }
      }

      if (cache) {
        auto& dc = cache->dirs[d];
        dc.xhat = std::move(xhat);
        dc.inv_std = std::move(inv_std);
        dc.z = std::move(zs);
        dc.r = std::move(rs);
        dc.n = std::move(ns);
        dc.q = std::move(qs);
        dc.h = std::move(hs);
        dc.batch_mean = std::move(batch_mean);
        dc.batch_var = std::move(batch_var);
      }
    }

    std::vector<FeatureMap<T>> out;
    out.reserve(B);
    for (int b = 0; b < B; ++b) out.push_back(proj.forward(store, concat[b]));
    if (cache) {
      cache->training = training;
      cache->batch = B;
      cache->height = h;
      cache->width = w;
      cache->inputs = in;
      cache->concat = std::move(concat);
    }
    return out;
  }

  /// Folds the batch statistics of a training-mode forward into the running
  /// averages.
  template <typename T>
  void update_running_stats(ParamStore<T>& store, const Cache<T>& cache) const {
    if (!cache.training) return;
    const T mom = static_cast<T>(kBatchNormMomentum);
    for (int d = 0; d < 4; ++d) {
      T* rm = store.data(dirs[d].run_mean);
      T* rv = store.data(dirs[d].run_var);
      const auto& dc = cache.dirs[d];
      for (int g = 0; g < 3 * hidden; ++g) {
        rm[g] = (T(1) - mom) * rm[g] + mom * dc.batch_mean[g];
        rv[g] = (T(1) - mom) * rv[g] + mom * dc.batch_var[g];
      }
    }
  }

  template <typename T>
  void backward(const ParamStore<T>& store, const Cache<T>& cache,
                const std::vector<FeatureMap<T>>& dout, GradStore<T>& grads,
                std::vector<FeatureMap<T>>& din) const {
    const int B = cache.batch, h = cache.height, w = cache.width;
    const std::size_t npix = static_cast<std::size_t>(h) * w;
    const int G = 3 * hidden;
    const int H = hidden;
    std::vector<FeatureMap<T>> dconcat(B);
    for (int b = 0; b < B; ++b) proj.backward(store, cache.concat[b], dout[b], grads, &dconcat[b]);
    din.assign(B, FeatureMap<T>(in_channels, h, w));

    for (int d = 0; d < 4; ++d) {
      const Direction& dir = dirs[d];
      const DirCache<T>& dc = cache.dirs[d];
      const Sweep sw = sweep_of(d, h, w);
      const int L = sw.length(), O = sw.orth();
      const T* uh = store.data(dir.uh);
      const T* gamma = store.data(dir.gamma);
      const T* wx = store.data(dir.wx);
      T* duh = grads[dir.uh].data();
      T* dgamma = grads[dir.gamma].data();
      T* dbeta = grads[dir.beta].data();
      T* dwx = grads[dir.wx].data();

      // d(BN output) per [b][g][pix].
      std::vector<T> dact(static_cast<std::size_t>(B) * G * npix, T(0));
      std::vector<T> carry(H), dh(H), dg(G), hprev(H);
      for (int b = 0; b < B; ++b) {
        for (int o = 0; o < O; ++o) {
          std::fill(carry.begin(), carry.end(), T(0));
          for (int t = L - 1; t >= 0; --t) {
            const int pix = sw.pixel(o, sw.position(t));
            const std::size_t sidx = (static_cast<std::size_t>(b) * npix + pix) * H;
            if (t > 0) {
              const int ppix = sw.pixel(o, sw.position(t - 1));
              const std::size_t pidx = (static_cast<std::size_t>(b) * npix + ppix) * H;
              for (int k = 0; k < H; ++k) hprev[k] = dc.h[pidx + k];
            } else {
              std::fill(hprev.begin(), hprev.end(), T(0));
            }
            for (int k = 0; k < H; ++k) {
              dh[k] = dconcat[b].plane(d * H + k)[pix] + carry[k];
            }
            // Gate gradients; dg = [dz_pre, dr_pre, dq] where dq is w.r.t. Un h.
            for (int k = 0; k < H; ++k) {
              const T z = dc.z[sidx + k], r = dc.r[sidx + k], n = dc.n[sidx + k],
                      q = dc.q[sidx + k];
              const T dn = dh[k] * (T(1) - z);
              const T dz = dh[k] * (hprev[k] - n);
              const T dsn = dn * (T(1) - n * n);
              const T dr = dsn * q;
              const T dsr = dr * r * (T(1) - r);
              const T dsz = dz * z * (T(1) - z);
              dg[k] = dsz;
              dg[H + k] = dsr;
              dg[2 * H + k] = dsn * r;
              dact[(static_cast<std::size_t>(b) * G + k) * npix + pix] = dsz;
              dact[(static_cast<std::size_t>(b) * G + H + k) * npix + pix] = dsr;
              dact[(static_cast<std::size_t>(b) * G + 2 * H + k) * npix + pix] = dsn;
              carry[k] = dh[k] * z;
            }
            for (int g = 0; g < G; ++g) {
              const T gv = dg[g];
              if (gv == T(0)) continue;
              const T* row = uh + static_cast<std::size_t>(g) * H;
              T* drow = duh + static_cast<std::size_t>(g) * H;
              for (int k = 0; k < H; ++k) {
                carry[k] += row[k] * gv;
                drow[k] += gv * hprev[k];
              }
            }
          }
        }
      }

      // Through BN to the raw pre-activations.
      std::vector<T> dpre(dact.size(), T(0));
      for (int pos = 0; pos < L; ++pos) {
        for (int g = 0; g < G; ++g) {
          const T is = dc.inv_std[static_cast<std::size_t>(pos) * G + g];
          T sum_dx = 0, sum_dx_x = 0, sum_dy = 0, sum_dy_x = 0;
          for (int b = 0; b < B; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * G + g) * npix;
            for (int o = 0; o < O; ++o) {
              const std::size_t idx = base + sw.pixel(o, pos);
              const T dy = dact[idx];
              const T xh = dc.xhat[idx];
              sum_dy += dy;
              sum_dy_x += dy * xh;
              sum_dx += dy * gamma[g];
              sum_dx_x += dy * gamma[g] * xh;
            }
          }
          dgamma[g] += sum_dy_x;
          dbeta[g] += sum_dy;
          const T m = static_cast<T>(B * O);
          for (int b = 0; b < B; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * G + g) * npix;
            for (int o = 0; o < O; ++o) {
              const std::size_t idx = base + sw.pixel(o, pos);
              const T dx = dact[idx] * gamma[g];
              if (cache.training) {
                dpre[idx] = is / m * (m * dx - sum_dx - dc.xhat[idx] * sum_dx_x);
              } else {
                dpre[idx] = dx * is;
              }
            }
          }
        }
      }

      // Through Wx.
      for (int b = 0; b < B; ++b) {
        for (int g = 0; g < G; ++g) {
          const T* gp = &dpre[(static_cast<std::size_t>(b) * G + g) * npix];
          for (int c = 0; c < in_channels; ++c) {
            const T* xp = cache.inputs[b].plane(c);
            T* dxp = din[b].plane(c);
            const T wv = wx[g * in_channels + c];
            T acc = 0;
            for (std::size_t p = 0; p < npix; ++p) {
              acc += gp[p] * xp[p];
              dxp[p] += wv * gp[p];
            }
            dwx[g * in_channels + c] += acc;
          }
        }
      }
    }
  }
};

}  // namespace saadjust
