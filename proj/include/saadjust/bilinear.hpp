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

// Low-rank bilinear regression head.
//
// A full bilinear map y_i = f_clr^T W_i f_cxt needs a C x N x M tensor. The
// head factorises it as
//
//   yhat = tanh(P^T (tanh(U^T f_clr + b) o tanh(V^T f_cxt + c)) + d)
//
// with U: N x rank, V: M x rank, P: rank x 3, and predicts a residual in
// normalised Lab units: y = x + unscale(yhat). W is never materialised.

#pragma once

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "saadjust/colorspace.hpp"
#include "saadjust/features.hpp"
#include "saadjust/layers.hpp"
#include "saadjust/tensor.hpp"

namespace saadjust {

inline constexpr int kColorChannels = 3;

/// [L/100, a/110, b/110 || first / (||first|| + eps)]
template <typename T>
std::vector<T> build_color_features(const Lab& lab, std::span<const T> first_layer) {
  std::vector<T> f(kColorChannels + first_layer.size());
  for (int c = 0; c < kColorChannels; ++c) f[c] = static_cast<T>(lab[c] / kLabScale[c]);
  l2_normalize<T>(first_layer, std::span<T>(f.data() + kColorChannels, first_layer.size()));
  return f;
}

/// Lab value of a normalised residual added to `x`.
template <typename T>
Lab apply_residual(const Lab& x, std::span<const T> yhat) {
  return {x[0] + static_cast<double>(yhat[0]) * kLabScale[0],
          x[1] + static_cast<double>(yhat[1]) * kLabScale[1],
          x[2] + static_cast<double>(yhat[2]) * kLabScale[2]};
}

/// Read-only view over head parameters. Matrices are row-major:
/// U[i * rank + j], V[m * rank + j], P[j * 3 + c].
template <typename T>
struct BilinearView {
  const T* U;
  const T* b;
  const T* V;
  const T* c;
  const T* P;
  const T* d;
  int N, M, rank;
};

template <typename T>
struct BilinearGradView {
  T* U;
  T* b;
  T* V;
  T* c;
  T* P;
  T* d;
};

/// Intermediates of one evaluation.
template <typename T>
struct BilinearTrace {
  std::vector<T> color_act;    // tanh(U^T f_clr + b)
  std::vector<T> context_act;  // tanh(V^T f_cxt + c)
  std::array<T, 3> yhat{};
};

template <typename T>
void color_branch(const BilinearView<T>& p, std::span<const T> f_clr, std::vector<T>& out) {
  if (static_cast<int>(f_clr.size()) != p.N) {
    throw std::invalid_argument("bilinear: color feature length " +
                                std::to_string(f_clr.size()) + " != " + std::to_string(p.N));
  }
  out.assign(p.rank, T(0));
  for (int j = 0; j < p.rank; ++j) out[j] = p.b[j];
  for (int i = 0; i < p.N; ++i) {
    const T fi = f_clr[i];
    if (fi == T(0)) continue;
    const T* row = p.U + static_cast<std::size_t>(i) * p.rank;
    for (int j = 0; j < p.rank; ++j) out[j] += row[j] * fi;
  }
  for (auto& v : out) v = std::tanh(v);
}

template <typename T>
void context_branch(const BilinearView<T>& p, std::span<const T> f_cxt, std::vector<T>& out) {
  if (static_cast<int>(f_cxt.size()) != p.M) {
    throw std::invalid_argument("bilinear: context feature length " +
                                std::to_string(f_cxt.size()) + " != " + std::to_string(p.M));
  }
  out.assign(p.rank, T(0));
  for (int j = 0; j < p.rank; ++j) out[j] = p.c[j];
  for (int m = 0; m < p.M; ++m) {
    const T gm = f_cxt[m];
    if (gm == T(0)) continue;
    const T* row = p.V + static_cast<std::size_t>(m) * p.rank;
    for (int j = 0; j < p.rank; ++j) out[j] += row[j] * gm;
  }
  for (auto& v : out) v = std::tanh(v);
}

/// Context branch for the one-hot context e_k: selects row k of V.
template <typename T>
void context_branch_onehot(const BilinearView<T>& p, int k, std::vector<T>& out) {
  if (k < 0 || k >= p.M) {
    throw std::out_of_range("bilinear: preset index " + std::to_string(k) + " outside [0," +
                            std::to_string(p.M) + ")");
  }
  out.resize(p.rank);
  const T* row = p.V + static_cast<std::size_t>(k) * p.rank;
  for (int j = 0; j < p.rank; ++j) out[j] = std::tanh(row[j] + p.c[j]);
}

template <typename T>
void combine(const BilinearView<T>& p, BilinearTrace<T>& t) {
  for (int c = 0; c < 3; ++c) {
    T s = p.d[c];
    for (int j = 0; j < p.rank; ++j) s += p.P[j * 3 + c] * t.color_act[j] * t.context_act[j];
    t.yhat[c] = std::tanh(s);
  }
}

/// Evaluates the head with a dense context vector.
template <typename T>
BilinearTrace<T> bilinear_forward(const BilinearView<T>& p, std::span<const T> f_clr,
                                  std::span<const T> f_cxt) {
  BilinearTrace<T> t;
  color_branch(p, f_clr, t.color_act);
  context_branch(p, f_cxt, t.context_act);
  combine(p, t);
  return t;
}

/// Backpropagates dL/dyhat. Context gradient is written when `df_cxt` is
/// non-empty; for one-hot contexts pass `onehot_k` >= 0 instead of f_cxt.
template <typename T>
void bilinear_backward(const BilinearView<T>& p, const BilinearGradView<T>& g,
                       std::span<const T> f_clr, std::span<const T> f_cxt, int onehot_k,
                       const BilinearTrace<T>& t, std::span<const T> dyhat,
                       std::span<T> df_clr, std::span<T> df_cxt) {
  T ds[3];
  for (int c = 0; c < 3; ++c) {
    ds[c] = dyhat[c] * (T(1) - t.yhat[c] * t.yhat[c]);
    g.d[c] += ds[c];
  }
  for (int j = 0; j < p.rank; ++j) {
    const T hu = t.color_act[j], hv = t.context_act[j];
    T dm = 0;
    for (int c = 0; c < 3; ++c) {
      g.P[j * 3 + c] += hu * hv * ds[c];
      dm += p.P[j * 3 + c] * ds[c];
    }
    const T dsu = dm * hv * (T(1) - hu * hu);
    const T dsv = dm * hu * (T(1) - hv * hv);
    g.b[j] += dsu;
    g.c[j] += dsv;
    for (int i = 0; i < p.N; ++i) {
      g.U[static_cast<std::size_t>(i) * p.rank + j] += f_clr[i] * dsu;
      if (!df_clr.empty()) df_clr[i] += p.U[static_cast<std::size_t>(i) * p.rank + j] * dsu;
    }
    if (onehot_k >= 0) {
      g.V[static_cast<std::size_t>(onehot_k) * p.rank + j] += dsv;
    } else {
      for (int m = 0; m < p.M; ++m) {
        g.V[static_cast<std::size_t>(m) * p.rank + j] += f_cxt[m] * dsv;
        if (!df_cxt.empty()) df_cxt[m] += p.V[static_cast<std::size_t>(m) * p.rank + j] * dsv;
      }
    }
  }
}

/// Head parameters registered in a ParamStore.
class BilinearHead {
 public:
  BilinearHead() = default;

  template <typename T>
  BilinearHead(ParamStore<T>& store, int color_dim, int context_dim, int rank)
      : N_(color_dim), M_(context_dim), rank_(rank) {
    if (color_dim < 1 || context_dim < 1 || rank < 1) {
      throw std::invalid_argument("bilinear head dimensions must be positive");
    }
    U_ = store.add("bilinear.U", {color_dim, rank}, ParamGroup::Head);
    b_ = store.add("bilinear.b", {rank}, ParamGroup::Head);
    V_ = store.add("bilinear.V", {context_dim, rank}, ParamGroup::Head);
    c_ = store.add("bilinear.c", {rank}, ParamGroup::Head);
    P_ = store.add("bilinear.P", {rank, 3}, ParamGroup::Head);
    d_ = store.add("bilinear.d", {3}, ParamGroup::Head);
  }

  int color_dim() const { return N_; }
  int context_dim() const { return M_; }
  int rank() const { return rank_; }

  template <typename T>
  void init(ParamStore<T>& store, std::mt19937_64& rng) const {
    fill_uniform(store[U_].value, 1.0 / std::sqrt(static_cast<double>(N_)), rng);
    fill_uniform(store[V_].value, 1.0 / std::sqrt(static_cast<double>(M_)), rng);
    fill_uniform(store[P_].value, 1.0 / std::sqrt(static_cast<double>(rank_)), rng);
    for (int idx : {b_, c_, d_}) std::fill(store[idx].value.begin(), store[idx].value.end(), T(0));
  }

  template <typename T>
  BilinearView<T> view(const ParamStore<T>& s) const {
    return {s.data(U_), s.data(b_), s.data(V_), s.data(c_), s.data(P_), s.data(d_), N_, M_,
            rank_};
  }

  template <typename T>
  BilinearGradView<T> grad_view(GradStore<T>& g) const {
    return {g[U_].data(), g[b_].data(), g[V_].data(), g[c_].data(), g[P_].data(), g[d_].data()};
  }

 private:
  int N_ = 0, M_ = 0, rank_ = 0;
  int U_ = -1, b_ = -1, V_ = -1, c_ = -1, P_ = -1, d_ = -1;
};

}  // namespace saadjust
