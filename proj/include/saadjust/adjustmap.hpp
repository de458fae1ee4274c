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

// Semantic adjustment map: a per-pixel categorical choice among K latent
// presets. Training uses the exact expectation over the K presets of a
// class-weighted robust penalty; the class weights follow a moving average of
// the soft preset frequencies.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "saadjust/losses.hpp"
#include "saadjust/png_io.hpp"
#include "saadjust/tensor.hpp"

namespace saadjust {

/// Per-pixel K-way probabilities, [pixel][K].
struct PresetPosterior {
  int K = 0;
  std::vector<double> probabilities;

  std::size_t pixels() const { return K ? probabilities.size() / K : 0; }
  std::span<const double> at(std::size_t p) const {
    return {probabilities.data() + p * K, static_cast<std::size_t>(K)};
  }
};

/// Per-pixel preset index in [0, K).
struct AdjustmentMap {
  int K = 0;
  IndexMap assignments;

  void validate() const {
    if (K < 1 || K > 255) throw std::invalid_argument("adjustment map: bad K");
    for (std::size_t i = 0; i < assignments.data.size(); ++i) {
      if (assignments.data[i] >= K) {
        throw std::out_of_range("adjustment map: preset index " +
                                std::to_string(assignments.data[i]) + " at pixel " +
                                std::to_string(i) + " >= K=" + std::to_string(K));
      }
    }
  }
  bool operator==(const AdjustmentMap&) const = default;
};

/// Linear head from the context vector to K preset logits.
class PosteriorHead {
 public:
  PosteriorHead() = default;

  template <typename T>
  PosteriorHead(ParamStore<T>& store, const std::string& name, int context_dim, int classes)
      : M_(context_dim), K_(classes) {
    weight_ = store.add(name + ".weight", {classes, context_dim}, ParamGroup::Head);
    bias_ = store.add(name + ".bias", {classes}, ParamGroup::Head);
  }

  int classes() const { return K_; }

  template <typename T>
  void init(ParamStore<T>& store, std::mt19937_64& rng) const {
    fill_uniform(store[weight_].value, 1.0 / std::sqrt(static_cast<double>(M_)), rng);
    std::fill(store[bias_].value.begin(), store[bias_].value.end(), T(0));
  }

  template <typename T>
  void logits(const ParamStore<T>& store, std::span<const T> ctx, std::span<T> out) const {
    const T* w = store.data(weight_);
    const T* b = store.data(bias_);
    for (int k = 0; k < K_; ++k) {
      T acc = b[k];
      const T* row = w + static_cast<std::size_t>(k) * M_;
      for (int m = 0; m < M_; ++m) acc += row[m] * ctx[m];
      out[k] = acc;
    }
  }

  template <typename T>
  void backward(const ParamStore<T>& store, std::span<const T> ctx, std::span<const T> dlogits,
                GradStore<T>& grads, std::span<T> dctx) const {
    const T* w = store.data(weight_);
    T* dw = grads[weight_].data();
    T* db = grads[bias_].data();
    for (int k = 0; k < K_; ++k) {
      const T g = dlogits[k];
      if (g == T(0)) continue;
      db[k] += g;
      const T* row = w + static_cast<std::size_t>(k) * M_;
      T* drow = dw + static_cast<std::size_t>(k) * M_;
      for (int m = 0; m < M_; ++m) {
        drow[m] += g * ctx[m];
        dctx[m] += g * row[m];
      }
    }
  }

 private:
  int M_ = 0, K_ = 0;
  int weight_ = -1, bias_ = -1;
};

/// Softmax of [pixel][K] logits.
template <typename T>
PresetPosterior preset_posterior(std::span<const T> logits, int K) {
  PresetPosterior post;
  post.K = K;
  post.probabilities.assign(logits.begin(), logits.end());
  for (std::size_t p = 0; p < post.pixels(); ++p) {
    softmax_inplace(std::span<double>(post.probabilities.data() + p * K, K));
  }
  return post;
}

/// sum_k w_k p_k loss_k for one pixel.
template <typename T>
T expected_regression_loss(std::span<const T> posterior, std::span<const T> preset_losses,
                           std::span<const T> weights) {
  T s = 0;
  for (std::size_t k = 0; k < posterior.size(); ++k) {
    s += weights[k] * posterior[k] * preset_losses[k];
  }
  return s;
}

/// Gradient of expected_regression_loss w.r.t. the logits behind `posterior`:
/// p_j (w_j l_j - sum_k p_k w_k l_k).
template <typename T>
void expected_regression_loss_logit_grad(std::span<const T> posterior,
                                         std::span<const T> preset_losses,
                                         std::span<const T> weights, std::span<T> out) {
  const T e = expected_regression_loss(posterior, preset_losses, weights);
  for (std::size_t j = 0; j < posterior.size(); ++j) {
    out[j] = posterior[j] * (weights[j] * preset_losses[j] - e);
  }
}

/// Moving average of soft preset frequencies.
struct ClassWeightState {
  std::vector<double> a;
  double alpha = 0.8;
  double ema_keep = 0.9;
  double ema_new = 0.1;
  long long t = 0;

  static ClassWeightState initial(int K, double alpha) {
    if (K < 1) throw std::invalid_argument("ClassWeightState: K must be >= 1");
    if (alpha < 0 || alpha > 1) throw std::invalid_argument("ClassWeightState: alpha outside [0,1]");
    ClassWeightState s;
    s.a.assign(K, 1.0 / K);
    s.alpha = alpha;
    return s;
  }
};

/// a_t = keep * a_{t-1} + new * batch_mean.
inline ClassWeightState update_frequency_ema(const ClassWeightState& state,
                                             std::span<const double> batch_mean) {
  if (batch_mean.size() != state.a.size()) {
    throw std::invalid_argument("update_frequency_ema: K mismatch");
  }
  ClassWeightState next = state;
  for (std::size_t k = 0; k < next.a.size(); ++k) {
    next.a[k] = state.ema_keep * state.a[k] + state.ema_new * batch_mean[k];
  }
  ++next.t;
  return next;
}

/// Same update with the mean of the batch's per-pixel posteriors.
inline ClassWeightState update_frequency_ema(const ClassWeightState& state,
                                             const PresetPosterior& batch) {
  if (batch.pixels() == 0) throw std::invalid_argument("update_frequency_ema: empty batch");
  if (batch.K != static_cast<int>(state.a.size())) {
    throw std::invalid_argument("update_frequency_ema: K mismatch");
  }
  std::vector<double> mean(batch.K, 0.0);
  for (std::size_t p = 0; p < batch.pixels(); ++p) {
    for (int k = 0; k < batch.K; ++k) mean[k] += batch.probabilities[p * batch.K + k];
  }
  for (auto& m : mean) m /= static_cast<double>(batch.pixels());
  return update_frequency_ema(state, mean);
}

/// w_t = alpha * a_t + (1 - alpha). Frequent presets receive larger weights.
inline std::vector<double> class_weights(const ClassWeightState& state) {
  std::vector<double> w(state.a.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = state.alpha * state.a[k] + (1.0 - state.alpha);
  return w;
}

/// Index of the largest entry; ties go to the lower index.
template <typename T>
int argmax_lowest(std::span<const T> v) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(v.size()); ++k) {
    if (v[k] > v[best]) best = k;
  }
  return best;
}

inline AdjustmentMap extract_adjustment_map(const PresetPosterior& post, int height, int width) {
  if (post.pixels() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("extract_adjustment_map: posterior size does not match shape");
  }
  AdjustmentMap map;
  map.K = post.K;
  map.assignments = IndexMap(height, width);
  for (std::size_t p = 0; p < post.pixels(); ++p) {
    map.assignments.data[p] = static_cast<std::uint8_t>(argmax_lowest(post.at(p)));
  }
  return map;
}

// ---------------------------------------------------------------------------
// Run-length JSON: {width, height, K, runs: [[preset, length], ...]} in
// row-major order.

inline nlohmann::json map_to_rle_json(const AdjustmentMap& map) {
  nlohmann::json runs = nlohmann::json::array();
  const auto& d = map.assignments.data;
  std::size_t i = 0;
  while (i < d.size()) {
    std::size_t j = i;
    while (j < d.size() && d[j] == d[i]) ++j;
    runs.push_back({static_cast<int>(d[i]), static_cast<std::uint64_t>(j - i)});
    i = j;
  }
  return {{"width", map.assignments.width},
          {"height", map.assignments.height},
          {"K", map.K},
          {"runs", runs}};
}

inline AdjustmentMap map_from_rle_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("width") || !j.contains("height") || !j.contains("K") ||
      !j.contains("runs") || !j["runs"].is_array()) {
    throw std::invalid_argument("RLE map: expected {width, height, K, runs}");
  }
  AdjustmentMap map;
  const int w = j["width"].get<int>();
  const int h = j["height"].get<int>();
  map.K = j["K"].get<int>();
  if (w < 1 || h < 1) throw std::invalid_argument("RLE map: bad dimensions");
  if (map.K < 1 || map.K > 255) throw std::invalid_argument("RLE map: bad K");
  map.assignments = IndexMap(h, w);
  std::size_t pos = 0;
  const std::size_t total = static_cast<std::size_t>(w) * h;
  for (const auto& run : j["runs"]) {
    if (!run.is_array() || run.size() != 2) throw std::invalid_argument("RLE map: bad run");
    const long long idx = run[0].get<long long>();
    const long long len = run[1].get<long long>();
    if (idx < 0 || idx > 255) {
      throw std::out_of_range("RLE map: preset index " + std::to_string(idx) + " out of range");
    }
    if (len < 0 || pos + static_cast<std::size_t>(len) > total) {
      throw std::invalid_argument("RLE map: runs exceed width*height");
    }
    std::fill_n(map.assignments.data.begin() + static_cast<std::ptrdiff_t>(pos), len,
                static_cast<std::uint8_t>(idx));
    pos += static_cast<std::size_t>(len);
  }
  if (pos != total) throw std::invalid_argument("RLE map: runs do not cover width*height");
  return map;
}

}  // namespace saadjust
