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

// Helpers shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "saadjust/data.hpp"
#include "saadjust/model.hpp"

namespace saadjust::testing {

/// Small network for finite-difference checks.
inline ModelConfig tiny_model_config(Variant variant, int K = 2) {
  ModelConfig c;
  c.backbone.first_channels = 3;
  c.backbone.block_channels = {4, 5};
  c.backbone.rnn_hidden = 3;
  c.backbone.rnn_channels = 4;
  c.backbone.context_dim = 5;
  c.rank = 4;
  c.K = K;
  c.parse_classes = 3;
  c.variant = variant;
  return c;
}

inline std::vector<AdjustmentExample> tiny_examples(int n, int size, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.K = 2;
  spec.presets = default_presets(2);
  spec.height = size;
  spec.width = size;
  return generate_synthetic_benchmark(spec, n, seed);
}

inline std::vector<TrainingSample> sample_batch(const std::vector<AdjustmentExample>& exs,
                                                std::size_t pixels, std::uint64_t seed) {
  std::vector<TrainingSample> batch;
  for (std::size_t i = 0; i < exs.size(); ++i) {
    batch.push_back({&exs[i], sample_sparse_pixels(exs[i], pixels, seed + i).coordinates});
  }
  return batch;
}

/// Adds uniform noise to every trainable scalar so that no ReLU or Huber
/// changepoint sits exactly at a zero-initialised bias.
template <typename T>
void jitter_parameters(ParamStore<T>& store, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& t : store.tensors()) {
    if (!t.trainable) continue;
    for (auto& v : t.value) v += static_cast<T>(u(rng));
  }
}

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst_tensor;
  std::size_t checked = 0;
};

/// Central differences over every trainable scalar (or `per_tensor` evenly
/// spaced scalars when nonzero) against the analytic gradient.
inline GradCheckResult gradient_check(Model<double>& model,
                                      const std::vector<TrainingSample>& batch,
                                      const std::vector<TrainingSample>& parse_batch,
                                      const LossConfig& loss, std::vector<double> weights,
                                      double step = 1e-5, std::size_t per_tensor = 0) {
  auto grads = model.store().zeros_like();
  model.loss_and_grad(batch, parse_batch, loss, weights, grads, false);
  GradCheckResult res;
  auto& tensors = model.store().tensors();
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    auto& t = tensors[ti];
    if (!t.trainable) continue;
    const std::size_t n = t.value.size();
    const std::size_t stride = per_tensor && n > per_tensor ? n / per_tensor : 1;
    for (std::size_t k = 0; k < n; k += stride) {
      const double orig = t.value[k];
      auto scratch = model.store().zeros_like();
      t.value[k] = orig + step;
      const double lp = model.loss_and_grad(batch, parse_batch, loss, weights, scratch, false).total;
      t.value[k] = orig - step;
      const double lm = model.loss_and_grad(batch, parse_batch, loss, weights, scratch, false).total;
      t.value[k] = orig;
      const double numeric = (lp - lm) / (2 * step);
      const double analytic = grads[ti][k];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      const double rel = std::abs(numeric - analytic) / denom;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_tensor = t.name + "[" + std::to_string(k) + "] analytic=" +
                           std::to_string(analytic) + " numeric=" + std::to_string(numeric);
      }
      ++res.checked;
    }
  }
  return res;
}

}  // namespace saadjust::testing
