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

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "saadjust/tensor.hpp"

namespace saadjust {

struct AdamConfig {
  double learning_rate = 1e-4;
  double backbone_lr_multiplier = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0;  // global gradient-norm clip; 0 disables
};

/// Adam with a reduced learning rate for the backbone group. Non-trainable
/// tensors are skipped.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParamStore<T>& store, const AdamConfig& config) : config_(config) {
    if (!(config.learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
    if (config.backbone_lr_multiplier < 0) {
      throw std::invalid_argument("backbone_lr_multiplier must be >= 0");
    }
    m_ = store.zeros_like();
    v_ = store.zeros_like();
  }

  const AdamConfig& config() const { return config_; }
  long long steps() const { return t_; }

  /// Global L2 norm over trainable gradients.
  static double grad_norm(const ParamStore<T>& store, const GradStore<T>& grads) {
    double ss = 0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!store[static_cast<int>(i)].trainable) continue;
      for (T g : grads[i]) ss += static_cast<double>(g) * g;
    }
    return std::sqrt(ss);
  }

  void step(ParamStore<T>& store, const GradStore<T>& grads) {
    ++t_;
    double scale = 1.0;
    if (config_.clip_norm > 0) {
      const double n = grad_norm(store, grads);
      if (n > config_.clip_norm) scale = config_.clip_norm / n;
    }
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto& p = store[static_cast<int>(i)];
      if (!p.trainable) continue;
      double lr = config_.learning_rate;
      if (p.group == ParamGroup::Backbone) lr *= config_.backbone_lr_multiplier;
      if (lr == 0) continue;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = static_cast<double>(grads[i][k]) * scale;
        m[k] = static_cast<T>(config_.beta1 * m[k] + (1 - config_.beta1) * g);
        v[k] = static_cast<T>(config_.beta2 * v[k] + (1 - config_.beta2) * g * g);
        const double mh = m[k] / bc1;
        const double vh = v[k] / bc2;
        p.value[k] = static_cast<T>(p.value[k] - lr * mh / (std::sqrt(vh) + config_.epsilon));
      }
    }
  }

 private:
  AdamConfig config_;
  GradStore<T> m_, v_;
  long long t_ = 0;
};

}  // namespace saadjust
