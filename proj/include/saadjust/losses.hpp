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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace saadjust {

enum class LossKind { Huber, Mse };

struct LossConfig {
  LossKind kind = LossKind::Huber;
  double delta = 0.04;
  double lambda = 0.01;
  int parse_classes = 150;

  void validate() const {
    if (!(delta > 0)) throw std::invalid_argument("huber delta must be > 0");
    if (!(lambda >= 0)) throw std::invalid_argument("lambda must be >= 0");
    if (parse_classes < 2) throw std::invalid_argument("parse_classes must be >= 2");
  }
};

/// 0.5 e^2 for |e| <= delta, delta (|e| - delta/2) beyond.
template <typename T>
T huber(T e, T delta) {
  const T a = std::abs(e);
  return a <= delta ? T(0.5) * e * e : delta * (a - T(0.5) * delta);
}

template <typename T>
T huber_grad(T e, T delta) {
  return std::clamp(e, -delta, delta);
}

template <typename T>
T half_squared(T e) {
  return T(0.5) * e * e;
}

/// Per-channel regression penalty selected by `kind`.
template <typename T>
T regression_penalty(LossKind kind, T e, T delta) {
  return kind == LossKind::Huber ? huber(e, delta) : half_squared(e);
}

template <typename T>
T regression_penalty_grad(LossKind kind, T e, T delta) {
  return kind == LossKind::Huber ? huber_grad(e, delta) : e;
}

/// In-place numerically stable softmax.
template <typename T>
void softmax_inplace(std::span<T> v) {
  T mx = v[0];
  for (T x : v) mx = std::max(mx, x);
  T s = 0;
  for (T& x : v) {
    x = std::exp(x - mx);
    s += x;
  }
  for (T& x : v) x /= s;
}

/// -log softmax(logits)[label], stable.
template <typename T>
T cross_entropy(std::span<const T> logits, int label) {
  T mx = logits[0];
  for (T x : logits) mx = std::max(mx, x);
  T s = 0;
  for (T x : logits) s += std::exp(x - mx);
  return std::log(s) + mx - logits[label];
}

/// Mean cross-entropy over pixels whose label is not `ignore`.
/// `logits` is [pixel][classes].
template <typename T>
T parse_cross_entropy(std::span<const T> logits, std::span<const std::uint8_t> labels,
                      int classes, std::uint8_t ignore = 255) {
  T total = 0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] == ignore) continue;
    if (labels[p] >= classes) {
      throw std::out_of_range("parse label " + std::to_string(labels[p]) + " >= " +
                              std::to_string(classes) + " classes");
    }
    total += cross_entropy(logits.subspan(p * classes, classes), labels[p]);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("parse_cross_entropy: every pixel is ignored");
  return total / static_cast<T>(n);
}

inline double total_loss(double l_reg, double l_parse, double lambda) {
  return l_reg + lambda * l_parse;
}

}  // namespace saadjust
