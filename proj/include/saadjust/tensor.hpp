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
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace saadjust {

/// Dense C x H x W map, channel-major.
template <typename T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, T(0)) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  T* plane(int c) { return data.data() + c * plane_size(); }
  const T* plane(int c) const { return data.data() + c * plane_size(); }
  T& at(int c, int y, int x) { return data[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  T at(int c, int y, int x) const {
    return data[c * plane_size() + static_cast<std::size_t>(y) * width + x];
  }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }
};

/// Learning-rate group. Backbone tensors are fine-tuned at a reduced rate.
enum class ParamGroup { Backbone, Head };

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  ParamGroup group = ParamGroup::Head;
  bool trainable = true;  // false for running statistics

  std::size_t size() const { return value.size(); }
};

/// Flat registry of named tensors. Layers hold indices into it.
template <typename T>
class ParamStore {
 public:
  int add(std::string name, std::vector<int> shape, ParamGroup group, bool trainable = true) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    tensors_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0)), group,
                        trainable});
    return static_cast<int>(tensors_.size()) - 1;
  }

  ParamTensor<T>& operator[](int i) { return tensors_[i]; }
  const ParamTensor<T>& operator[](int i) const { return tensors_[i]; }
  T* data(int i) { return tensors_[i].value.data(); }
  const T* data(int i) const { return tensors_[i].value.data(); }
  std::size_t count() const { return tensors_.size(); }
  std::vector<ParamTensor<T>>& tensors() { return tensors_; }
  const std::vector<ParamTensor<T>>& tensors() const { return tensors_; }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.trainable ? t.size() : 0;
    return n;
  }

  /// Zero-filled buffers parallel to every tensor.
  std::vector<std::vector<T>> zeros_like() const {
    std::vector<std::vector<T>> g(tensors_.size());
    for (std::size_t i = 0; i < tensors_.size(); ++i) g[i].assign(tensors_[i].size(), T(0));
    return g;
  }

 private:
  std::vector<ParamTensor<T>> tensors_;
};

template <typename T>
using GradStore = std::vector<std::vector<T>>;

template <typename T>
void fill_uniform(std::vector<T>& v, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : v) x = static_cast<T>(dist(rng));
}

}  // namespace saadjust
