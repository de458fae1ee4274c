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

// Context features: residual CNN backbone, spatial RNN on the deepest block,
// and the sparse hypercolumn readout with a learned squeeze.

#pragma once

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "saadjust/data.hpp"
#include "saadjust/layers.hpp"
#include "saadjust/spatial_rnn.hpp"
#include "saadjust/tensor.hpp"

namespace saadjust {

enum class Profile { Toy, Full };

inline std::string profile_name(Profile p) { return p == Profile::Toy ? "toy" : "full"; }

inline Profile parse_profile(const std::string& s) {
  if (s == "toy") return Profile::Toy;
  if (s == "full") return Profile::Full;
  throw std::invalid_argument("unknown profile '" + s + "'");
}

struct BackboneConfig {
  Profile profile = Profile::Toy;
  int first_channels = 16;
  std::vector<int> block_channels{16, 32, 64};
  int rnn_hidden = 16;
  int rnn_channels = 32;
  int context_dim = 32;
  bool pretrained = false;
  std::string pretrained_path;

  static BackboneConfig toy() { return BackboneConfig{}; }

  static BackboneConfig full() {
    BackboneConfig c;
    c.profile = Profile::Full;
    c.first_channels = 64;
    c.block_channels = {256, 512, 1024};
    c.rnn_hidden = 256;
    c.rnn_channels = 1024;
    c.context_dim = 512;
    return c;
  }

  void validate() const {
    if (block_channels.empty()) throw std::invalid_argument("block_channels must be nonempty");
    for (int c : block_channels) {
      if (c <= 0) throw std::invalid_argument("block_channels must be positive");
    }
    if (first_channels <= 0 || rnn_hidden <= 0 || rnn_channels <= 0) {
      throw std::invalid_argument("channel counts must be positive");
    }
    if (context_dim < 1) throw std::invalid_argument("context_dim must be >= 1");
  }

  /// Every block halves the resolution.
  int downsampling() const { return 1 << block_channels.size(); }

  /// Length of the concatenated hypercolumn (blocks + RNN).
  int hypercolumn_dim() const {
    int d = rnn_channels;
    for (int c : block_channels) d += c;
    return d;
  }

  bool operator==(const BackboneConfig&) const = default;
};

/// Per-image feature maps.
template <typename T>
struct FeatureMaps {
  FeatureMap<T> first;               // input resolution
  std::vector<FeatureMap<T>> blocks; // progressively downsampled
  FeatureMap<T> rnn;                 // same resolution as the last block

  int image_height() const { return first.height; }
  int image_width() const { return first.width; }
};

/// Normalised Lab planes fed to the network: L/100, a/110, b/110.
inline constexpr double kLabScale[3] = {100.0, 110.0, 110.0};

template <typename T>
FeatureMap<T> lab_to_planes(const LabImage& img) {
  FeatureMap<T> m(3, img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const double* p = img.px(r, c);
      for (int ch = 0; ch < 3; ++ch) m.at(ch, r, c) = static_cast<T>(p[ch] / kLabScale[ch]);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------

struct ResidualBlock {
  Conv2d conv_a;    // 3x3, stride 2
  Conv2d conv_b;    // 3x3, stride 1
  Conv2d shortcut;  // 1x1, stride 2
};

class Backbone {
 public:
  template <typename T>
  struct Cache {
    std::vector<FeatureMap<T>> input;
    std::vector<FeatureMap<T>> first;
    // [block][image]
    std::vector<std::vector<FeatureMap<T>>> block_in, block_mid, block_out;
    SpatialRnn::Cache<T> rnn;
  };

  Backbone() = default;

  template <typename T>
  Backbone(ParamStore<T>& store, const BackboneConfig& config) : config_(config) {
    config_.validate();
    first_ = Conv2d::create(store, "backbone.first", 3, config.first_channels, 3, 1,
                            ParamGroup::Backbone);
    int in_c = config.first_channels;
    for (std::size_t i = 0; i < config.block_channels.size(); ++i) {
      const int out_c = config.block_channels[i];
      const std::string p = "backbone.block" + std::to_string(i);
      ResidualBlock b;
      b.conv_a = Conv2d::create(store, p + ".conv_a", in_c, out_c, 3, 2, ParamGroup::Backbone);
      b.conv_b = Conv2d::create(store, p + ".conv_b", out_c, out_c, 3, 1, ParamGroup::Backbone);
      b.shortcut = Conv2d::create(store, p + ".shortcut", in_c, out_c, 1, 2, ParamGroup::Backbone);
      blocks_.push_back(b);
      in_c = out_c;
    }
    rnn_ = SpatialRnn::create(store, "rnn", in_c, config.rnn_hidden, config.rnn_channels);
  }

  const BackboneConfig& config() const { return config_; }
  const SpatialRnn& rnn() const { return rnn_; }

  template <typename T>
  void init(ParamStore<T>& store, std::mt19937_64& rng) const {
    first_.init(store, rng);
    for (const auto& b : blocks_) {
      b.conv_a.init(store, rng);
      b.conv_b.init(store, rng);
      b.shortcut.init(store, rng);
    }
    rnn_.init(store, rng);
  }

  /// Names of the tensors a pretrained checkpoint must provide.
  template <typename T>
  std::vector<std::string> pretrained_tensor_names(const ParamStore<T>& store) const {
    std::vector<std::string> names;
    for (const auto& t : store.tensors()) {
      if (t.group == ParamGroup::Backbone) names.push_back(t.name);
    }
    return names;
  }

  template <typename T>
  std::vector<FeatureMaps<T>> forward(const ParamStore<T>& store,
                                      const std::vector<FeatureMap<T>>& in, bool training,
                                      std::type_identity_t<Cache<T>>* cache) const {
    const int B = static_cast<int>(in.size());
    for (const auto& m : in) {
      if (m.height % config_.downsampling() != 0 || m.width % config_.downsampling() != 0) {
        throw std::invalid_argument("backbone input " + std::to_string(m.height) + "x" +
                                    std::to_string(m.width) + " not divisible by " +
                                    std::to_string(config_.downsampling()));
      }
    }
    std::vector<FeatureMaps<T>> out(B);
    std::vector<FeatureMap<T>> cur(B);
    if (cache) {
      cache->input = in;
      cache->block_in.assign(blocks_.size(), {});
      cache->block_mid.assign(blocks_.size(), {});
      cache->block_out.assign(blocks_.size(), {});
    }
    for (int b = 0; b < B; ++b) {
      FeatureMap<T> f = first_.forward(store, in[b]);
      relu_inplace(f);
      out[b].first = f;
      cur[b] = std::move(f);
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& blk = blocks_[i];
      for (int b = 0; b < B; ++b) {
        FeatureMap<T> mid = blk.conv_a.forward(store, cur[b]);
        relu_inplace(mid);
        FeatureMap<T> res = blk.conv_b.forward(store, mid);
        const FeatureMap<T> sc = blk.shortcut.forward(store, cur[b]);
        for (std::size_t k = 0; k < res.data.size(); ++k) res.data[k] += sc.data[k];
        relu_inplace(res);
        if (cache) {
          cache->block_in[i].push_back(std::move(cur[b]));
          cache->block_mid[i].push_back(std::move(mid));
          cache->block_out[i].push_back(res);
        }
        out[b].blocks.push_back(res);
        cur[b] = std::move(res);
      }
    }
    if (cache) {
      cache->first.clear();
      for (const auto& o : out) cache->first.push_back(o.first);
    }
    auto rnn_out = rnn_.forward(store, cur, training, cache ? &cache->rnn : nullptr);
    for (int b = 0; b < B; ++b) out[b].rnn = std::move(rnn_out[b]);
    return out;
  }

  template <typename T>
  void update_running_stats(ParamStore<T>& store, const Cache<T>& cache) const {
    rnn_.update_running_stats(store, cache.rnn);
  }

  /// `grad` carries dLoss/dmap for every map in FeatureMaps (zero-filled where
  /// unused).
  template <typename T>
  void backward(const ParamStore<T>& store, const Cache<T>& cache,
                std::vector<FeatureMaps<T>>& grad, GradStore<T>& grads) const {
    const int B = static_cast<int>(grad.size());
    std::vector<FeatureMap<T>> drnn_in;
    std::vector<FeatureMap<T>> drnn(B);
    for (int b = 0; b < B; ++b) drnn[b] = grad[b].rnn;
    rnn_.backward(store, cache.rnn, drnn, grads, drnn_in);

    std::vector<FeatureMap<T>> dcur(B);
    const std::size_t nb = blocks_.size();
    for (int b = 0; b < B; ++b) {
      dcur[b] = grad[b].blocks[nb - 1];
      for (std::size_t k = 0; k < dcur[b].data.size(); ++k) dcur[b].data[k] += drnn_in[b].data[k];
    }
    for (std::size_t ii = nb; ii-- > 0;) {
      const auto& blk = blocks_[ii];
      for (int b = 0; b < B; ++b) {
        FeatureMap<T> dsum = std::move(dcur[b]);
        relu_backward_inplace(cache.block_out[ii][b], dsum);
        FeatureMap<T> dmid, din_a, din_s;
        blk.conv_b.backward(store, cache.block_mid[ii][b], dsum, grads, &dmid);
        relu_backward_inplace(cache.block_mid[ii][b], dmid);
        blk.conv_a.backward(store, cache.block_in[ii][b], dmid, grads, &din_a);
        blk.shortcut.backward(store, cache.block_in[ii][b], dsum, grads, &din_s);
        for (std::size_t k = 0; k < din_a.data.size(); ++k) din_a.data[k] += din_s.data[k];
        const FeatureMap<T>& upstream = ii == 0 ? grad[b].first : grad[b].blocks[ii - 1];
        for (std::size_t k = 0; k < din_a.data.size(); ++k) din_a.data[k] += upstream.data[k];
        dcur[b] = std::move(din_a);
      }
    }
    for (int b = 0; b < B; ++b) {
      relu_backward_inplace(cache.first[b], dcur[b]);
      first_.backward(store, cache.input[b], dcur[b], grads, nullptr);
    }
  }

  /// Zero gradients shaped like `maps`.
  template <typename T>
  static std::vector<FeatureMaps<T>> zero_grads_like(const std::vector<FeatureMaps<T>>& maps) {
    std::vector<FeatureMaps<T>> g(maps.size());
    for (std::size_t b = 0; b < maps.size(); ++b) {
      const auto& m = maps[b];
      g[b].first = FeatureMap<T>(m.first.channels, m.first.height, m.first.width);
      for (const auto& bl : m.blocks) g[b].blocks.emplace_back(bl.channels, bl.height, bl.width);
      g[b].rnn = FeatureMap<T>(m.rnn.channels, m.rnn.height, m.rnn.width);
    }
    return g;
  }

 private:
  BackboneConfig config_;
  Conv2d first_;
  std::vector<ResidualBlock> blocks_;
  SpatialRnn rnn_;
};

// ---------------------------------------------------------------------------
// Sparse hypercolumn readout: per pixel, bilinear sample of each block map and
// the RNN map, per-source L2 normalisation, concatenation, linear squeeze.

class ContextReadout {
 public:
  template <typename T>
  struct Cache {
    // per pixel, per source
    std::vector<BilinearTap> taps;
    std::vector<T> raw;     // [pixel][D] un-normalised samples
    std::vector<T> hc;      // [pixel][D] normalised hypercolumn
    std::vector<T> norms;   // [pixel][sources]
  };

  ContextReadout() = default;

  template <typename T>
  ContextReadout(ParamStore<T>& store, const BackboneConfig& config)
      : source_dims_(config.block_channels), context_dim_(config.context_dim) {
    source_dims_.push_back(config.rnn_channels);
    dim_ = config.hypercolumn_dim();
    weight_ = store.add("squeeze.weight", {context_dim_, dim_}, ParamGroup::Head);
    bias_ = store.add("squeeze.bias", {context_dim_}, ParamGroup::Head);
  }

  int hypercolumn_dim() const { return dim_; }
  int context_dim() const { return context_dim_; }
  int sources() const { return static_cast<int>(source_dims_.size()); }

  template <typename T>
  void init(ParamStore<T>& store, std::mt19937_64& rng) const {
    // Each normalised source has unit norm, so scale by the source count.
    fill_uniform(store[weight_].value, std::sqrt(3.0 / sources()), rng);
    std::fill(store[bias_].value.begin(), store[bias_].value.end(), T(0));
  }

  template <typename T>
  static const FeatureMap<T>& source_map(const FeatureMaps<T>& maps, int s) {
    return s < static_cast<int>(maps.blocks.size()) ? maps.blocks[s] : maps.rnn;
  }

  template <typename T>
  static FeatureMap<T>& source_map(FeatureMaps<T>& maps, int s) {
    return s < static_cast<int>(maps.blocks.size()) ? maps.blocks[s] : maps.rnn;
  }

  /// Normalised concatenated hypercolumns [pixel][D] (before squeeze).
  template <typename T>
  std::vector<T> hypercolumns(const FeatureMaps<T>& maps, std::span<const PixelCoord> coords,
                              std::type_identity_t<Cache<T>>* cache) const {
    const int H = maps.image_height(), W = maps.image_width();
    const int S = sources();
    const std::size_t P = coords.size();
    std::vector<T> hc(P * dim_);
    std::vector<T> raw(P * dim_);
    std::vector<T> norms(P * S);
    std::vector<BilinearTap> taps(P * S);
    for (std::size_t p = 0; p < P; ++p) {
      const auto& pc = coords[p];
      if (pc.row < 0 || pc.row >= H || pc.col < 0 || pc.col >= W) {
        throw std::out_of_range("hypercolumn coordinate (" + std::to_string(pc.row) + "," +
                                std::to_string(pc.col) + ") outside " + std::to_string(H) +
                                "x" + std::to_string(W));
      }
      int off = 0;
      for (int s = 0; s < S; ++s) {
        const auto& m = source_map(maps, s);
        const BilinearTap tap = bilinear_tap(pc.row, pc.col, H, W, m.height, m.width);
        taps[p * S + s] = tap;
        std::span<T> rv(&raw[p * dim_ + off], m.channels);
        bilinear_sample(m, tap, rv);
        norms[p * S + s] = l2_normalize<T>(rv, std::span<T>(&hc[p * dim_ + off], m.channels));
        off += m.channels;
      }
    }
    if (cache) {
      cache->taps = std::move(taps);
      cache->raw = std::move(raw);
      cache->norms = std::move(norms);
      cache->hc = hc;
    }
    return hc;
  }

  /// Context vectors [pixel][context_dim].
  template <typename T>
  std::vector<T> forward(const ParamStore<T>& store, const FeatureMaps<T>& maps,
                         std::span<const PixelCoord> coords, std::type_identity_t<Cache<T>>* cache) const {
    Cache<T> local;
    Cache<T>* c = cache ? cache : &local;
    hypercolumns(maps, coords, c);
    return squeeze(store, c->hc, coords.size());
  }

  template <typename T>
  std::vector<T> squeeze(const ParamStore<T>& store, const std::vector<T>& hc,
                         std::size_t P) const {
    const T* w = store.data(weight_);
    const T* b = store.data(bias_);
    std::vector<T> ctx(P * context_dim_);
    for (std::size_t p = 0; p < P; ++p) {
      const T* x = &hc[p * dim_];
      for (int m = 0; m < context_dim_; ++m) {
        const T* row = w + static_cast<std::size_t>(m) * dim_;
        T acc = b[m];
        for (int d = 0; d < dim_; ++d) acc += row[d] * x[d];
        ctx[p * context_dim_ + m] = acc;
      }
    }
    return ctx;
  }

  /// Accumulates squeeze gradients and scatters into the map gradients.
  template <typename T>
  void backward(const ParamStore<T>& store, const Cache<T>& cache, std::span<const T> dctx,
                GradStore<T>& grads, FeatureMaps<T>& dmaps) const {
    const std::size_t P = cache.taps.size() / sources();
    const T* w = store.data(weight_);
    T* dw = grads[weight_].data();
    T* db = grads[bias_].data();
    const int S = sources();
    std::vector<T> dhc(dim_), draw(dim_);
    for (std::size_t p = 0; p < P; ++p) {
      std::fill(dhc.begin(), dhc.end(), T(0));
      const T* x = &cache.hc[p * dim_];
      for (int m = 0; m < context_dim_; ++m) {
        const T g = dctx[p * context_dim_ + m];
        if (g == T(0)) continue;
        db[m] += g;
        const T* row = w + static_cast<std::size_t>(m) * dim_;
        T* drow = dw + static_cast<std::size_t>(m) * dim_;
        for (int d = 0; d < dim_; ++d) {
          drow[d] += g * x[d];
          dhc[d] += g * row[d];
        }
      }
      int off = 0;
      for (int s = 0; s < S; ++s) {
        auto& gm = source_map(dmaps, s);
        const int C = gm.channels;
        std::fill(draw.begin(), draw.begin() + C, T(0));
        l2_normalize_backward<T>(std::span<const T>(&cache.raw[p * dim_ + off], C),
                                 cache.norms[p * S + s],
                                 std::span<const T>(&dhc[off], C), std::span<T>(draw.data(), C));
        bilinear_scatter(gm, cache.taps[p * S + s], std::span<const T>(draw.data(), C));
        off += C;
      }
    }
  }

 private:
  std::vector<int> source_dims_;
  int dim_ = 0;
  int context_dim_ = 0;
  int weight_ = -1;
  int bias_ = -1;
};

}  // namespace saadjust
