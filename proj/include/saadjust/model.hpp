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

// Full adjustment network: backbone + context readout + bilinear head, with an
// optional preset posterior (adjustment-map variant) and an optional
// scene-parsing head (multi-task variant).

#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "saadjust/adjustmap.hpp"
#include "saadjust/bilinear.hpp"
#include "saadjust/colorspace.hpp"
#include "saadjust/data.hpp"
#include "saadjust/features.hpp"
#include "saadjust/losses.hpp"
#include "saadjust/tensor.hpp"

namespace saadjust {

/// Which loss terms and which context path are active.
struct Variant {
  LossKind loss = LossKind::Huber;
  bool multitask = false;
  bool adjustment_map = false;

  std::string name() const {
    std::string s = loss == LossKind::Huber ? "huber" : "mse";
    if (multitask) s += "+mt";
    if (adjustment_map) s += "+s";
    return s;
  }

  static Variant parse(const std::string& s) {
    for (const Variant& v : all()) {
      if (v.name() == s) return v;
    }
    throw std::invalid_argument("unknown variant '" + s +
                                "' (expected mse, huber, huber+mt, huber+mt+s or huber+s)");
  }

  static std::vector<Variant> all() {
    return {{LossKind::Mse, false, false},
            {LossKind::Huber, false, false},
            {LossKind::Huber, true, false},
            {LossKind::Huber, true, true},
            {LossKind::Huber, false, true}};
  }

  bool operator==(const Variant&) const = default;
};

struct ModelConfig {
  BackboneConfig backbone;
  int rank = 32;
  int K = 2;
  int parse_classes = 150;
  Variant variant;

  void validate() const {
    backbone.validate();
    if (rank < 1) throw std::invalid_argument("rank must be >= 1");
    if (K < 1 || K > 255) throw std::invalid_argument("K must be in [1, 255]");
    if (parse_classes < 2) throw std::invalid_argument("parse_classes must be >= 2");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

/// Reads model keys; the profile selects defaults that explicit keys override.
inline ModelConfig model_config_from_kv(const KeyValueConfig& kv) {
  ModelConfig c;
  const Profile profile = parse_profile(kv.get_string("profile", "toy"));
  c.backbone = profile == Profile::Full ? BackboneConfig::full() : BackboneConfig::toy();
  if (profile == Profile::Full) c.rank = 512;
  auto& b = c.backbone;
  b.first_channels = static_cast<int>(kv.get_int("first_channels", b.first_channels));
  b.block_channels = kv.get_ints("block_channels", b.block_channels);
  b.rnn_hidden = static_cast<int>(kv.get_int("rnn_hidden", b.rnn_hidden));
  b.rnn_channels = static_cast<int>(kv.get_int("rnn_channels", b.rnn_channels));
  b.context_dim = static_cast<int>(kv.get_int("context_dim", b.context_dim));
  b.pretrained = kv.get_bool("pretrained", b.pretrained);
  b.pretrained_path = kv.get_string("pretrained_path", b.pretrained_path);
  c.rank = static_cast<int>(kv.get_int("rank", c.rank));
  c.K = static_cast<int>(kv.get_int("K", c.K));
  c.parse_classes = static_cast<int>(kv.get_int("parse_classes", c.parse_classes));
  c.variant = Variant::parse(kv.get_string("variant", c.variant.name()));
  c.validate();
  return c;
}

inline void model_config_to_kv(const ModelConfig& c, KeyValueConfig& kv) {
  const auto& b = c.backbone;
  kv.set("profile", profile_name(b.profile));
  kv.set("first_channels", std::to_string(b.first_channels));
  kv.set("block_channels", join_ints(b.block_channels));
  kv.set("rnn_hidden", std::to_string(b.rnn_hidden));
  kv.set("rnn_channels", std::to_string(b.rnn_channels));
  kv.set("context_dim", std::to_string(b.context_dim));
  kv.set("pretrained", b.pretrained ? "true" : "false");
  if (!b.pretrained_path.empty()) kv.set("pretrained_path", b.pretrained_path);
  kv.set("rank", std::to_string(c.rank));
  kv.set("K", std::to_string(c.K));
  kv.set("parse_classes", std::to_string(c.parse_classes));
  kv.set("variant", c.variant.name());
}

/// One training image with its sampled pixels.
struct TrainingSample {
  const AdjustmentExample* example = nullptr;
  std::vector<PixelCoord> coords;
};

struct LossTerms {
  double total = 0;
  double reg = 0;
  double parse = 0;
  std::vector<double> mean_posterior;  // batch-mean p(m_k | x), S variant only
};

enum class InferenceMode { Hard, Soft };

struct InferenceResult {
  LabImage output;
  std::optional<PresetPosterior> posterior;
  std::optional<AdjustmentMap> map;
};

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& config) : config_(config) {
    config_.validate();
    backbone_ = Backbone(store_, config_.backbone);
    readout_ = ContextReadout(store_, config_.backbone);
    const int M = config_.variant.adjustment_map ? config_.K : config_.backbone.context_dim;
    head_ = BilinearHead(store_, color_dim(), M, config_.rank);
    if (config_.variant.adjustment_map) {
      posterior_ = PosteriorHead(store_, "posterior", config_.backbone.context_dim, config_.K);
    }
    if (config_.variant.multitask) {
      parse_ = PosteriorHead(store_, "parse", config_.backbone.context_dim,
                             config_.parse_classes);
    }
  }

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const Backbone& backbone() const { return backbone_; }
  const BilinearHead& head() const { return head_; }
  int color_dim() const { return kColorChannels + config_.backbone.first_channels; }
  int K() const { return config_.variant.adjustment_map ? config_.K : 1; }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    backbone_.init(store_, rng);
    readout_.init(store_, rng);
    head_.init(store_, rng);
    if (config_.variant.adjustment_map) posterior_.init(store_, rng);
    if (config_.variant.multitask) parse_.init(store_, rng);
  }

  /// Zeroes every trainable tensor. The head then outputs a zero residual.
  void zero_parameters() {
    for (auto& t : store_.tensors()) {
      if (t.trainable) std::fill(t.value.begin(), t.value.end(), T(0));
    }
  }

  // -------------------------------------------------------------------------
  // Training

  /// Mean regression loss over every sampled pixel of `batch` plus lambda times
  /// the parse loss over `parse_batch`. Gradients accumulate into `grads`.
  /// Running normalisation statistics are updated when `update_stats` is set.
  LossTerms loss_and_grad(const std::vector<TrainingSample>& batch,
                          const std::vector<TrainingSample>& parse_batch,
                          const LossConfig& loss, std::span<const double> class_weights,
                          GradStore<T>& grads, bool update_stats = true) {
    LossTerms terms;
    terms.reg = regression_pass(batch, loss, class_weights, grads, update_stats,
                                &terms.mean_posterior);
    if (config_.variant.multitask && !parse_batch.empty()) {
      terms.parse = parse_pass(parse_batch, loss.lambda, grads, update_stats);
    }
    terms.total = total_loss(terms.reg, terms.parse, loss.lambda);
    return terms;
  }

  // -------------------------------------------------------------------------
  // Inference

  /// Dense prediction at every pixel. For the adjustment-map variant, `mode`
  /// selects argmax (default) or posterior-weighted blending; a user map
  /// bypasses the posterior.
  InferenceResult infer(const LabImage& image, InferenceMode mode = InferenceMode::Hard,
                        const AdjustmentMap* user_map = nullptr) const {
    if (user_map) {
      if (!config_.variant.adjustment_map) {
        throw std::invalid_argument("model variant '" + config_.variant.name() +
                                    "' has no adjustment map to substitute");
      }
      if (user_map->assignments.height != image.height ||
          user_map->assignments.width != image.width) {
        throw std::invalid_argument(
            "adjustment map " + std::to_string(user_map->assignments.height) + "x" +
            std::to_string(user_map->assignments.width) + " does not match image " +
            std::to_string(image.height) + "x" + std::to_string(image.width));
      }
      if (user_map->K != config_.K) {
        throw std::invalid_argument("adjustment map K=" + std::to_string(user_map->K) +
                                    " does not match model K=" + std::to_string(config_.K));
      }
      user_map->validate();
    }
    const LabImage padded = pad_replicate(image);
    std::vector<FeatureMap<T>> in{lab_to_planes<T>(padded)};
    const auto maps = backbone_.forward(store_, in, false, nullptr);
    const FeatureMaps<T>& fm = maps[0];

    InferenceResult res;
    res.output = LabImage(image.height, image.width);
    const bool S = config_.variant.adjustment_map;
    const int K = config_.K;
    const bool need_posterior = S && !user_map;
    if (need_posterior) {
      res.posterior = PresetPosterior{K, std::vector<double>(image.pixel_count() * K)};
    }
    const auto view = head_.view(store_);
    const int C1 = config_.backbone.first_channels;
    std::vector<T> first(C1), logits(K);
    std::vector<PixelCoord> coords;
    constexpr std::size_t kTile = 4096;
    const std::size_t total = image.pixel_count();
    for (std::size_t start = 0; start < total; start += kTile) {
      const std::size_t end = std::min(total, start + kTile);
      coords.clear();
      for (std::size_t i = start; i < end; ++i) {
        coords.push_back({static_cast<int>(i / image.width), static_cast<int>(i % image.width)});
      }
      std::vector<T> ctx;
      if (!user_map) ctx = readout_.forward(store_, fm, coords, nullptr);
      const int M = config_.backbone.context_dim;
      for (std::size_t p = 0; p < coords.size(); ++p) {
        const auto [r, c] = coords[p];
        const Lab x = image.get(r, c);
        for (int ch = 0; ch < C1; ++ch) first[ch] = fm.first.at(ch, r, c);
        const auto f_clr = build_color_features<T>(x, first);
        if (!S) {
          const auto tr = bilinear_forward<T>(view, f_clr, std::span<const T>(&ctx[p * M], M));
          res.output.set(r, c, apply_residual<T>(x, tr.yhat));
          continue;
        }
        const std::size_t idx = start + p;
        if (user_map) {
          res.output.set(r, c, preset_output(view, f_clr, x, user_map->assignments.data[idx]));
          continue;
        }
        posterior_.logits<T>(store_, std::span<const T>(&ctx[p * M], M), logits);
        double* prob = &res.posterior->probabilities[idx * K];
        for (int k = 0; k < K; ++k) prob[k] = static_cast<double>(logits[k]);
        softmax_inplace(std::span<double>(prob, K));
        if (mode == InferenceMode::Hard) {
          const int k = argmax_lowest(std::span<const double>(prob, K));
          res.output.set(r, c, preset_output(view, f_clr, x, k));
        } else {
          Lab y{0, 0, 0};
          for (int k = 0; k < K; ++k) {
            const Lab yk = preset_output(view, f_clr, x, k);
            for (int ch = 0; ch < 3; ++ch) y[ch] += prob[k] * yk[ch];
          }
          res.output.set(r, c, y);
        }
      }
    }
    if (need_posterior) {
      res.map = extract_adjustment_map(*res.posterior, image.height, image.width);
    } else if (user_map) {
      res.map = *user_map;
    }
    return res;
  }

  /// Output for every preset at one pixel given its colour features.
  std::vector<Lab> per_preset_predictions(std::span<const T> f_clr, const Lab& x) const {
    if (!config_.variant.adjustment_map) {
      throw std::invalid_argument("per_preset_predictions requires an adjustment-map variant");
    }
    const auto view = head_.view(store_);
    std::vector<Lab> out;
    for (int k = 0; k < config_.K; ++k) out.push_back(preset_output(view, f_clr, x, k));
    return out;
  }

  /// Replicate-pads bottom/right to a multiple of the downsampling factor.
  LabImage pad_replicate(const LabImage& image) const {
    const int f = config_.backbone.downsampling();
    const int H = (image.height + f - 1) / f * f;
    const int W = (image.width + f - 1) / f * f;
    if (H == image.height && W == image.width) return image;
    LabImage out(H, W);
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        out.set(r, c, image.get(std::min(r, image.height - 1), std::min(c, image.width - 1)));
      }
    }
    return out;
  }

 private:
  Lab preset_output(const BilinearView<T>& view, std::span<const T> f_clr, const Lab& x,
                    int k) const {
    BilinearTrace<T> tr;
    color_branch(view, f_clr, tr.color_act);
    context_branch_onehot(view, k, tr.context_act);
    combine(view, tr);
    return apply_residual<T>(x, tr.yhat);
  }

  static std::vector<FeatureMap<T>> input_planes(const std::vector<TrainingSample>& batch) {
    std::vector<FeatureMap<T>> in;
    for (const auto& s : batch) in.push_back(lab_to_planes<T>(s.example->input));
    return in;
  }

  double regression_pass(const std::vector<TrainingSample>& batch, const LossConfig& loss,
                         std::span<const double> class_weights, GradStore<T>& grads,
                         bool update_stats, std::vector<double>* mean_posterior) {
    if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
    const bool S = config_.variant.adjustment_map;
    const int K = config_.K;
    if (S && static_cast<int>(class_weights.size()) != K) {
      throw std::invalid_argument("loss_and_grad: expected " + std::to_string(K) +
                                  " class weights");
    }
    std::size_t n_pixels = 0;
    for (const auto& s : batch) n_pixels += s.coords.size();
    if (n_pixels == 0) throw std::invalid_argument("loss_and_grad: no sampled pixels");
    const T inv_n = T(1) / static_cast<T>(n_pixels);
    const T delta = static_cast<T>(loss.delta);

    typename Backbone::Cache<T> bcache;
    const auto in = input_planes(batch);
    const auto maps = backbone_.forward(store_, in, true, &bcache);
    if (update_stats) backbone_.update_running_stats(store_, bcache);
    auto dmaps = Backbone::zero_grads_like(maps);

    const auto view = head_.view(store_);
    const auto gview = head_.grad_view(grads);
    const int C1 = config_.backbone.first_channels;
    const int N = color_dim();
    const int M = config_.backbone.context_dim;
    std::vector<T> w(K, T(1));
    for (int k = 0; S && k < K; ++k) w[k] = static_cast<T>(class_weights[k]);
    if (mean_posterior) mean_posterior->assign(S ? K : 0, 0.0);

    double total = 0;
    std::vector<T> first(C1), df_clr(N), dfirst(C1), logits(K), prob(K), lk(K), dlogits(K);
    std::vector<BilinearTrace<T>> traces(K);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& ex = *batch[b].example;
      const auto& coords = batch[b].coords;
      typename ContextReadout::Cache<T> rcache;
      const auto ctx = readout_.forward(store_, maps[b], coords, &rcache);
      std::vector<T> dctx(ctx.size(), T(0));
      for (std::size_t p = 0; p < coords.size(); ++p) {
        const auto [r, c] = coords[p];
        const Lab x = ex.input.get(r, c);
        const Lab y = ex.target.get(r, c);
        for (int ch = 0; ch < C1; ++ch) first[ch] = maps[b].first.at(ch, r, c);
        const auto f_clr = build_color_features<T>(x, first);
        std::span<const T> cx(&ctx[p * M], M);
        std::span<T> dcx(&dctx[p * M], M);
        T target_res[3];
        for (int ch = 0; ch < 3; ++ch) {
          target_res[ch] = static_cast<T>((y[ch] - x[ch]) / kLabScale[ch]);
        }
        std::fill(df_clr.begin(), df_clr.end(), T(0));
        if (!S) {
          const auto tr = bilinear_forward<T>(view, f_clr, cx);
          T l = 0, dy[3];
          for (int ch = 0; ch < 3; ++ch) {
            const T e = target_res[ch] - tr.yhat[ch];
            l += regression_penalty(loss.kind, e, delta);
            dy[ch] = -regression_penalty_grad(loss.kind, e, delta) * inv_n;
          }
          total += static_cast<double>(l);
          bilinear_backward<T>(view, gview, f_clr, cx, -1, tr, dy, df_clr, dcx);
        } else {
          posterior_.logits<T>(store_, cx, logits);
          std::copy(logits.begin(), logits.end(), prob.begin());
          softmax_inplace(std::span<T>(prob));
          for (int k = 0; k < K; ++k) {
            auto& tr = traces[k];
            color_branch(view, std::span<const T>(f_clr), tr.color_act);
            context_branch_onehot(view, k, tr.context_act);
            combine(view, tr);
            T l = 0;
            for (int ch = 0; ch < 3; ++ch) {
              l += regression_penalty(loss.kind, target_res[ch] - tr.yhat[ch], delta);
            }
            lk[k] = l;
          }
          total += static_cast<double>(expected_regression_loss<T>(prob, lk, w));
          expected_regression_loss_logit_grad<T>(prob, lk, w, dlogits);
          for (auto& g : dlogits) g *= inv_n;
          posterior_.backward<T>(store_, cx, dlogits, grads, dcx);
          for (int k = 0; k < K; ++k) {
            const auto& tr = traces[k];
            const T scale = w[k] * prob[k] * inv_n;
            T dy[3];
            for (int ch = 0; ch < 3; ++ch) {
              dy[ch] = -regression_penalty_grad(loss.kind, target_res[ch] - tr.yhat[ch], delta) *
                       scale;
            }
            bilinear_backward<T>(view, gview, f_clr, {}, k, tr, dy, df_clr, {});
          }
          if (mean_posterior) {
            for (int k = 0; k < K; ++k) (*mean_posterior)[k] += static_cast<double>(prob[k]);
          }
        }
        // Colour features: only the normalised first-layer suffix is learned.
        std::fill(dfirst.begin(), dfirst.end(), T(0));
        l2_normalize_backward<T>(first, l2_norm(first),
                                 std::span<const T>(df_clr.data() + kColorChannels, C1), dfirst);
        for (int ch = 0; ch < C1; ++ch) dmaps[b].first.at(ch, r, c) += dfirst[ch];
      }
      readout_.backward<T>(store_, rcache, dctx, grads, dmaps[b]);
    }
    backbone_.backward(store_, bcache, dmaps, grads);
    if (mean_posterior) {
      for (auto& v : *mean_posterior) v /= static_cast<double>(n_pixels);
    }
    return total / static_cast<double>(n_pixels);
  }

  double parse_pass(const std::vector<TrainingSample>& batch, double lambda,
                    GradStore<T>& grads, bool update_stats) {
    const int C = config_.parse_classes;
    const int M = config_.backbone.context_dim;
    std::size_t n = 0;
    for (const auto& s : batch) {
      if (!s.example->parse_labels) {
        throw std::invalid_argument("parse batch example '" + s.example->name +
                                    "' has no parse labels");
      }
      for (const auto& pc : s.coords) {
        const std::uint8_t lab = s.example->parse_labels->at(pc.row, pc.col);
        if (lab == kIgnoreLabel) continue;
        if (lab >= C) {
          throw std::out_of_range("parse label " + std::to_string(lab) + " >= " +
                                  std::to_string(C) + " classes in '" + s.example->name + "'");
        }
        ++n;
      }
    }
    if (n == 0) return 0.0;
    typename Backbone::Cache<T> bcache;
    const auto in = input_planes(batch);
    const auto maps = backbone_.forward(store_, in, true, &bcache);
    if (update_stats) backbone_.update_running_stats(store_, bcache);
    auto dmaps = Backbone::zero_grads_like(maps);
    const T scale = static_cast<T>(lambda) / static_cast<T>(n);
    double total = 0;
    std::vector<T> logits(C), dlogits(C);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& coords = batch[b].coords;
      typename ContextReadout::Cache<T> rcache;
      const auto ctx = readout_.forward(store_, maps[b], coords, &rcache);
      std::vector<T> dctx(ctx.size(), T(0));
      for (std::size_t p = 0; p < coords.size(); ++p) {
        const std::uint8_t lab = batch[b].example->parse_labels->at(coords[p].row, coords[p].col);
        if (lab == kIgnoreLabel) continue;
        std::span<const T> cx(&ctx[p * M], M);
        parse_.logits<T>(store_, cx, logits);
        total += static_cast<double>(cross_entropy<T>(logits, lab));
        std::copy(logits.begin(), logits.end(), dlogits.begin());
        softmax_inplace(std::span<T>(dlogits));
        dlogits[lab] -= T(1);
        for (auto& g : dlogits) g *= scale;
        parse_.backward<T>(store_, cx, dlogits, grads, std::span<T>(&dctx[p * M], M));
      }
      readout_.backward<T>(store_, rcache, dctx, grads, dmaps[b]);
    }
    backbone_.backward(store_, bcache, dmaps, grads);
    return total / static_cast<double>(n);
  }

  static T l2_norm(std::span<const T> v) {
    T ss = 0;
    for (T x : v) ss += x * x;
    return std::sqrt(ss);
  }

  ModelConfig config_;
  ParamStore<T> store_;
  Backbone backbone_;
  ContextReadout readout_;
  BilinearHead head_;
  PosteriorHead posterior_;
  PosteriorHead parse_;
};

}  // namespace saadjust
