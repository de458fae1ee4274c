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

// Optimisation loop: augmentation, sparse pixel batches, variant-dependent
// loss, Adam with per-group rates, class-weight tracking, validation and
// checkpointing.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "saadjust/adjustmap.hpp"
#include "saadjust/checkpoint.hpp"
#include "saadjust/colorspace.hpp"
#include "saadjust/data.hpp"
#include "saadjust/kv_config.hpp"
#include "saadjust/losses.hpp"
#include "saadjust/model.hpp"
#include "saadjust/optim.hpp"

namespace saadjust {

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  double learning_rate = 1e-4;
  double backbone_lr_multiplier = 0.5;
  double alpha = 0.8;
  double clip_norm = 0;
  double val_fraction = 1.0 / 7.0;
  int batch_size = 4;
  int epochs = 500;
  int pixels_per_image = 256;
  int canvas = 64;
  int validate_every = 1;  // epochs
  long long max_steps = 0;  // 0: no limit
  std::uint64_t seed = 0;
  bool augment = true;

  void validate() const {
    model.validate();
    loss.validate();
    if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
    if (backbone_lr_multiplier < 0) throw std::invalid_argument("backbone_lr_multiplier must be >= 0");
    if (alpha < 0 || alpha > 1) throw std::invalid_argument("alpha must be in [0, 1]");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (pixels_per_image < 1) throw std::invalid_argument("pixels_per_image must be >= 1");
    if (canvas < 1 || canvas % model.backbone.downsampling() != 0) {
      throw std::invalid_argument("canvas must be a positive multiple of " +
                                  std::to_string(model.backbone.downsampling()));
    }
    if (val_fraction < 0 || val_fraction >= 1) throw std::invalid_argument("val_fraction must be in [0, 1)");
    if (validate_every < 1) throw std::invalid_argument("validate_every must be >= 1");
    if (loss.kind != model.variant.loss) throw std::invalid_argument("loss kind disagrees with variant");
  }
};

/// Reads TrainConfig keys; profile-dependent defaults apply first.
inline TrainConfig train_config_from_kv(const KeyValueConfig& kv) {
  TrainConfig c;
  c.model = model_config_from_kv(kv);
  const bool full = c.model.backbone.profile == Profile::Full;
  c.pixels_per_image = full ? 2048 : 256;
  c.canvas = full ? 512 : 64;
  c.loss.kind = c.model.variant.loss;
  c.loss.delta = kv.get_double("delta", c.loss.delta);
  c.loss.lambda = kv.get_double("lambda", c.loss.lambda);
  c.loss.parse_classes = c.model.parse_classes;
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.backbone_lr_multiplier = kv.get_double("backbone_lr_multiplier", c.backbone_lr_multiplier);
  c.alpha = kv.get_double("alpha", c.alpha);
  c.clip_norm = kv.get_double("clip_norm", c.clip_norm);
  c.val_fraction = kv.get_double("val_fraction", c.val_fraction);
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.pixels_per_image = static_cast<int>(kv.get_int("pixels_per_image", c.pixels_per_image));
  c.canvas = static_cast<int>(kv.get_int("canvas", c.canvas));
  c.validate_every = static_cast<int>(kv.get_int("validate_every", c.validate_every));
  c.max_steps = kv.get_int("max_steps", c.max_steps);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.augment = kv.get_bool("augment", c.augment);
  c.validate();
  return c;
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline KeyValueConfig train_config_to_kv(const TrainConfig& c) {
  KeyValueConfig kv;
  model_config_to_kv(c.model, kv);
  kv.set("delta", format_number(c.loss.delta));
  kv.set("lambda", format_number(c.loss.lambda));
  kv.set("learning_rate", format_number(c.learning_rate));
  kv.set("backbone_lr_multiplier", format_number(c.backbone_lr_multiplier));
  kv.set("alpha", format_number(c.alpha));
  kv.set("clip_norm", format_number(c.clip_norm));
  kv.set("val_fraction", format_number(c.val_fraction));
  kv.set("batch_size", std::to_string(c.batch_size));
  kv.set("epochs", std::to_string(c.epochs));
  kv.set("pixels_per_image", std::to_string(c.pixels_per_image));
  kv.set("canvas", std::to_string(c.canvas));
  kv.set("validate_every", std::to_string(c.validate_every));
  kv.set("max_steps", std::to_string(c.max_steps));
  kv.set("seed", std::to_string(c.seed));
  kv.set("augment", c.augment ? "true" : "false");
  return kv;
}

struct LogRow {
  long long step = 0;
  double loss_total = 0;
  double loss_reg = 0;
  double loss_parse = 0;
  std::optional<double> val_lab_l2;
};

inline std::string log_csv(const std::vector<LogRow>& rows) {
  std::ostringstream os;
  os << "step,loss_total,loss_reg,loss_parse,val_lab_l2\n";
  for (const auto& r : rows) {
    os << r.step << ',' << format_number(r.loss_total) << ',' << format_number(r.loss_reg) << ','
       << format_number(r.loss_parse) << ',' << (r.val_lab_l2 ? format_number(*r.val_lab_l2) : "")
       << '\n';
  }
  return os.str();
}

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<LogRow> log;
  std::optional<double> best_val_lab_l2;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
};

/// Mean over images of the per-image Lab-L2 between prediction and target.
template <typename T>
double mean_prediction_distance(const Model<T>& model, const std::vector<AdjustmentExample>& data,
                                const std::vector<std::size_t>& indices) {
  double s = 0;
  for (std::size_t i : indices) {
    s += lab_l2_distance(model.infer(data[i].input).output, data[i].target);
  }
  return s / static_cast<double>(indices.size());
}

/// Deterministic held-out split: a seeded shuffle, the first
/// round(n * fraction) indices become validation.
inline void split_train_val(std::size_t n, double fraction, std::uint64_t seed,
                            std::vector<std::size_t>& train, std::vector<std::size_t>& val) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5eed5eedULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::lround(static_cast<double>(n) * fraction));
  if (n_val >= n) n_val = n - 1;
  val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
}

struct TrainHooks {
  /// Called after every optimisation step.
  std::function<void(const LogRow&)> on_step;
};

/// Trains a model. `parse_dataset` must carry parse labels when the variant is
/// multi-task. Artifacts go to `out_dir` when it is non-empty.
inline TrainResult train(const TrainConfig& config, const std::vector<AdjustmentExample>& dataset,
                         const std::vector<AdjustmentExample>& parse_dataset = {},
                         const std::filesystem::path& out_dir = {},
                         const TrainHooks& hooks = {}) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  for (const auto& ex : dataset) ex.validate();
  const Variant variant = config.model.variant;
  if (variant.multitask) {
    if (parse_dataset.empty()) {
      throw std::invalid_argument("train: variant '" + variant.name() +
                                  "' needs a parse dataset with labels");
    }
    for (const auto& ex : parse_dataset) {
      if (!ex.parse_labels) {
        throw std::invalid_argument("train: parse example '" + ex.name + "' has no labels");
      }
    }
  }

  TrainResult result;
  split_train_val(dataset.size(), config.val_fraction, config.seed, result.train_indices,
                  result.val_indices);

  Model<float> model(config.model);
  model.init(config.seed);
  if (config.model.backbone.pretrained) {
    load_pretrained_backbone(model, config.model.backbone.pretrained_path);
  }
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  adam_cfg.backbone_lr_multiplier = config.backbone_lr_multiplier;
  adam_cfg.clip_norm = config.clip_norm;
  Adam<float> adam(model.store(), adam_cfg);

  std::optional<ClassWeightState> cw;
  if (variant.adjustment_map) cw = ClassWeightState::initial(config.model.K, config.alpha);
  const KeyValueConfig snapshot = train_config_to_kv(config);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order = result.train_indices;
  std::vector<std::size_t> parse_order(parse_dataset.size());
  std::iota(parse_order.begin(), parse_order.end(), 0);
  std::size_t parse_cursor = parse_order.size();

  auto prepare = [&](const AdjustmentExample& ex, std::uint64_t seed) {
    if (!config.augment && ex.height() == config.canvas && ex.width() == config.canvas) return ex;
    const AugmentParams p = config.augment ? draw_augment_params(seed) : AugmentParams{};
    return augment(ex, p, config.canvas, config.canvas);
  };
  const std::size_t canvas_pixels = static_cast<std::size_t>(config.canvas) * config.canvas;
  const std::size_t pixels =
      std::min<std::size_t>(static_cast<std::size_t>(config.pixels_per_image), canvas_pixels);

  long long step = 0;
  bool have_best = false;
  const bool stop_on_steps = config.max_steps > 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (stop_on_steps && step >= config.max_steps) break;
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<AdjustmentExample> images;
      std::vector<std::uint64_t> sample_seeds;
      for (std::size_t i = start; i < end; ++i) {
        images.push_back(prepare(dataset[order[i]], rng()));
        sample_seeds.push_back(rng());
      }
      std::vector<TrainingSample> batch;
      for (std::size_t i = 0; i < images.size(); ++i) {
        batch.push_back({&images[i], sample_sparse_pixels(images[i], pixels, sample_seeds[i]).coordinates});
      }
      std::vector<AdjustmentExample> parse_images;
      std::vector<TrainingSample> parse_batch;
      if (variant.multitask) {
        std::vector<std::uint64_t> parse_seeds;
        for (int i = 0; i < config.batch_size; ++i) {
          if (parse_cursor >= parse_order.size()) {
            std::shuffle(parse_order.begin(), parse_order.end(), rng);
            parse_cursor = 0;
          }
          parse_images.push_back(prepare(parse_dataset[parse_order[parse_cursor++]], rng()));
          parse_seeds.push_back(rng());
        }
        for (std::size_t i = 0; i < parse_images.size(); ++i) {
          parse_batch.push_back(
              {&parse_images[i], sample_sparse_pixels(parse_images[i], pixels, parse_seeds[i]).coordinates});
        }
      }

      const std::vector<double> weights = cw ? class_weights(*cw) : std::vector<double>{};
      auto grads = model.store().zeros_like();
      const LossTerms terms = model.loss_and_grad(batch, parse_batch, config.loss, weights, grads);
      if (!std::isfinite(terms.total)) {
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step + 1) +
                                 " (reg=" + format_number(terms.reg) + ", parse=" +
                                 format_number(terms.parse) + ", grad_norm=" +
                                 format_number(Adam<float>::grad_norm(model.store(), grads)) +
                                 ")");
      }
      adam.step(model.store(), grads);
      if (cw) *cw = update_frequency_ema(*cw, std::span<const double>(terms.mean_posterior));
      ++step;
      result.log.push_back({step, terms.total, terms.reg, terms.parse, std::nullopt});
      if (hooks.on_step) hooks.on_step(result.log.back());
    }
    const bool last_epoch = epoch + 1 == config.epochs || (stop_on_steps && step >= config.max_steps);
    if (!result.val_indices.empty() && ((epoch + 1) % config.validate_every == 0 || last_epoch)) {
      const double v = mean_prediction_distance(model, dataset, result.val_indices);
      if (!result.log.empty()) result.log.back().val_lab_l2 = v;
      if (!have_best || v < *result.best_val_lab_l2) {
        result.best_val_lab_l2 = v;
        result.best = make_checkpoint(model, snapshot, cw, step);
        have_best = true;
      }
    }
    if (last_epoch) break;
  }
  result.last = make_checkpoint(model, snapshot, cw, step);
  if (!have_best) result.best = result.last;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_checkpoint(out_dir / "best.ckpt", result.best);
    save_checkpoint(out_dir / "last.ckpt", result.last);
    std::ofstream(out_dir / "log.csv") << log_csv(result.log);
    std::ofstream(out_dir / "config.cfg") << snapshot.to_string();
  }
  return result;
}

}  // namespace saadjust
