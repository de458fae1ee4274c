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

// Command-line entry point: train, eval, adjust, synth, serve.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "saadjust/checkpoint.hpp"
#include "saadjust/data.hpp"
#include "saadjust/evaluator.hpp"
#include "saadjust/kv_config.hpp"
#include "saadjust/service.hpp"
#include "saadjust/trainer.hpp"

namespace fs = std::filesystem;
using namespace saadjust;

namespace {

/// Error that maps to a specific exit code.
struct CliError : std::runtime_error {
  int code;
  CliError(int c, const std::string& m) : std::runtime_error(m), code(c) {}
};

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw CliError(2, what + " not found: " + p.string());
}

/// Registers one optional flag per config key; flag values override the file.
class KeyFlags {
 public:
  KeyFlags(CLI::App* app, const std::vector<std::string>& keys) {
    for (const auto& k : keys) {
      std::string flag = k;
      for (auto& ch : flag) {
        if (ch == '_') ch = '-';
      }
      auto* opt = app->add_option("--" + flag, values_[k], "config key '" + k + "'");
      opts_[k] = opt;
    }
    app->add_option("--set", sets_, "extra key=value overrides")->expected(0, -1);
  }

  void apply(KeyValueConfig& kv) const {
    for (const auto& [k, opt] : opts_) {
      if (opt->count() > 0) kv.set(k, values_.at(k));
    }
    for (const auto& s : sets_) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw CliError(2, "--set expects key=value, got '" + s + "'");
      kv.set(KeyValueConfig::trim(s.substr(0, eq)), KeyValueConfig::trim(s.substr(eq + 1)));
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> opts_;
  std::vector<std::string> sets_;
};

const std::vector<std::string> kTrainKeys = {
    "data", "parse_data", "effect", "profile", "variant", "K", "rank", "first_channels",
    "block_channels", "rnn_hidden", "rnn_channels", "context_dim", "parse_classes", "pretrained",
    "pretrained_path", "learning_rate", "backbone_lr_multiplier", "batch_size", "epochs",
    "pixels_per_image", "canvas", "delta", "lambda", "alpha", "clip_norm", "val_fraction",
    "validate_every", "max_steps", "seed", "augment"};

const std::vector<std::string> kSynthKeys = {"K", "noise_sigma", "height", "width", "min_sites",
                                             "max_sites", "boundary_corruption"};

std::optional<Effect> effect_option(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_effect(s);
}

Checkpoint load_ckpt(const fs::path& p) {
  require_file(p, "checkpoint");
  return load_checkpoint(p);
}

InferenceMode parse_mode(const std::string& s) {
  if (s == "hard") return InferenceMode::Hard;
  if (s == "soft") return InferenceMode::Soft;
  throw CliError(2, "--mode must be hard or soft");
}

int run_train(const std::string& config_path, const fs::path& out, const KeyFlags& flags) {
  KeyValueConfig kv;
  if (!config_path.empty()) {
    require_file(config_path, "config");
    kv = KeyValueConfig::load(config_path);
  }
  flags.apply(kv);
  const TrainConfig cfg = train_config_from_kv(kv);
  const std::string data = kv.get_string("data", "");
  if (data.empty()) throw CliError(2, "train: no dataset (set 'data' in the config or --data)");
  require_file(data, "dataset");
  const auto effect = effect_option(kv.get_string("effect", ""));
  const auto dataset = load_dataset(data, effect);
  std::vector<AdjustmentExample> parse;
  if (cfg.model.variant.multitask) {
    const std::string parse_root = kv.get_string("parse_data", data);
    require_file(parse_root, "parse dataset");
    parse = load_dataset(parse_root, effect);
  }
  std::cerr << "training " << cfg.model.variant.name() << " on " << dataset.size()
            << " examples\n";
  TrainHooks hooks;
  hooks.on_step = [](const LogRow& r) {
    if (r.step % 50 == 0) std::cerr << "step " << r.step << " loss " << r.loss_total << "\n";
  };
  const TrainResult res = train(cfg, dataset, parse, out, hooks);
  std::cout << "steps " << res.last.step;
  if (res.best_val_lab_l2) std::cout << "  best val Lab-L2 " << *res.best_val_lab_l2;
  std::cout << "\nwrote " << (out / "best.ckpt").string() << ", " << (out / "last.ckpt").string()
            << ", " << (out / "log.csv").string() << "\n";
  return 0;
}

int run_eval(const fs::path& ckpt_path, const fs::path& data, const std::string& effect,
             const fs::path& report, const fs::path& text, const std::string& mode) {
  const Checkpoint ckpt = load_ckpt(ckpt_path);
  require_file(data, "dataset");
  const auto dataset = load_dataset(data, effect_option(effect));
  if (dataset.empty()) throw CliError(2, "dataset is empty: " + data.string());
  const auto model = model_from_checkpoint<float>(ckpt);
  const EvalReport rep = evaluate(model, dataset, parse_mode(mode));
  const std::string table = variant_table_text({rep});
  std::cout << table;
  if (!report.empty()) std::ofstream(report) << variant_table_csv({rep});
  if (!text.empty()) std::ofstream(text) << table;
  return 0;
}

int run_adjust(const fs::path& ckpt_path, const fs::path& in, const fs::path& map_path,
               const fs::path& out, fs::path map_out, const std::string& mode) {
  const Checkpoint ckpt = load_ckpt(ckpt_path);
  require_file(in, "input image");
  const auto model = model_from_checkpoint<float>(ckpt);
  const LabImage lab = srgb_to_lab(read_png_rgb(in));
  std::optional<AdjustmentMap> user;
  if (!map_path.empty()) {
    require_file(map_path, "map");
    if (map_path.extension() == ".json") {
      std::ifstream f(map_path);
      user = map_from_rle_json(nlohmann::json::parse(f));
    } else {
      user = AdjustmentMap{model.config().K, read_png_indices(map_path)};
    }
  }
  const InferenceResult res = model.infer(lab, parse_mode(mode), user ? &*user : nullptr);
  write_png_rgb(out, lab_to_srgb(res.output));
  std::cout << "wrote " << out.string() << "\n";
  if (res.map) {
    if (map_out.empty()) map_out = fs::path(out).replace_extension(".map.png");
    write_png_indexed(map_out, res.map->assignments);
    const fs::path json_out = fs::path(map_out).replace_extension(".json");
    std::ofstream(json_out) << map_to_rle_json(*res.map).dump() << "\n";
    std::cout << "wrote " << map_out.string() << ", " << json_out.string() << "\n";
  }
  return 0;
}

int run_synth(const std::string& spec_path, const fs::path& out, int n, long long seed,
              const KeyFlags& flags) {
  KeyValueConfig kv;
  if (!spec_path.empty()) {
    require_file(spec_path, "spec");
    kv = KeyValueConfig::load(spec_path);
  }
  flags.apply(kv);
  const SyntheticSpec spec = synthetic_spec_from_config(kv);
  const auto examples = generate_synthetic_benchmark(spec, n, static_cast<std::uint64_t>(seed));
  save_dataset(out, examples);
  std::ofstream(out / "spec.cfg") << synthetic_spec_to_config(spec).to_string();
  std::cout << "wrote " << examples.size() << " examples to " << out.string() << "\n";
  return 0;
}

int run_serve(const fs::path& ckpt_path, const std::string& address, int port, int max_edge) {
  require_file(ckpt_path, "checkpoint");
  std::cerr << "serving " << ckpt_path.string() << " on " << address << ":" << port << "\n";
  serve(ckpt_path, address, port, ServiceConfig{max_edge});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantics-aware photo adjustment: train, evaluate, adjust, synthesize, serve"};
  app.require_subcommand(1);

  std::string config_path, spec_path, effect, mode = "hard", address = "127.0.0.1";
  fs::path out, ckpt, data, report, text, in, map_path, map_out;
  int n = 50, port = 8080, max_edge = 1024;
  long long seed = 0;

  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config_path, "key = value config file");
  train_cmd->add_option("--out", out, "output directory")->required();
  KeyFlags train_flags(train_cmd, kTrainKeys);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", data, "dataset root")->required();
  eval_cmd->add_option("--effect", effect, "restrict to one effect");
  eval_cmd->add_option("--report", report, "CSV report path");
  eval_cmd->add_option("--text", text, "text report path");
  eval_cmd->add_option("--mode", mode, "hard or soft inference");

  auto* adjust_cmd = app.add_subcommand("adjust", "adjust one image");
  adjust_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  adjust_cmd->add_option("--in", in, "input PNG")->required();
  adjust_cmd->add_option("--map", map_path, "user map: indexed PNG or RLE .json");
  adjust_cmd->add_option("--out", out, "output PNG")->required();
  adjust_cmd->add_option("--map-out", map_out, "map sidecar PNG (default <out>.map.png)");
  adjust_cmd->add_option("--mode", mode, "hard or soft inference");

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic benchmark");
  synth_cmd->add_option("--spec", spec_path, "key = value spec file");
  synth_cmd->add_option("--out", out, "dataset root")->required();
  synth_cmd->add_option("--n", n, "number of images")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", seed, "random seed");
  KeyFlags synth_flags(synth_cmd, kSynthKeys);

  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service");
  serve_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  serve_cmd->add_option("--address", address, "bind address");
  serve_cmd->add_option("--port", port, "port");
  serve_cmd->add_option("--max-edge", max_edge, "largest accepted image edge");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train_cmd) return run_train(config_path, out, train_flags);
    if (*eval_cmd) return run_eval(ckpt, data, effect, report, text, mode);
    if (*adjust_cmd) return run_adjust(ckpt, in, map_path, out, map_out, mode);
    if (*synth_cmd) return run_synth(spec_path, out, n, seed, synth_flags);
    if (*serve_cmd) return run_serve(ckpt, address, port, max_edge);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
