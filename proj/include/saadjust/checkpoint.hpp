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

// Checkpoint container:
//
//   "SAADJCKP"            8-byte magic
//   uint32 LE             format version
//   uint64 LE             manifest length in bytes
//   manifest              UTF-8 JSON: config, class weights, step, tensor table
//   blob                  little-endian float32 tensor data
//
// The tensor table lists name, shape, offset (in floats) and count.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "saadjust/adjustmap.hpp"
#include "saadjust/kv_config.hpp"
#include "saadjust/model.hpp"

namespace saadjust {

inline constexpr char kCheckpointMagic[8] = {'S', 'A', 'A', 'D', 'J', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::vector<int> shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  ModelConfig model;
  KeyValueConfig train_config;
  std::optional<ClassWeightState> class_weights;
  long long step = 0;
  std::map<std::string, StoredTensor> tensors;
  std::vector<std::string> order;  // tensor order as stored
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

inline nlohmann::json kv_to_json(const KeyValueConfig& kv) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : kv.values()) j[k] = v;
  return j;
}

inline KeyValueConfig kv_from_json(const nlohmann::json& j) {
  KeyValueConfig kv;
  for (const auto& [k, v] : j.items()) kv.set(k, v.get<std::string>());
  return kv;
}

}  // namespace detail

/// Serialises a checkpoint to bytes.
inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json manifest;
  KeyValueConfig model_kv;
  model_config_to_kv(ckpt.model, model_kv);
  manifest["model"] = detail::kv_to_json(model_kv);
  manifest["train_config"] = detail::kv_to_json(ckpt.train_config);
  manifest["step"] = ckpt.step;
  if (ckpt.class_weights) {
    manifest["class_weights"] = {{"a", ckpt.class_weights->a},
                                 {"alpha", ckpt.class_weights->alpha},
                                 {"t", ckpt.class_weights->t}};
  }
  nlohmann::json table = nlohmann::json::array();
  std::string blob;
  std::uint64_t offset = 0;
  for (const auto& name : ckpt.order) {
    const auto& t = ckpt.tensors.at(name);
    table.push_back({{"name", name},
                     {"shape", t.shape},
                     {"offset", offset},
                     {"count", t.values.size()}});
    for (float f : t.values) detail::put_u32(blob, std::bit_cast<std::uint32_t>(f));
    offset += t.values.size();
  }
  manifest["tensors"] = table;
  const std::string m = manifest.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(out, ckpt.format_version);
  detail::put_u64(out, m.size());
  out += m;
  out += blob;
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  constexpr std::size_t kHeader = sizeof(kCheckpointMagic) + 4 + 8;
  if (bytes.size() < kHeader ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic or truncated header");
  }
  Checkpoint ckpt;
  ckpt.format_version = static_cast<std::uint32_t>(detail::get_le(bytes, 8, 4));
  if (ckpt.format_version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: format version " + std::to_string(ckpt.format_version) +
                             " is not supported (this build reads version " +
                             std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t mlen = detail::get_le(bytes, 12, 8);
  if (mlen > bytes.size() - kHeader) throw std::runtime_error("checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(kHeader, mlen));
    ckpt.model = model_config_from_kv(detail::kv_from_json(manifest.at("model")));
    ckpt.train_config = detail::kv_from_json(manifest.at("train_config"));
    ckpt.step = manifest.at("step").get<long long>();
    if (manifest.contains("class_weights")) {
      const auto& cw = manifest["class_weights"];
      ClassWeightState s;
      s.a = cw.at("a").get<std::vector<double>>();
      s.alpha = cw.at("alpha").get<double>();
      s.t = cw.at("t").get<long long>();
      ckpt.class_weights = s;
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  const std::size_t blob_start = kHeader + mlen;
  const std::size_t blob_floats = (bytes.size() - blob_start) / 4;
  if ((bytes.size() - blob_start) % 4 != 0) throw std::runtime_error("checkpoint: truncated data");
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::uint64_t off = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t count = entry.at("count").get<std::uint64_t>();
    StoredTensor t;
    t.shape = entry.at("shape").get<std::vector<int>>();
    std::uint64_t expect = 1;
    for (int d : t.shape) expect *= static_cast<std::uint64_t>(d);
    if (expect != count) throw std::runtime_error("checkpoint: tensor '" + name + "' shape/count mismatch");
    if (off + count > blob_floats) {
      throw std::runtime_error("checkpoint: truncated data for tensor '" + name + "'");
    }
    t.values.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto u = static_cast<std::uint32_t>(detail::get_le(bytes, blob_start + 4 * (off + i), 4));
      t.values[i] = std::bit_cast<float>(u);
    }
    ckpt.order.push_back(name);
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

/// Snapshot of a model and its training state.
template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, const KeyValueConfig& train_config,
                           const std::optional<ClassWeightState>& class_weights, long long step) {
  Checkpoint ckpt;
  ckpt.model = model.config();
  ckpt.train_config = train_config;
  ckpt.class_weights = class_weights;
  ckpt.step = step;
  for (const auto& t : model.store().tensors()) {
    StoredTensor s;
    s.shape = t.shape;
    s.values.assign(t.value.begin(), t.value.end());
    ckpt.order.push_back(t.name);
    ckpt.tensors.emplace(t.name, std::move(s));
  }
  return ckpt;
}

/// Copies stored tensors into `model`. With `names` empty every model tensor
/// must be present; otherwise only the listed ones are loaded.
template <typename T>
void load_parameters(Model<T>& model, const Checkpoint& ckpt,
                     const std::vector<std::string>& names = {}) {
  for (auto& t : model.store().tensors()) {
    if (!names.empty() && std::find(names.begin(), names.end(), t.name) == names.end()) continue;
    auto it = ckpt.tensors.find(t.name);
    if (it == ckpt.tensors.end()) {
      throw std::runtime_error("checkpoint: missing tensor '" + t.name + "'");
    }
    if (it->second.shape != t.shape) {
      throw std::runtime_error("checkpoint: shape mismatch for '" + t.name + "': stored [" +
                               join_ints(it->second.shape) + "] vs model [" +
                               join_ints(t.shape) + "]");
    }
    std::copy(it->second.values.begin(), it->second.values.end(), t.value.begin());
  }
}

/// Builds a model from a checkpoint's config and tensors.
template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg = ckpt.model;
  cfg.backbone.pretrained = false;  // weights come from the checkpoint itself
  Model<T> model(cfg);
  load_parameters(model, ckpt);
  return model;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

/// Loads backbone tensors (see Backbone::pretrained_tensor_names) from a
/// checkpoint file into `model`.
template <typename T>
void load_pretrained_backbone(Model<T>& model, const std::filesystem::path& path) {
  if (path.empty()) throw std::runtime_error("pretrained weights requested but no path given");
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("pretrained weights not found: " + path.string());
  }
  const Checkpoint ckpt = load_checkpoint(path);
  load_parameters(model, ckpt, model.backbone().pretrained_tensor_names(model.store()));
}

}  // namespace saadjust
