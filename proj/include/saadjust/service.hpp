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

// HTTP inference service over a read-only model.
//
//   GET  /health   {"status":"ok", "variant", "K", "profile", "step"}
//   GET  /presets  per-preset before/after swatches of a fixed probe palette
//   POST /adjust   {"image": <base64 PNG>, "user_map"?: <base64 indexed PNG> |
//                   {width, height, K, runs}, "mode"?: "hard" | "soft"}
//                  -> {"adjusted": <base64 PNG>,
//                      "map": {"png": <base64 indexed PNG>, "rle": {...}} | null}
//
// Failures return 400 with {"error": {"code", "message"}}.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/beast/core/detail/base64.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "saadjust/adjustmap.hpp"
#include "saadjust/checkpoint.hpp"
#include "saadjust/colorspace.hpp"
#include "saadjust/model.hpp"
#include "saadjust/png_io.hpp"

namespace saadjust {

inline std::string base64_encode(const Bytes& bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

inline Bytes base64_decode(const std::string& text) {
  namespace b64 = boost::beast::detail::base64;
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
  std::size_t len = text.size();
  for (int i = 0; i < 2 && len > 0 && text[len - 1] == '='; ++i) --len;
  Bytes out(b64::decoded_size(text.size()));
  const auto [written, read] = b64::decode(out.data(), text.data(), len);
  if (read != len) throw std::invalid_argument("invalid base64 character");
  out.resize(written);
  return out;
}

struct ServiceConfig {
  int max_edge = 1024;
};

/// Request error carrying a machine-readable code.
struct ServiceError : std::runtime_error {
  std::string code;
  ServiceError(std::string c, const std::string& message)
      : std::runtime_error(message), code(std::move(c)) {}
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

class AdjustService {
 public:
  AdjustService(Model<float> model, long long step = 0, ServiceConfig config = {})
      : model_(std::move(model)), step_(step), config_(config) {}

  const Model<float>& model() const { return model_; }

  ServiceResponse health() const {
    const auto& c = model_.config();
    return {200,
            {{"status", "ok"},
             {"variant", c.variant.name()},
             {"K", model_.K()},
             {"profile", profile_name(c.backbone.profile)},
             {"step", step_}}};
  }

  /// Probe colours in Lab; "before" is the probe itself, so a zero model
  /// gives identical strips.
  static std::vector<Lab> probe_palette() {
    std::vector<Lab> p;
    for (double L : {20.0, 50.0, 80.0}) p.push_back({L, 0, 0});
    for (int h = 0; h < 8; ++h) {
      const double ang = h * 3.14159265358979323846 / 4;
      p.push_back({60, 40 * std::cos(ang), 40 * std::sin(ang)});
    }
    return p;
  }

  ServiceResponse presets() const {
    const auto probe = probe_palette();
    constexpr int kCell = 8;
    const int n = static_cast<int>(probe.size());
    LabImage strip(kCell, kCell * n);
    for (int r = 0; r < kCell; ++r) {
      for (int c = 0; c < kCell * n; ++c) strip.set(r, c, probe[c / kCell]);
    }
    nlohmann::json entries = nlohmann::json::array();
    const int K = model_.K();
    for (int k = 0; k < K; ++k) {
      LabImage out;
      if (model_.config().variant.adjustment_map) {
        AdjustmentMap m{model_.config().K, IndexMap(strip.height, strip.width,
                                                    static_cast<std::uint8_t>(k))};
        out = model_.infer(strip, InferenceMode::Hard, &m).output;
      } else {
        out = model_.infer(strip).output;
      }
      nlohmann::json before = nlohmann::json::array(), after = nlohmann::json::array();
      Raster swatch(2, n, 3);
      for (int i = 0; i < n; ++i) {
        const auto b = lab_to_rgb(probe[i]);
        const auto a = lab_to_rgb(out.get(kCell / 2, i * kCell + kCell / 2));
        before.push_back({b[0], b[1], b[2]});
        after.push_back({a[0], a[1], a[2]});
        for (int ch = 0; ch < 3; ++ch) {
          swatch.at(0, i, ch) = b[ch];
          swatch.at(1, i, ch) = a[ch];
        }
      }
      entries.push_back({{"preset", k},
                         {"before", before},
                         {"after", after},
                         {"png", base64_encode(encode_png_rgb(swatch))}});
    }
    return {200, {{"K", K}, {"presets", entries}}};
  }

  ServiceResponse adjust(const std::string& body) const {
    try {
      return {200, adjust_json(parse_body(body))};
    } catch (const ServiceError& e) {
      return error(e.code, e.what());
    }
  }

  nlohmann::json adjust_json(const nlohmann::json& req) const {
    if (!req.is_object() || !req.contains("image") || !req["image"].is_string()) {
      throw ServiceError("missing_image", "request needs an \"image\" field (base64 PNG)");
    }
    Raster rgb;
    try {
      rgb = decode_png_rgb(base64_decode(req["image"].get<std::string>()));
    } catch (const std::exception& e) {
      throw ServiceError("bad_image_encoding", std::string("image: ") + e.what());
    }
    if (rgb.height > config_.max_edge || rgb.width > config_.max_edge) {
      throw ServiceError("image_too_large",
                         "image " + std::to_string(rgb.width) + "x" + std::to_string(rgb.height) +
                             " exceeds max edge " + std::to_string(config_.max_edge));
    }
    InferenceMode mode = InferenceMode::Hard;
    if (req.contains("mode")) {
      const auto m = req["mode"].is_string() ? req["mode"].get<std::string>() : "";
      if (m == "soft") {
        mode = InferenceMode::Soft;
      } else if (m != "hard") {
        throw ServiceError("bad_mode", "mode must be \"hard\" or \"soft\"");
      }
    }
    std::optional<AdjustmentMap> user_map;
    if (req.contains("user_map") && !req["user_map"].is_null()) {
      user_map = parse_user_map(req["user_map"], rgb.height, rgb.width);
    }
    const LabImage lab = srgb_to_lab(rgb);
    const InferenceResult res = model_.infer(lab, mode, user_map ? &*user_map : nullptr);
    nlohmann::json out;
    out["adjusted"] = base64_encode(encode_png_rgb(lab_to_srgb(res.output)));
    if (res.map) {
      out["map"] = {{"png", base64_encode(encode_png_indexed(res.map->assignments))},
                    {"rle", map_to_rle_json(*res.map)}};
    } else {
      out["map"] = nullptr;
    }
    return out;
  }

  /// Registers the endpoints on `server`.
  void install(httplib::Server& server) const {
    auto send = [](httplib::Response& res, const ServiceResponse& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, health());
    });
    server.Get("/presets", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, presets());
    });
    server.Post("/adjust", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, adjust(req.body));
    });
  }

 private:
  static ServiceResponse error(const std::string& code, const std::string& message) {
    return {400, {{"error", {{"code", code}, {"message", message}}}}};
  }

  static nlohmann::json parse_body(const std::string& body) {
    try {
      return nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ServiceError("bad_json", std::string("request body is not JSON: ") + e.what());
    }
  }

  AdjustmentMap parse_user_map(const nlohmann::json& j, int height, int width) const {
    if (!model_.config().variant.adjustment_map) {
      throw ServiceError("map_not_supported", "variant '" + model_.config().variant.name() +
                                                  "' has no adjustment map");
    }
    const int K = model_.config().K;
    AdjustmentMap map;
    if (j.is_string()) {
      try {
        map.assignments = decode_png_indices(base64_decode(j.get<std::string>()));
      } catch (const std::exception& e) {
        throw ServiceError("bad_map_encoding", std::string("user_map: ") + e.what());
      }
      map.K = K;
    } else if (j.is_object()) {
      try {
        map = map_from_rle_json(j);
      } catch (const std::out_of_range& e) {
        throw ServiceError("map_index", e.what());
      } catch (const std::exception& e) {
        throw ServiceError("bad_map_encoding", std::string("user_map: ") + e.what());
      }
      if (map.K != K) {
        throw ServiceError("map_k", "user_map K=" + std::to_string(map.K) +
                                        " does not match model K=" + std::to_string(K));
      }
    } else {
      throw ServiceError("bad_map_encoding", "user_map must be a base64 PNG or an RLE object");
    }
    if (map.assignments.height != height || map.assignments.width != width) {
      throw ServiceError("map_dimensions",
                         "user_map " + std::to_string(map.assignments.width) + "x" +
                             std::to_string(map.assignments.height) + " does not match image " +
                             std::to_string(width) + "x" + std::to_string(height));
    }
    for (std::size_t i = 0; i < map.assignments.data.size(); ++i) {
      if (map.assignments.data[i] >= K) {
        throw ServiceError("map_index", "user_map preset index " +
                                            std::to_string(map.assignments.data[i]) +
                                            " at pixel " + std::to_string(i) + " is >= K=" +
                                            std::to_string(K));
      }
    }
    return map;
  }

  Model<float> model_;
  long long step_ = 0;
  ServiceConfig config_;
};

/// Loads the checkpoint, binds, and serves until the server is stopped. The
/// port is bound only after the model is ready.
inline void serve(const std::filesystem::path& checkpoint, const std::string& address, int port,
                  ServiceConfig config = {}) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  AdjustService service(model_from_checkpoint<float>(ckpt), ckpt.step, config);
  httplib::Server server;
  server.set_payload_max_length(64u << 20);
  service.install(server);
  if (!server.bind_to_port(address, port)) {
    throw std::runtime_error("cannot bind " + address + ":" + std::to_string(port));
  }
  server.listen_after_bind();
}

}  // namespace saadjust
