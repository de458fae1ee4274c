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

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "saadjust/features.hpp"

namespace saadjust {
namespace {

FeatureMap<double> random_map(int c, int h, int w, std::uint64_t seed) {
  FeatureMap<double> m(c, h, w);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : m.data) v = u(rng);
  return m;
}

BackboneConfig small_config() {
  BackboneConfig c;
  c.first_channels = 3;
  c.block_channels = {4, 5};
  c.rnn_hidden = 3;
  c.rnn_channels = 4;
  c.context_dim = 5;
  return c;
}

// Direct zero-padded convolution.
FeatureMap<double> conv_oracle(const std::vector<double>& w, const std::vector<double>& b,
                               const FeatureMap<double>& in, int out_c, int k, int stride) {
  const int pad = k / 2;
  const int oh = (in.height + 2 * pad - k) / stride + 1;
  const int ow = (in.width + 2 * pad - k) / stride + 1;
  FeatureMap<double> out(out_c, oh, ow);
  for (int o = 0; o < out_c; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = b[o];
        for (int i = 0; i < in.channels; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y * stride + ky - pad, ix = x * stride + kx - pad;
              if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
              acc += w[((o * in.channels + i) * k + ky) * k + kx] * in.at(i, iy, ix);
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

TEST(Conv2d, MatchesDirectConvolution) {
  for (int stride : {1, 2}) {
    for (int k : {1, 3}) {
      ParamStore<double> store;
      const auto conv = Conv2d::create(store, "c", 3, 4, k, stride, ParamGroup::Head);
      std::mt19937_64 rng(3);
      fill_uniform(store[conv.weight].value, 1.0, rng);
      fill_uniform(store[conv.bias].value, 1.0, rng);
      const auto in = random_map(3, 7, 6, 11);
      const auto got = conv.forward(store, in);
      const auto want =
          conv_oracle(store[conv.weight].value, store[conv.bias].value, in, 4, k, stride);
      ASSERT_TRUE(got.same_shape(want));
      for (std::size_t i = 0; i < got.data.size(); ++i) EXPECT_NEAR(got.data[i], want.data[i], 1e-12);
    }
  }
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  ParamStore<double> store;
  const auto conv = Conv2d::create(store, "c", 2, 3, 3, 2, ParamGroup::Head);
  std::mt19937_64 rng(5);
  fill_uniform(store[conv.weight].value, 1.0, rng);
  fill_uniform(store[conv.bias].value, 1.0, rng);
  auto in = random_map(2, 5, 6, 7);
  const auto dout = random_map(3, 3, 3, 8);
  auto loss = [&] {
    const auto y = conv.forward(store, in);
    double s = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * dout.data[i];
    return s;
  };
  auto grads = store.zeros_like();
  FeatureMap<double> din;
  conv.backward(store, in, dout, grads, &din);
  const double h = 1e-6;
  for (std::size_t i = 0; i < in.data.size(); ++i) {
    const double orig = in.data[i];
    in.data[i] = orig + h;
    const double lp = loss();
    in.data[i] = orig - h;
    const double lm = loss();
    in.data[i] = orig;
    EXPECT_NEAR(din.data[i], (lp - lm) / (2 * h), 1e-7);
  }
  for (int t : {conv.weight, conv.bias}) {
    for (std::size_t i = 0; i < store[t].value.size(); ++i) {
      const double orig = store[t].value[i];
      store[t].value[i] = orig + h;
      const double lp = loss();
      store[t].value[i] = orig - h;
      const double lm = loss();
      store[t].value[i] = orig;
      EXPECT_NEAR(grads[t][i], (lp - lm) / (2 * h), 1e-7);
    }
  }
}

TEST(Backbone, ToyProfileShapes) {
  ParamStore<float> store;
  const auto cfg = BackboneConfig::toy();
  Backbone bb(store, cfg);
  std::mt19937_64 rng(1);
  bb.init(store, rng);
  FeatureMap<float> in(3, 64, 64);
  const auto maps = bb.forward(store, {in}, false, nullptr);
  ASSERT_EQ(maps.size(), 1u);
  EXPECT_EQ(maps[0].first.channels, 16);
  EXPECT_EQ(maps[0].first.height, 64);
  ASSERT_EQ(maps[0].blocks.size(), 3u);
  const int want_c[3] = {16, 32, 64};
  const int want_s[3] = {32, 16, 8};
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(maps[0].blocks[i].channels, want_c[i]);
    EXPECT_EQ(maps[0].blocks[i].height, want_s[i]);
    EXPECT_EQ(maps[0].blocks[i].width, want_s[i]);
  }
  EXPECT_EQ(maps[0].rnn.channels, 32);
  EXPECT_EQ(maps[0].rnn.height, 8);
  EXPECT_EQ(cfg.downsampling(), 8);
  EXPECT_EQ(cfg.hypercolumn_dim(), 16 + 32 + 64 + 32);
}

TEST(Backbone, FullProfileChannelCounts) {
  const auto cfg = BackboneConfig::full();
  EXPECT_EQ(cfg.first_channels, 64);
  EXPECT_EQ(cfg.block_channels, (std::vector<int>{256, 512, 1024}));
  EXPECT_EQ(cfg.rnn_channels, 1024);
  EXPECT_EQ(cfg.context_dim, 512);
  EXPECT_EQ(cfg.hypercolumn_dim(), 256 + 512 + 1024 + 1024);
}

TEST(Backbone, RejectsIndivisibleInput) {
  ParamStore<float> store;
  Backbone bb(store, BackboneConfig::toy());
  FeatureMap<float> in(3, 60, 64);
  EXPECT_THROW(bb.forward(store, {in}, false, nullptr), std::invalid_argument);
}

TEST(Backbone, ConfigValidation) {
  auto c = small_config();
  c.block_channels.clear();
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.context_dim = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_profile(profile_name(Profile::Full)), Profile::Full);
  EXPECT_THROW(parse_profile("huge"), std::invalid_argument);
}

TEST(Backbone, ConstantInputGivesConstantInteriorFirstLayer) {
  ParamStore<double> store;
  Backbone bb(store, small_config());
  std::mt19937_64 rng(2);
  bb.init(store, rng);
  FeatureMap<double> in(3, 16, 16);
  for (int c = 0; c < 3; ++c) std::fill(in.plane(c), in.plane(c) + in.plane_size(), 0.3 * (c + 1));
  const auto maps = bb.forward(store, {in}, false, nullptr);
  const auto& f = maps[0].first;
  for (int c = 0; c < f.channels; ++c) {
    const double ref = f.at(c, 1, 1);
    for (int y = 1; y < 15; ++y) {
      for (int x = 1; x < 15; ++x) EXPECT_NEAR(f.at(c, y, x), ref, 1e-12);
    }
  }
}

TEST(Backbone, EvalModeIsIndependentOfBatchMates) {
  ParamStore<double> store;
  Backbone bb(store, small_config());
  std::mt19937_64 rng(4);
  bb.init(store, rng);
  const auto a = random_map(3, 8, 8, 1);
  const auto b = random_map(3, 8, 8, 2);
  const auto alone = bb.forward(store, {a}, false, nullptr);
  const auto pair = bb.forward(store, {a, b}, false, nullptr);
  EXPECT_EQ(alone[0].rnn.data, pair[0].rnn.data);
  const auto t_alone = bb.forward(store, {a}, true, nullptr);
  const auto t_pair = bb.forward(store, {a, b}, true, nullptr);
  EXPECT_NE(t_alone[0].rnn.data, t_pair[0].rnn.data);
}

// With left/right parameters exchanged, a mirrored input gives a mirrored
// output.
TEST(SpatialRnn, HorizontalMirrorSymmetry) {
  ParamStore<double> store;
  const auto rnn = SpatialRnn::create(store, "rnn", 2, 3, 4);
  std::mt19937_64 rng(6);
  rnn.init(store, rng);
  for (auto& t : store.tensors()) {
    if (t.name.find("bn_gamma") != std::string::npos || t.name.find("bn_beta") != std::string::npos) {
      fill_uniform(t.value, 0.5, rng);
    }
  }
  const auto in = random_map(2, 4, 5, 9);
  FeatureMap<double> mirrored(2, 4, 5);
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 5; ++x) mirrored.at(c, y, x) = in.at(c, y, 4 - x);
    }
  }
  const auto out = rnn.forward(store, {in}, true, nullptr);

  ParamStore<double> swapped = store;
  auto swap_dir = [&](int field_a, int field_b) {
    std::swap(swapped[field_a].value, swapped[field_b].value);
  };
  swap_dir(rnn.dirs[0].wx, rnn.dirs[1].wx);
  swap_dir(rnn.dirs[0].uh, rnn.dirs[1].uh);
  swap_dir(rnn.dirs[0].gamma, rnn.dirs[1].gamma);
  swap_dir(rnn.dirs[0].beta, rnn.dirs[1].beta);
  // Projection input channels are ordered [l2r, r2l, t2b, b2t].
  auto& pw = swapped[rnn.proj.weight].value;
  const int H = 3, in_c = 4 * H;
  for (int o = 0; o < 4; ++o) {
    for (int h = 0; h < H; ++h) std::swap(pw[o * in_c + h], pw[o * in_c + H + h]);
  }
  const auto out_m = rnn.forward(swapped, {mirrored}, true, nullptr);
  for (int c = 0; c < 4; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 5; ++x) EXPECT_NEAR(out_m[0].at(c, y, x), out[0].at(c, y, 4 - x), 1e-12);
    }
  }
}

TEST(SpatialRnn, SinglePixelSeesNoRecurrence) {
  ParamStore<double> store;
  const auto rnn = SpatialRnn::create(store, "rnn", 2, 3, 4);
  std::mt19937_64 rng(8);
  rnn.init(store, rng);
  // Identical directions on a 1x1 map give identical hidden states, so only
  // the sum of the projection blocks matters.
  for (int d = 1; d < 4; ++d) {
    store[rnn.dirs[d].wx].value = store[rnn.dirs[0].wx].value;
    store[rnn.dirs[d].uh].value = store[rnn.dirs[0].uh].value;
  }
  const auto in = random_map(2, 1, 1, 3);
  const auto base = rnn.forward(store, {in}, false, nullptr);
  fill_uniform(store[rnn.dirs[2].uh].value, 5.0, rng);
  const auto changed = rnn.forward(store, {in}, false, nullptr);
  EXPECT_EQ(base[0].data, changed[0].data);
}

TEST(Hypercolumn, MapCoordinates) {
  EXPECT_DOUBLE_EQ(map_coordinate(3, 8, 8), 3.0);
  EXPECT_DOUBLE_EQ(map_coordinate(0, 8, 4), 0.0);
  EXPECT_DOUBLE_EQ(map_coordinate(1, 8, 4), 0.25);
  EXPECT_DOUBLE_EQ(map_coordinate(2, 8, 4), 0.75);
  EXPECT_DOUBLE_EQ(map_coordinate(7, 8, 4), 3.0);
}

FeatureMaps<double> random_maps(const BackboneConfig& cfg, int h, int w, std::uint64_t seed) {
  FeatureMaps<double> m;
  m.first = random_map(cfg.first_channels, h, w, seed);
  int s = 2;
  for (std::size_t i = 0; i < cfg.block_channels.size(); ++i, s *= 2) {
    m.blocks.push_back(random_map(cfg.block_channels[i], h / s, w / s, seed + 1 + i));
  }
  m.rnn = random_map(cfg.rnn_channels, h / (s / 2), w / (s / 2), seed + 10);
  return m;
}

TEST(Hypercolumn, MatchesBilinearOracleAndUnitNorm) {
  const auto cfg = small_config();
  ParamStore<double> store;
  ContextReadout ro(store, cfg);
  const auto maps = random_maps(cfg, 8, 8, 20);
  const std::vector<PixelCoord> coords{{0, 0}, {3, 5}, {7, 7}, {4, 1}};
  const auto hc = ro.hypercolumns(maps, coords, nullptr);
  const int D = cfg.hypercolumn_dim();
  ASSERT_EQ(hc.size(), coords.size() * D);
  for (std::size_t p = 0; p < coords.size(); ++p) {
    int off = 0;
    for (int s = 0; s < ro.sources(); ++s) {
      const auto& m = ContextReadout::source_map(maps, s);
      // Independent bilinear oracle at pixel centres.
      const double y = std::clamp((coords[p].row + 0.5) * m.height / 8.0 - 0.5, 0.0, m.height - 1.0);
      const double x = std::clamp((coords[p].col + 0.5) * m.width / 8.0 - 0.5, 0.0, m.width - 1.0);
      const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
      const int y1 = std::min(y0 + 1, m.height - 1), x1 = std::min(x0 + 1, m.width - 1);
      std::vector<double> v(m.channels);
      double ss = 0;
      for (int c = 0; c < m.channels; ++c) {
        const double fy = y - y0, fx = x - x0;
        v[c] = (1 - fy) * ((1 - fx) * m.at(c, y0, x0) + fx * m.at(c, y0, x1)) +
               fy * ((1 - fx) * m.at(c, y1, x0) + fx * m.at(c, y1, x1));
        ss += v[c] * v[c];
      }
      const double n = std::sqrt(ss);
      double out_ss = 0;
      for (int c = 0; c < m.channels; ++c) {
        EXPECT_NEAR(hc[p * D + off + c], v[c] / (n + 1e-8), 1e-12);
        out_ss += hc[p * D + off + c] * hc[p * D + off + c];
      }
      EXPECT_NEAR(out_ss, 1.0, 1e-6);
      off += m.channels;
    }
  }
}

TEST(Hypercolumn, ConstantMapsGiveConstantColumns) {
  const auto cfg = small_config();
  ParamStore<double> store;
  ContextReadout ro(store, cfg);
  auto maps = random_maps(cfg, 8, 8, 30);
  for (int s = 0; s < ro.sources(); ++s) {
    auto& m = ContextReadout::source_map(maps, s);
    for (int c = 0; c < m.channels; ++c) {
      std::fill(m.plane(c), m.plane(c) + m.plane_size(), 0.1 * (c + 1) * (s + 1));
    }
  }
  std::vector<PixelCoord> coords;
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) coords.push_back({r, c});
  }
  const auto hc = ro.hypercolumns(maps, coords, nullptr);
  const int D = cfg.hypercolumn_dim();
  for (std::size_t p = 1; p < coords.size(); ++p) {
    for (int d = 0; d < D; ++d) EXPECT_DOUBLE_EQ(hc[p * D + d], hc[d]);
  }
}

TEST(Hypercolumn, ZeroSourceStaysZero) {
  std::vector<double> v(4, 0.0), out(4, 1.0);
  EXPECT_EQ(l2_normalize<double>(v, out), 0.0);
  for (double x : out) EXPECT_EQ(x, 0.0);
}

TEST(Hypercolumn, OutOfBoundsThrows) {
  const auto cfg = small_config();
  ParamStore<double> store;
  ContextReadout ro(store, cfg);
  const auto maps = random_maps(cfg, 8, 8, 40);
  const std::vector<PixelCoord> bad{{8, 0}};
  EXPECT_THROW(ro.hypercolumns(maps, bad, nullptr), std::out_of_range);
  const std::vector<PixelCoord> neg{{0, -1}};
  EXPECT_THROW(ro.hypercolumns(maps, neg, nullptr), std::out_of_range);
}

// End-to-end features gradient: backbone, RNN and readout.
TEST(Features, BackwardMatchesFiniteDifferences) {
  const auto cfg = small_config();
  ParamStore<double> store;
  Backbone bb(store, cfg);
  ContextReadout ro(store, cfg);
  std::mt19937_64 rng(12);
  bb.init(store, rng);
  ro.init(store, rng);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (auto& t : store.tensors()) {
    if (!t.trainable) continue;
    for (auto& v : t.value) v += jitter(rng);
  }
  const std::vector<FeatureMap<double>> in{random_map(3, 8, 8, 50), random_map(3, 8, 8, 51)};
  const std::vector<PixelCoord> coords{{0, 1}, {5, 6}, {7, 2}};
  std::vector<double> dctx_w(coords.size() * cfg.context_dim);
  fill_uniform(dctx_w, 1.0, rng);

  auto loss = [&](GradStore<double>* grads) {
    Backbone::Cache<double> bc;
    auto maps = bb.forward(store, in, true, grads ? &bc : nullptr);
    double total = 0;
    auto dmaps = Backbone::zero_grads_like(maps);
    for (std::size_t b = 0; b < maps.size(); ++b) {
      ContextReadout::Cache<double> rc;
      const auto ctx = ro.forward(store, maps[b], coords, &rc);
      for (std::size_t i = 0; i < ctx.size(); ++i) total += (b + 1.0) * dctx_w[i] * ctx[i];
      if (grads) {
        std::vector<double> dctx(dctx_w);
        for (auto& g : dctx) g *= (b + 1.0);
        ro.backward<double>(store, rc, dctx, *grads, dmaps[b]);
      }
    }
    if (grads) bb.backward(store, bc, dmaps, *grads);
    return total;
  };
  auto grads = store.zeros_like();
  loss(&grads);
  const double h = 1e-6;
  double worst = 0;
  for (std::size_t ti = 0; ti < store.count(); ++ti) {
    auto& t = store[static_cast<int>(ti)];
    if (!t.trainable) continue;
    const std::size_t stride = std::max<std::size_t>(1, t.value.size() / 6);
    for (std::size_t k = 0; k < t.value.size(); k += stride) {
      const double orig = t.value[k];
      t.value[k] = orig + h;
      const double lp = loss(nullptr);
      t.value[k] = orig - h;
      const double lm = loss(nullptr);
      t.value[k] = orig;
      const double num = (lp - lm) / (2 * h);
      const double rel = std::abs(num - grads[ti][k]) /
                         std::max({std::abs(num), std::abs(grads[ti][k]), 1e-6});
      EXPECT_LT(rel, 1e-3) << t.name << "[" << k << "] analytic " << grads[ti][k] << " numeric "
                           << num;
      worst = std::max(worst, rel);
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

}  // namespace
}  // namespace saadjust
