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
#include <cstdint>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "saadjust/losses.hpp"

namespace saadjust {
namespace {

TEST(Huber, QuadraticInsideLinearOutside) {
  EXPECT_DOUBLE_EQ(huber(0.02, 0.04), 0.5 * 0.02 * 0.02);
  EXPECT_NEAR(huber(0.1, 0.04), 0.0032, 1e-15);
  EXPECT_NEAR(huber(-0.1, 0.04), 0.0032, 1e-15);
  EXPECT_DOUBLE_EQ(huber(0.0, 0.04), 0.0);
  // Continuous at the changepoint.
  EXPECT_NEAR(huber(0.04, 0.04), 0.0008, 1e-15);
  EXPECT_NEAR(huber(0.04 + 1e-12, 0.04), 0.0008, 1e-13);
}

TEST(Huber, GradientIsClampedError) {
  EXPECT_DOUBLE_EQ(huber_grad(0.01, 0.04), 0.01);
  EXPECT_DOUBLE_EQ(huber_grad(0.3, 0.04), 0.04);
  EXPECT_DOUBLE_EQ(huber_grad(-0.3, 0.04), -0.04);
  const double h = 1e-7;
  for (double e : {-0.2, -0.03, 0.001, 0.035, 0.5}) {
    EXPECT_NEAR(huber_grad(e, 0.04), (huber(e + h, 0.04) - huber(e - h, 0.04)) / (2 * h), 1e-8);
  }
}

TEST(Huber, NeverExceedsHalfSquaredError) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    const double e = u(rng);
    EXPECT_LE(huber(e, 0.04), half_squared(e) + 1e-15);
    EXPECT_GE(huber(e, 0.04), 0.0);
  }
}

TEST(RegressionPenalty, SelectsKind) {
  EXPECT_DOUBLE_EQ(regression_penalty(LossKind::Mse, 0.1, 0.04), 0.005);
  EXPECT_DOUBLE_EQ(regression_penalty(LossKind::Huber, 0.1, 0.04), huber(0.1, 0.04));
  EXPECT_DOUBLE_EQ(regression_penalty_grad(LossKind::Mse, 0.1, 0.04), 0.1);
  EXPECT_DOUBLE_EQ(regression_penalty_grad(LossKind::Huber, 0.1, 0.04), 0.04);
}

TEST(CrossEntropy, UniformLogitsGiveLogClassCount) {
  const std::vector<double> logits(150, 0.37);
  EXPECT_NEAR(cross_entropy<double>(logits, 17), std::log(150.0), 1e-12);
}

TEST(CrossEntropy, StableForLargeLogits) {
  const std::vector<double> logits{1000.0, 0.0, -1000.0};
  EXPECT_NEAR(cross_entropy<double>(logits, 0), 0.0, 1e-12);
  EXPECT_NEAR(cross_entropy<double>(logits, 1), 1000.0, 1e-9);
  EXPECT_TRUE(std::isfinite(cross_entropy<double>(logits, 2)));
}

TEST(CrossEntropy, MatchesDirectFormula) {
  const std::vector<double> logits{0.5, -1.0, 2.0, 0.1};
  double z = 0;
  for (double l : logits) z += std::exp(l);
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(cross_entropy<double>(logits, k), -std::log(std::exp(logits[k]) / z), 1e-12);
  }
}

TEST(ParseCrossEntropy, IgnoresUnlabelledPixels) {
  const std::vector<double> logits{2.0, 0.0, 0.0, 2.0, 5.0, -5.0};
  const std::vector<std::uint8_t> labels{0, 1, 255};
  const double want = 0.5 * (cross_entropy<double>({logits.data(), 2}, 0) +
                             cross_entropy<double>({logits.data() + 2, 2}, 1));
  EXPECT_NEAR(parse_cross_entropy<double>(logits, labels, 2), want, 1e-12);
}

TEST(ParseCrossEntropy, Errors) {
  const std::vector<double> logits(4, 0.0);
  const std::vector<std::uint8_t> all_ignored{255, 255};
  EXPECT_THROW(parse_cross_entropy<double>(logits, all_ignored, 2), std::invalid_argument);
  const std::vector<std::uint8_t> too_big{0, 2};
  EXPECT_THROW(parse_cross_entropy<double>(logits, too_big, 2), std::out_of_range);
}

TEST(Softmax, SumsToOneAndPreservesOrder) {
  std::vector<double> v{3.0, 1.0, -2.0, 3.0};
  softmax_inplace<double>(v);
  double s = 0;
  for (double x : v) s += x;
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_GT(v[1], v[2]);
  EXPECT_DOUBLE_EQ(v[0], v[3]);
}

TEST(TotalLoss, WeightsParseTerm) {
  EXPECT_NEAR(total_loss(1.0, 2.0, 0.01), 1.02, 1e-15);
  EXPECT_DOUBLE_EQ(total_loss(0.5, 7.0, 0.0), 0.5);
}

TEST(LossConfig, Validation) {
  LossConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_DOUBLE_EQ(c.delta, 0.04);
  EXPECT_DOUBLE_EQ(c.lambda, 0.01);
  c.delta = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = LossConfig{};
  c.lambda = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace saadjust
