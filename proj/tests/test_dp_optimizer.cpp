// Copyright 2026 The dpbert Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "dpbert/dp_optimizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dpbert/errors.hpp"

namespace dpbert {
namespace {

ParameterSet<double> layout() {
  ParameterSet<double> p;
  p.add("a", Tensor<double>({3, 4}));
  p.add("b", Tensor<double>({5}));
  return p;
}

GradientSet<double> random_grad(std::mt19937_64& g, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  auto out = layout();
  for (auto& t : out.tensors()) {
    for (auto& v : t.values()) v = n(g);
  }
  return out;
}

double norm(const GradientSet<double>& s) { return global_l2_norm<double>(s.tensors()); }

GradientSet<double> difference(const GradientSet<double>& a, const GradientSet<double>& b) {
  auto d = a;
  auto neg = b;
  neg *= -1.0;
  d += neg;
  return d;
}

ParameterSet<double> scalar(double v) {
  ParameterSet<double> p;
  p.add("x", Tensor<double>({1}, {v}));
  return p;
}

TEST(DpAdamConfig, Validation) {
  DpAdamConfig c;
  EXPECT_NO_THROW(c.validate());
  c.clip_norm = 0.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.noise_multiplier = -0.1;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.weight_decay = -1.0;
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(Accumulator, SmallGradientPassesThrough) {
  std::mt19937_64 g(1);
  auto grad = random_grad(g, 0.01);
  ASSERT_LE(norm(grad), 1.0);
  const auto copy = grad;
  ClippedAccumulator<double> acc(layout());
  acc.absorb(grad, 1.0);
  EXPECT_EQ(acc.sum(), copy);
  EXPECT_EQ(acc.count(), 1u);
}

TEST(Accumulator, CopiesAddLinearly) {
  std::mt19937_64 g(2);
  const auto grad = random_grad(g, 5.0);
  auto clipped = grad;
  clip_in_place<double>(clipped.tensors(), 0.5);
  ClippedAccumulator<double> acc(layout());
  for (int k = 0; k < 7; ++k) acc = accumulate_clipped(std::move(acc), grad, 0.5);
  EXPECT_EQ(acc.count(), 7u);
  auto expect = clipped;
  expect *= 7.0;
  EXPECT_LE(norm(difference(acc.sum(), expect)), 1e-12);
}

TEST(Accumulator, StreamingMatchesBatchOracle) {
  std::mt19937_64 g(3);
  std::vector<GradientSet<double>> grads;
  for (int i = 0; i < 1000; ++i) grads.push_back(random_grad(g, (i % 5 + 1) * 0.3));
  const double c = 1.0;
  // Oracle: clip each with the explicit min(1, C/||g||) factor, then sum.
  std::vector<double> oracle;
  for (std::size_t i = 0; i < layout().size(); ++i) {
    oracle.assign(layout().at(i).size(), 0.0);
    for (const auto& gr : grads) {
      const double f = std::min(1.0, c / norm(gr));
      for (std::size_t k = 0; k < oracle.size(); ++k) oracle[k] += f * gr.at(i)[k];
    }
    ClippedAccumulator<double> acc(layout());
    for (auto gr : grads) acc.absorb(gr, c);
    for (std::size_t k = 0; k < oracle.size(); ++k) {
      EXPECT_NEAR(acc.sum().at(i)[k], oracle[k], 1e-9);
    }
  }
}

TEST(Accumulator, ShapeMismatchRejected) {
  ClippedAccumulator<double> acc(layout());
  auto wrong = scalar(1.0);
  EXPECT_THROW(acc.absorb(wrong, 1.0), StructuralError);
}

TEST(Accumulator, SwapSensitivityAtMostTwoC) {
  std::mt19937_64 g(4);
  const double c = 0.7;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<GradientSet<double>> batch;
    for (int i = 0; i < 10; ++i) batch.push_back(random_grad(g, 2.0));
    auto other = random_grad(g, 2.0);
    ClippedAccumulator<double> a(layout()), b(layout());
    for (int i = 0; i < 10; ++i) {
      auto x = batch[i];
      a.absorb(x, c);
      auto y = i == 3 ? other : batch[i];
      b.absorb(y, c);
    }
    EXPECT_LE(norm(difference(a.sum(), b.sum())), 2 * c + 1e-9);
  }
}

TEST(Accumulator, TreeMergeIsDeterministicAndSumsCounts) {
  std::mt19937_64 g(5);
  std::vector<ClippedAccumulator<double>> shards;
  ClippedAccumulator<double> whole(layout());
  for (int s = 0; s < 5; ++s) {
    ClippedAccumulator<double> acc(layout());
    for (int i = 0; i < 3; ++i) {
      auto gr = random_grad(g, 1.0);
      auto copy = gr;
      acc.absorb(gr, 0.5);
      whole.absorb(copy, 0.5);
    }
    shards.push_back(acc);
  }
  const auto m1 = tree_merge(shards);
  const auto m2 = tree_merge(shards);
  EXPECT_EQ(m1.count(), 15u);
  EXPECT_EQ(m1.sum(), m2.sum());
  EXPECT_LE(norm(difference(m1.sum(), whole.sum())), 1e-12);
}

TEST(Privatize, NoNoiseReturnsMean) {
  std::mt19937_64 g(6);
  auto grad = random_grad(g, 0.01);
  const auto copy = grad;
  ClippedAccumulator<double> acc(layout());
  acc.absorb(grad, 1.0);
  const auto p = privatize(acc, 1.0, 0.0, RngStream(0, 1, 0, Purpose::kNoise));
  EXPECT_EQ(p.gradient, copy);
  EXPECT_EQ(p.snr.noise_norm, 0.0);
  EXPECT_FALSE(p.snr.ratio.has_value());
}

TEST(Privatize, EmptyAccumulatorIsContractError) {
  ClippedAccumulator<double> acc(layout());
  EXPECT_THROW(privatize(acc, 1.0, 1.0, RngStream(0, 1, 0, Purpose::kNoise)), ContractError);
}

TEST(Privatize, PinnedScalarNoise) {
  // Pick a step whose first draw is comfortably positive, then choose
  // sigma*C so that the scaled draw is exactly 1.
  std::uint64_t step = 1;
  while (RngStream(0, step, 0, Purpose::kNoise).normal(0) < 0.1) ++step;
  const RngStream s(0, step, 0, Purpose::kNoise);
  const double z = s.normal(0);
  ClippedAccumulator<double> acc(scalar(0.0));
  auto two = scalar(2.0);
  acc.absorb(two, 100.0);
  two = scalar(2.0);
  acc.absorb(two, 100.0);
  const double c = 100.0;
  const auto p = privatize(acc, c, 1.0 / (z * c), s);
  EXPECT_NEAR(p.gradient.at(0)[0], 2.5, 1e-12);
  EXPECT_NEAR(p.snr.signal_norm, 4.0, 1e-15);
  EXPECT_NEAR(p.snr.noise_norm, 1.0, 1e-12);
}

TEST(Privatize, NoiseNormFollowsChi) {
  const double sigma = 1.3, c = 0.2;
  const std::uint64_t batch = 8;
  ClippedAccumulator<double> acc(layout());
  for (std::uint64_t i = 0; i < batch; ++i) {
    auto zero = layout();
    acc.absorb(zero, c);
  }
  const double d = static_cast<double>(layout().num_elements());
  double mean = 0.0;
  const int trials = 1000;
  for (int t = 1; t <= trials; ++t) {
    const auto p = privatize(acc, c, sigma, RngStream(9, t, 0, Purpose::kNoise));
    mean += norm(p.gradient) * batch / (sigma * c);
  }
  mean /= trials;
  EXPECT_NEAR(mean, std::sqrt(d) * (1 - 1 / (4 * d)), 0.01 * std::sqrt(d));
}

TEST(Adam, ScalarFirstStep) {
  DpAdamConfig c;
  c.weight_decay = 0.0;
  auto theta = scalar(3.0);
  auto st = OptimizerState<double>::zeros_like(theta);
  adam_step(st, scalar(1.0), theta, c, 1.0);
  EXPECT_EQ(st.step, 1u);
  EXPECT_DOUBLE_EQ(st.m.at(0)[0], 0.25);
  EXPECT_DOUBLE_EQ(st.v.at(0)[0], 0.1);
  EXPECT_DOUBLE_EQ(theta.at(0)[0], 3.0 - 1.0 / (1.0 + 1e-11));
}

TEST(Adam, ZeroGradientIsNullUpdate) {
  DpAdamConfig c;
  c.weight_decay = 0.0;
  auto theta = scalar(-1.25);
  auto st = OptimizerState<double>::zeros_like(theta);
  adam_step(st, scalar(0.0), theta, c, 0.5);
  EXPECT_EQ(theta.at(0)[0], -1.25);
}

TEST(Adam, BiasCorrectionRecoversGradient) {
  // With m0 = v0 = 0 the corrected first step is g / (|g| + xi) whatever beta1 is.
  for (double b1 : {0.0, 0.5, 0.75, 0.99}) {
    DpAdamConfig c;
    c.beta1 = b1;
    c.weight_decay = 0.0;
    c.adam_xi = 0.0;
    auto theta = scalar(0.0);
    auto st = OptimizerState<double>::zeros_like(theta);
    adam_step(st, scalar(-0.3), theta, c, 1.0);
    EXPECT_NEAR(theta.at(0)[0], 1.0, 1e-12) << b1;
  }
}

TEST(Adam, DecoupledDecayUsesPreviousIterate) {
  DpAdamConfig c;
  c.weight_decay = 0.5;
  auto theta = scalar(2.0);
  auto st = OptimizerState<double>::zeros_like(theta);
  adam_step(st, scalar(0.0), theta, c, 0.1);
  EXPECT_DOUBLE_EQ(theta.at(0)[0], 2.0 - 0.1 * 0.5 * 2.0);
}

TEST(Adam, SecondMomentStaysNonNegative) {
  std::mt19937_64 g(7);
  DpAdamConfig c;
  auto theta = layout();
  auto st = OptimizerState<double>::zeros_like(theta);
  for (int t = 0; t < 50; ++t) adam_step(st, random_grad(g, 3.0), theta, c, 1e-3);
  for (const auto& v : st.v.tensors()) {
    for (double x : v.values()) EXPECT_GE(x, 0.0);
  }
}

TEST(Adam, NonFiniteGradientRejected) {
  DpAdamConfig c;
  auto theta = scalar(1.0);
  auto st = OptimizerState<double>::zeros_like(theta);
  EXPECT_THROW(adam_step(st, scalar(std::nan("")), theta, c, 1.0), NumericError);
  EXPECT_THROW(adam_step(st, scalar(INFINITY), theta, c, 1.0), NumericError);
  EXPECT_EQ(theta.at(0)[0], 1.0);
}

}  // namespace
}  // namespace dpbert
