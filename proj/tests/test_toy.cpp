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


#include "dpbert/toy.hpp"

#include <gtest/gtest.h>

#include <random>

#include "dpbert/errors.hpp"
#include "test_util.hpp"

namespace dpbert {
namespace {

TEST(Toy, GradientMatchesFiniteDifferences) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> n;
    Tensor<double> w({5, 4});
    for (auto& v : w.values()) v = n(g);
    std::vector<double> x(5);
    for (auto& v : x) v = n(g);
    const std::int32_t label = seed % 4;
    Tensor<double> dw({5, 4}), scratch({5, 4});
    toy_example_gradient(w, x, label, dw);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + 1e-5;
      const double up = toy_example_gradient(w, x, label, scratch);
      w[i] = keep - 1e-5;
      const double down = toy_example_gradient(w, x, label, scratch);
      w[i] = keep;
      EXPECT_LE(testing::relative_error(dw[i], (up - down) / 2e-5), 1e-6);
    }
  }
}

TEST(Toy, GradientIsOrthogonalToWeights) {
  std::mt19937_64 g(3);
  std::normal_distribution<double> n;
  Tensor<double> w({6, 3}), dw({6, 3});
  for (auto& v : w.values()) v = n(g);
  std::vector<double> x(6);
  for (auto& v : x) v = n(g);
  toy_example_gradient(w, x, 1, dw);
  double dot = 0, nw = 0, ng = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    dot += w[i] * dw[i];
    nw += w[i] * w[i];
    ng += dw[i] * dw[i];
  }
  EXPECT_LE(std::abs(dot), 1e-10 * std::sqrt(nw * ng));
}

TEST(Toy, RunsAreDeterministic) {
  DpAdamConfig dp;
  ToyTask task;
  task.examples = 64;
  task.batch = 8;
  const auto a = run_norm_toy(task, dp, 1e-3, 20, 5);
  const auto b = run_norm_toy(task, dp, 1e-3, 20, 5);
  EXPECT_EQ(a.initial_norm, b.initial_norm);
  EXPECT_EQ(a.final_norm, b.final_norm);
}

TEST(Toy, NoDecayGrowsNorm) {
  DpAdamConfig dp;
  dp.weight_decay = 0.0;
  ToyTask task;
  const auto r = run_norm_toy(task, dp, 6.0902e-4, 200, 1);
  EXPECT_GT(r.final_norm, r.initial_norm);
}

TEST(Toy, Validation) {
  ToyTask task;
  task.batch = task.examples + 1;
  EXPECT_THROW(task.validate(), ParameterError);
  task = {};
  task.outputs = 1;
  EXPECT_THROW(task.validate(), ParameterError);
}

}  // namespace
}  // namespace dpbert
