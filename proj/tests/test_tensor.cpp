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


#include "dpbert/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dpbert/errors.hpp"
#include "dpbert/rng.hpp"

namespace dpbert {
namespace {

std::vector<Tensor<double>> random_tensors(std::uint64_t seed, double scale) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::uniform_int_distribution<int> dim(1, 9);
  std::vector<Tensor<double>> out;
  const int count = 1 + static_cast<int>(seed % 4);
  for (int i = 0; i < count; ++i) {
    Tensor<double> t({static_cast<std::size_t>(dim(g)), static_cast<std::size_t>(dim(g))});
    for (auto& v : t.values()) v = n(g);
    out.push_back(std::move(t));
  }
  return out;
}

TEST(Tensor, ShapeAndSize) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 12u);
  EXPECT_EQ(shape_size({5, 7}), 35u);
  EXPECT_EQ(shape_string({5, 7}), "[5x7]");
  EXPECT_THROW(Tensor<double>({2, 0}), StructuralError);
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>(3)), StructuralError);
}

TEST(Tensor, PrecisionNames) {
  EXPECT_EQ(parse_precision("float32"), Precision::kFloat32);
  EXPECT_EQ(parse_precision(precision_name(Precision::kFloat64)), Precision::kFloat64);
  EXPECT_THROW(parse_precision("float16"), ParameterError);
}

TEST(GaussianNoise, ZeroScaleIsZero) {
  const auto t = gaussian_noise<double>({4, 5}, 0.0, RngStream(1, 1, 0, Purpose::kNoise));
  for (double v : t.values()) EXPECT_EQ(v, 0.0);
}

TEST(GaussianNoise, Deterministic) {
  const RngStream s(1, 2, 0, Purpose::kNoise);
  EXPECT_EQ(gaussian_noise<double>({10, 10}, 1.5, s), gaussian_noise<double>({10, 10}, 1.5, s));
}

TEST(GaussianNoise, NegativeScaleRejected) {
  EXPECT_THROW(gaussian_noise<double>({3}, -1.0, RngStream(0, 0, 0, Purpose::kNoise)),
               ParameterError);
}

TEST(GaussianNoise, MillionDrawMoments) {
  const auto t = gaussian_noise<double>({1000, 1000}, 1.0, RngStream(3, 0, 0, Purpose::kTest));
  double sum = 0, sq = 0;
  for (double v : t.values()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(t.size());
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.0, 0.005);
  EXPECT_NEAR(std::sqrt(sq / n - mean * mean), 1.0, 0.005);
}

TEST(GaussianNoise, OffsetsConcatenate) {
  const RngStream s(4, 0, 0, Purpose::kNoise);
  const auto whole = gaussian_noise<double>({7}, 2.0, s);
  const auto head = gaussian_noise<double>({3}, 2.0, s, 0);
  const auto tail = gaussian_noise<double>({4}, 2.0, s, 3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(whole[i], head[i]);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(whole[3 + i], tail[i]);
}

TEST(GlobalNorm, ThreeFourFive) {
  const std::vector<Tensor<double>> t = {Tensor<double>({2}, {3.0, 4.0})};
  EXPECT_EQ(global_l2_norm<double>(t), 5.0);
  const std::vector<Tensor<double>> z = {Tensor<double>({3, 3})};
  EXPECT_EQ(global_l2_norm<double>(z), 0.0);
  EXPECT_THROW(global_l2_norm<double>(std::vector<Tensor<double>>{}), ParameterError);
}

TEST(GlobalNorm, MatchesBruteForce) {
  std::mt19937_64 g(11);
  std::normal_distribution<double> n;
  Tensor<double> t({100});
  for (auto& v : t.values()) v = n(g);
  long double acc = 0;
  for (double v : t.values()) acc += static_cast<long double>(v) * v;
  const double brute = std::sqrt(static_cast<double>(acc));
  const std::vector<Tensor<double>> one = {t};
  EXPECT_NEAR(global_l2_norm<double>(one), brute, 1e-12 * brute);
}

TEST(Clip, ScalesToNorm) {
  std::vector<Tensor<double>> t = {Tensor<double>({2}, {3.0, 4.0})};
  const auto out = clip_to_norm<double>(t, 2.5);
  EXPECT_DOUBLE_EQ(out[0][0], 1.5);
  EXPECT_DOUBLE_EQ(out[0][1], 2.0);
}

TEST(Clip, SmallInputUnchanged) {
  std::vector<Tensor<double>> t = {Tensor<double>({2}, {0.3, 0.4})};
  EXPECT_EQ(clip_to_norm<double>(t, 1.0), t);
  std::vector<Tensor<double>> z = {Tensor<double>({4})};
  EXPECT_EQ(clip_to_norm<double>(z, 1.0), z);
}

TEST(Clip, RejectsNonPositiveBound) {
  std::vector<Tensor<double>> t = {Tensor<double>({2}, {3.0, 4.0})};
  EXPECT_THROW(clip_to_norm<double>(t, 0.0), ParameterError);
  EXPECT_THROW(clip_to_norm<double>(t, -1.0), ParameterError);
}

TEST(Clip, RandomMultiTensorHitsBound) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto t = random_tensors(seed, 3.0);
    const auto out = clip_to_norm<double>(t, 0.1);
    EXPECT_NEAR(global_l2_norm<double>(out), 0.1, 1e-10);
  }
}

TEST(Clip, ContractAndIdempotence) {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const double scale = std::pow(10.0, static_cast<double>(seed % 9) - 4.0);
    const double c = std::pow(10.0, static_cast<double>(seed % 7) - 3.0);
    const auto t = random_tensors(seed, scale);
    const auto once = clip_to_norm<double>(t, c);
    EXPECT_LE(global_l2_norm<double>(once), c + 1e-9);
    EXPECT_EQ(clip_to_norm<double>(once, c), once) << "seed " << seed;
  }
}

TEST(Clip, Float32NeverExceedsBound) {
  std::mt19937_64 g(2);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Tensor<float>> t = {Tensor<float>({37}), Tensor<float>({5, 3})};
    for (auto& x : t) {
      for (auto& v : x.values()) v = n(g);
    }
    const double c = 3.2429e-3;
    clip_in_place<float>(t, c);
    EXPECT_LE(global_l2_norm<float>(t), c);
  }
}

TEST(AllFinite, DetectsNanAndInf) {
  std::vector<double> v = {1.0, 2.0};
  EXPECT_TRUE(all_finite<double>(v));
  v.push_back(std::nan(""));
  EXPECT_FALSE(all_finite<double>(v));
  v.back() = INFINITY;
  EXPECT_FALSE(all_finite<double>(v));
}

}  // namespace
}  // namespace dpbert
