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


#include "dpbert/kernels.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <vector>

#include "test_util.hpp"

namespace dpbert::kernels {
namespace {

using testing::relative_error;
using M = Mat<double>;
using R = RowVec<double>;

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-6;
constexpr int kSeeds = 20;

M random_mat(std::mt19937_64& g, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(g);
  return m;
}

// Max relative error between `analytic` and central differences of `f`
// with respect to every entry of `x`.
double fd_check(M& x, const std::function<double()>& f, const M& analytic) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + kStep;
    const double up = f();
    x.data()[i] = keep - kStep;
    const double down = f();
    x.data()[i] = keep;
    worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (2 * kStep)));
  }
  return worst;
}

// Scalar objective sum(w .* y) so dy = w. Summed in long double so the
// objective's own round-off stays well below the tolerance.
double dot(const M& w, const M& y) {
  long double acc = 0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    acc += static_cast<long double>(w.data()[i]) * y.data()[i];
  }
  return static_cast<double>(acc);
}

TEST(KernelGradients, Matmul) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 g(seed);
    M a = random_mat(g, 3, 4), b = random_mat(g, 4, 5);
    const M w = random_mat(g, 3, 5);
    M da;
    M db = M::Zero(4, 5);
    matmul_backward<double>(w, a, b, &da, db);
    auto f = [&] { return dot(w, matmul_forward<double>(a, b)); };
    EXPECT_LE(fd_check(a, f, da), kTol);
    EXPECT_LE(fd_check(b, f, db), kTol);
  }
}

TEST(KernelGradients, BiasAdd) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 g(seed);
    const M x = random_mat(g, 4, 6);
    M bias = random_mat(g, 1, 6);
    const M w = random_mat(g, 4, 6);
    R db = R::Zero(6);
    bias_add_backward<double>(w, db);
    auto f = [&] {
      M y = x;
      bias_add_forward<double>(y, R(bias));
      return dot(w, y);
    };
    EXPECT_LE(fd_check(bias, f, M(db)), kTol);
  }
}

TEST(KernelGradients, Gelu) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 g(seed);
    M x = random_mat(g, 3, 7, 2.0);
    const M w = random_mat(g, 3, 7);
    const M dx = gelu_backward<double>(w, x);
    EXPECT_LE(fd_check(x, [&] { return dot(w, gelu_forward<double>(x)); }, dx), kTol);
  }
}

TEST(KernelGradients, SoftmaxRows) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 g(seed);
    M x = random_mat(g, 3, 6, 2.0);
    const M w = random_mat(g, 3, 6);
    const M dx = softmax_rows_backward<double>(w, softmax_rows_forward<double>(x));
    EXPECT_LE(fd_check(x, [&] { return dot(w, softmax_rows_forward<double>(x)); }, dx), kTol);
  }
}

TEST(KernelGradients, SoftmaxCrossEntropy) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 g(seed);
    M x = random_mat(g, 4, 9, 2.0);
    std::uniform_int_distribution<std::int32_t> lab(0, 8);
    const std::vector<std::int32_t> labels = {lab(g), lab(g), lab(g), lab(g)};
    const auto fwd = softmax_xent_forward<double>(x, labels);
    const M dx = softmax_xent_backward<double>(fwd.probs, labels);
    EXPECT_LE(fd_check(x, [&] { return static_cast<double>(softmax_xent_forward<double>(x, labels).loss); },
                       dx),
              kTol);
  }
}

void check_layer_norm(double xi) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 g(seed);
    M x = random_mat(g, 3, 8, 1.5);
    M gain = random_mat(g, 1, 8);
    M bias = random_mat(g, 1, 8);
    const M w = random_mat(g, 3, 8);
    LayerNormCache<double> cache;
    layer_norm_forward<double>(x, R(gain), R(bias), xi, &cache);
    R dgain = R::Zero(8), dbias = R::Zero(8);
    const M dx = layer_norm_backward<double>(w, cache, R(gain), dgain, dbias);
    auto f = [&] { return dot(w, layer_norm_forward<double>(x, R(gain), R(bias), xi, nullptr)); };
    EXPECT_LE(fd_check(x, f, dx), kTol) << "xi " << xi << " seed " << seed;
    EXPECT_LE(fd_check(gain, f, M(dgain)), kTol);
    EXPECT_LE(fd_check(bias, f, M(dbias)), kTol);
  }
}

TEST(KernelGradients, LayerNorm) { check_layer_norm(1e-3); }
TEST(KernelGradients, LayerNormZeroEpsilon) { check_layer_norm(0.0); }

TEST(KernelGradients, Embedding) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 g(seed);
    M table = random_mat(g, 6, 4);
    const std::vector<std::int32_t> ids = {1, 4, 1, 0, 5};
    const M w = random_mat(g, 5, 4);
    M dt = M::Zero(6, 4);
    embedding_backward<double>(w, ids, dt);
    EXPECT_LE(fd_check(table, [&] { return dot(w, embedding_forward<double>(table, ids)); }, dt), kTol);
  }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  const M x = M::Constant(2, 5, 3.7);
  const M y = layer_norm_forward<double>(x, R::Ones(5), R::Zero(5), 1e-12, nullptr);
  EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LayerNorm, ScaleCancelsAtZeroEpsilon) {
  std::mt19937_64 g(1);
  const M x = random_mat(g, 4, 16);
  const R gain = R(random_mat(g, 1, 16)), bias = R(random_mat(g, 1, 16));
  const M y1 = layer_norm_forward<double>(x, gain, bias, 0.0, nullptr);
  const M y10 = layer_norm_forward<double>(M(10.0 * x), gain, bias, 0.0, nullptr);
  EXPECT_LE((y1 - y10).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LayerNorm, RejectsNegativeEpsilon) {
  const M x = M::Ones(1, 3);
  EXPECT_THROW(layer_norm_forward<double>(x, R::Ones(3), R::Zero(3), -1.0, nullptr), ParameterError);
}

TEST(Kernels, ShapeErrors) {
  const M a = M::Ones(2, 3), b = M::Ones(4, 2);
  EXPECT_THROW(matmul_forward<double>(a, b), StructuralError);
  M x = M::Ones(2, 3);
  EXPECT_THROW(bias_add_forward<double>(x, R::Ones(4)), StructuralError);
  const M empty(2, 0);
  EXPECT_THROW(softmax_rows_forward<double>(empty), StructuralError);
  const std::vector<std::int32_t> labels = {0, 0};
  EXPECT_THROW(softmax_xent_forward<double>(empty, labels), StructuralError);
  const std::vector<std::int32_t> bad = {7};
  EXPECT_THROW(embedding_forward<double>(M::Ones(3, 2), bad), StructuralError);
}

TEST(Kernels, SoftmaxXentCountsArgmax) {
  M x(2, 3);
  x << 0.1, 2.0, -1.0, 3.0, 0.0, 0.5;
  const std::vector<std::int32_t> labels = {1, 2};
  const auto r = softmax_xent_forward<double>(x, labels);
  EXPECT_EQ(r.correct, 1);
  EXPECT_NEAR(r.probs.row(0).sum(), 1.0, 1e-15);
}

}  // namespace
}  // namespace dpbert::kernels
