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


#include "dpbert/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <thread>
#include <vector>

namespace dpbert {
namespace {

// Known-answer vectors published with the Random123 distribution.
TEST(Philox, KnownAnswers) {
  EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}),
            (PhiloxCounter{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (PhiloxCounter{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (PhiloxCounter{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(RngStream, PureFunctionOfLabels) {
  const RngStream a(7, 3, 11, Purpose::kNoise);
  const RngStream b(7, 3, 11, Purpose::kNoise);
  for (std::uint64_t i = 0; i < 100; ++i) {
    EXPECT_EQ(a.uniform(i), b.uniform(i));
    EXPECT_EQ(a.normal(i), b.normal(i));
  }
  // Reading backwards gives the same values.
  std::vector<double> fwd, bwd(100);
  for (std::uint64_t i = 0; i < 100; ++i) fwd.push_back(a.normal(i));
  for (std::uint64_t i = 100; i-- > 0;) bwd[i] = a.normal(i);
  EXPECT_EQ(fwd, bwd);
}

TEST(RngStream, LabelsSeparateStreams) {
  const RngStream base(1, 2, 3, Purpose::kNoise);
  const std::vector<RngStream> others = {
      RngStream(2, 2, 3, Purpose::kNoise), RngStream(1, 3, 3, Purpose::kNoise),
      RngStream(1, 2, 4, Purpose::kNoise), RngStream(1, 2, 3, Purpose::kSample)};
  for (const auto& o : others) EXPECT_NE(base.block(0), o.block(0));
  EXPECT_EQ(base.with_example(4).block(5), others[2].block(5));
}

TEST(RngStream, ThreadCountDoesNotChangeDraws) {
  const RngStream s(42, 0, 0, Purpose::kTest);
  std::vector<double> serial(4000), parallel(4000);
  for (std::size_t i = 0; i < serial.size(); ++i) serial[i] = s.normal(i);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < 4; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < parallel.size(); i += 4) parallel[i] = s.normal(i);
    });
  }
  for (auto& t : pool) t.join();
  EXPECT_EQ(serial, parallel);
}

TEST(RngStream, UniformMoments) {
  const RngStream s(0, 0, 0, Purpose::kTest);
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform(static_cast<std::uint64_t>(i));
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sq += u * u;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 3 * std::sqrt(1.0 / 12 / n));
  EXPECT_NEAR(var, 1.0 / 12, 1e-3);
}

TEST(RngStream, NormalPairMatchesSingles) {
  const RngStream s(5, 1, 2, Purpose::kInit);
  for (std::uint64_t p = 0; p < 50; ++p) {
    const auto pr = s.normal_pair(p);
    EXPECT_EQ(pr[0], s.normal(2 * p));
    EXPECT_EQ(pr[1], s.normal(2 * p + 1));
  }
}

TEST(RngStream, BelowCoversRangeUniformly) {
  const RngStream s(3, 0, 0, Purpose::kTest);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    const auto v = s.below(static_cast<std::uint64_t>(i), 7);
    ASSERT_LT(v, 7u);
    ++counts[v];
  }
  // Each bin ~ Binomial(n, 1/7); 5 standard deviations.
  const double sd = std::sqrt(n * (1.0 / 7) * (6.0 / 7));
  for (int c : counts) EXPECT_NEAR(c, n / 7.0, 5 * sd);
}

TEST(RngCursor, AdvancesOneIndexPerDraw) {
  const RngStream s(9, 9, 9, Purpose::kCorpus);
  RngCursor cur(s, 10);
  EXPECT_EQ(cur.uniform(), s.uniform(10));
  EXPECT_EQ(cur.normal(), s.normal(11));
  EXPECT_EQ(cur.below(13), s.below(12, 13));
  EXPECT_EQ(cur.position(), 13u);
}

}  // namespace
}  // namespace dpbert
