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


#include "dpbert/schedules.hpp"

#include <gtest/gtest.h>

#include "dpbert/errors.hpp"

namespace dpbert {
namespace {

BatchSchedule large_model_increasing() {
  return {BatchKind::kIncreasing, 262144, 1048576, 7500, 4, 20000};
}

TEST(BatchSchedule, LargeModelStageValues) {
  const auto s = large_model_increasing();
  EXPECT_EQ(batch_size_at(s, 1), 262144u);
  EXPECT_EQ(batch_size_at(s, 1875), 262144u);
  EXPECT_EQ(batch_size_at(s, 1876), 458752u);
  EXPECT_EQ(batch_size_at(s, 3751), 655360u);
  EXPECT_EQ(batch_size_at(s, 5626), 851968u);
  EXPECT_EQ(batch_size_at(s, 7500), 851968u);
  EXPECT_EQ(batch_size_at(s, 7501), 1048576u);
  EXPECT_EQ(batch_size_at(s, 20000), 1048576u);
}

TEST(BatchSchedule, IncreasingIsNondecreasing) {
  const auto s = large_model_increasing();
  std::uint64_t prev = 0;
  for (std::uint64_t t = 1; t <= s.total_steps; ++t) {
    const auto b = batch_size_at(s, t);
    ASSERT_GE(b, prev) << t;
    prev = b;
  }
}

TEST(BatchSchedule, OutOfRangeStep) {
  const auto s = large_model_increasing();
  EXPECT_THROW(batch_size_at(s, 0), ParameterError);
  EXPECT_THROW(batch_size_at(s, 20001), ParameterError);
}

TEST(BatchSchedule, Validation) {
  BatchSchedule s = large_model_increasing();
  s.stages = 5;  // 786432 is not divisible by 5
  EXPECT_THROW(s.validate(), ParameterError);
  s = large_model_increasing();
  s.ramp_steps = 30000;
  EXPECT_THROW(s.validate(), ParameterError);
  s = large_model_increasing();
  s.base_size = 0;
  EXPECT_THROW(s.validate(), ParameterError);
  EXPECT_EQ(parse_batch_kind(batch_kind_name(BatchKind::kIncreasing)), BatchKind::kIncreasing);
  EXPECT_THROW(parse_batch_kind("cyclic"), ParameterError);
}

TEST(TotalExamples, FixedProduct) {
  const BatchSchedule s{BatchKind::kFixed, 1048576, 1048576, 0, 1, 20000};
  EXPECT_EQ(total_examples(s, 20000), 20971520000u);
  EXPECT_EQ(total_examples(s, 0), 0u);
}

TEST(TotalExamples, IncreasingMatchesDirectSummation) {
  const auto s = large_model_increasing();
  std::uint64_t direct = 0;
  for (std::uint64_t t = 1; t <= 7500; ++t) direct += batch_size_at(s, t);
  EXPECT_EQ(total_examples(s, 7500), direct);
  EXPECT_EQ(direct, 1875u * (262144 + 458752 + 655360 + 851968));
  EXPECT_EQ(direct, 4177920000u);
}

TEST(TotalExamples, AdditiveOverRanges) {
  const auto s = large_model_increasing();
  for (std::uint64_t a : {0u, 1u, 1875u, 4000u}) {
    for (std::uint64_t b : {1u, 1876u, 7500u, 12000u}) {
      if (a + b > s.total_steps) continue;
      std::uint64_t middle = 0;
      for (std::uint64_t t = a + 1; t <= a + b; ++t) middle += batch_size_at(s, t);
      EXPECT_EQ(total_examples(s, a + b), total_examples(s, a) + middle);
    }
  }
}

TEST(AccountingSegments, RunsOfEqualSize) {
  const auto segs = accounting_segments(large_model_increasing(), 346000000);
  ASSERT_EQ(segs.size(), 5u);
  EXPECT_EQ(segs[0].steps, 1875u);
  EXPECT_EQ(segs[4].steps, 12500u);
  EXPECT_EQ(segs[4].q, 1048576.0 / 346000000.0);
}

TEST(LrSchedule, WarmupAndDecay) {
  const LrSchedule s{6.0902e-4, 7500, 20000};
  EXPECT_EQ(lr_at(s, 7500), 6.0902e-4);
  EXPECT_DOUBLE_EQ(lr_at(s, 3750), 6.0902e-4 / 2);
  EXPECT_DOUBLE_EQ(lr_at(s, 1), 6.0902e-4 / 7500);
  EXPECT_EQ(lr_at(s, 20000), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(s, 13750), 6.0902e-4 * 0.25);
  EXPECT_THROW(lr_at(s, 0), ParameterError);
  EXPECT_THROW(lr_at(s, 20001), ParameterError);
}

TEST(LrSchedule, ContinuousAtWarmupEnd) {
  const LrSchedule s{1.0, 100, 1000};
  EXPECT_NEAR(lr_at(s, 100), lr_at(s, 101), 1e-2);
  EXPECT_LE(lr_at(s, 101), lr_at(s, 100));
}

TEST(LrSchedule, Validation) {
  LrSchedule s{1.0, 0, 10};
  EXPECT_THROW(s.validate(), ParameterError);
  s = {1.0, 11, 10};
  EXPECT_THROW(s.validate(), ParameterError);
  s = {0.0, 1, 10};
  EXPECT_THROW(s.validate(), ParameterError);
}

}  // namespace
}  // namespace dpbert
