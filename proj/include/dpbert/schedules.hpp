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

#ifndef DPBERT_SCHEDULES_HPP_
#define DPBERT_SCHEDULES_HPP_

#include <cstdint>
#include <string_view>
#include <vector>

#include "dpbert/accountant.hpp"

namespace dpbert {

enum class BatchKind { kFixed, kIncreasing };

std::string_view batch_kind_name(BatchKind kind);
BatchKind parse_batch_kind(std::string_view name);

// Piecewise-constant batch sizes. For the increasing kind the ramp is split
// into `stages` equal stages; stage s covers steps
// (s * ramp / stages, (s + 1) * ramp / stages] and uses
// base + s * (final - base) / stages. Steps after the ramp use `final_size`,
// so the final size first appears at step ramp_steps + 1.
struct BatchSchedule {
  BatchKind kind = BatchKind::kFixed;
  std::uint64_t base_size = 64;
  std::uint64_t final_size = 64;
  std::uint64_t ramp_steps = 0;
  std::uint64_t stages = 1;
  std::uint64_t total_steps = 1;

  void validate() const;
};

// Linear warmup to the peak over warmup_steps, then quadratic decay
// lr = peak * ((T - t) / (T - T_w))^2, reaching 0 at t = T.
struct LrSchedule {
  double peak = 1e-3;
  std::uint64_t warmup_steps = 1;
  std::uint64_t total_steps = 1;

  void validate() const;
};

// ParameterError unless 1 <= t <= total_steps.
std::uint64_t batch_size_at(const BatchSchedule& schedule, std::uint64_t t);
double lr_at(const LrSchedule& schedule, std::uint64_t t);

// Sum of batch_size_at over steps 1..up_to_step.
std::uint64_t total_examples(const BatchSchedule& schedule, std::uint64_t up_to_step);

// Maximal runs of equal batch sizes as accountant segments with
// q = size / dataset_size.
std::vector<ScheduleSegment> accounting_segments(const BatchSchedule& schedule,
                                                 std::uint64_t dataset_size);

}  // namespace dpbert

#endif  // DPBERT_SCHEDULES_HPP_
