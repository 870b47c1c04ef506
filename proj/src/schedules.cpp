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

#include <string>

#include "dpbert/errors.hpp"

namespace dpbert {

std::string_view batch_kind_name(BatchKind kind) {
  return kind == BatchKind::kFixed ? "fixed" : "increasing";
}

BatchKind parse_batch_kind(std::string_view name) {
  if (name == "fixed") return BatchKind::kFixed;
  if (name == "increasing") return BatchKind::kIncreasing;
  throw ParameterError("unknown batch schedule kind '" + std::string(name) + "'");
}

void BatchSchedule::validate() const {
  if (total_steps == 0) throw ParameterError("batch schedule needs at least one step");
  if (base_size == 0 || final_size == 0) throw ParameterError("batch sizes must be >= 1");
  if (kind == BatchKind::kFixed) {
    if (base_size != final_size) {
      throw ParameterError("fixed batch schedule needs base size == final size");
    }
    return;
  }
  if (stages == 0) throw ParameterError("increasing batch schedule needs >= 1 stage");
  if (final_size < base_size) throw ParameterError("increasing schedule: final size < base size");
  if (ramp_steps > total_steps) throw ParameterError("ramp length exceeds total steps");
  if (ramp_steps < stages) throw ParameterError("ramp must have at least one step per stage");
  if ((final_size - base_size) % stages != 0) {
    throw ParameterError("(final - base) must be divisible by the number of stages");
  }
}

void LrSchedule::validate() const {
  if (!(peak > 0.0)) throw ParameterError("lr.peak must be > 0");
  if (warmup_steps == 0 || warmup_steps > total_steps) {
    throw ParameterError("lr warmup must satisfy 0 < warmup <= total steps");
  }
}

std::uint64_t batch_size_at(const BatchSchedule& s, std::uint64_t t) {
  if (t < 1 || t > s.total_steps) {
    throw ParameterError("batch_size_at: step " + std::to_string(t) + " outside [1, " +
                         std::to_string(s.total_steps) + "]");
  }
  if (s.kind == BatchKind::kFixed || t > s.ramp_steps) return s.final_size;
  // t in (stage * ramp / stages, (stage + 1) * ramp / stages].
  const std::uint64_t stage = (t * s.stages - 1) / s.ramp_steps;
  return s.base_size + stage * ((s.final_size - s.base_size) / s.stages);
}

double lr_at(const LrSchedule& s, std::uint64_t t) {
  if (t < 1 || t > s.total_steps) {
    throw ParameterError("lr_at: step " + std::to_string(t) + " outside [1, " +
                         std::to_string(s.total_steps) + "]");
  }
  if (t <= s.warmup_steps) {
    return s.peak * static_cast<double>(t) / static_cast<double>(s.warmup_steps);
  }
  const double frac = static_cast<double>(s.total_steps - t) /
                      static_cast<double>(s.total_steps - s.warmup_steps);
  return s.peak * frac * frac;
}

std::uint64_t total_examples(const BatchSchedule& s, std::uint64_t up_to_step) {
  if (up_to_step > s.total_steps) {
    throw ParameterError("total_examples: step beyond the schedule");
  }
  std::uint64_t total = 0;
  for (std::uint64_t t = 1; t <= up_to_step; ++t) total += batch_size_at(s, t);
  return total;
}

std::vector<ScheduleSegment> accounting_segments(const BatchSchedule& s,
                                                 std::uint64_t dataset_size) {
  if (dataset_size == 0) throw ParameterError("dataset size must be >= 1");
  std::vector<ScheduleSegment> out;
  std::uint64_t run_size = 0;
  for (std::uint64_t t = 1; t <= s.total_steps; ++t) {
    const std::uint64_t b = batch_size_at(s, t);
    if (!out.empty() && b == run_size) {
      ++out.back().steps;
    } else {
      out.push_back({1, static_cast<double>(b) / static_cast<double>(dataset_size)});
      run_size = b;
    }
  }
  return out;
}

}  // namespace dpbert
