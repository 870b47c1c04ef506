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

// Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism over
// schedules whose sampling rate changes between segments.
//
// Per step, at integer order a >= 2:
//   eps(a) = log( sum_{k=0..a} C(a,k) (1-q)^(a-k) q^k exp((k^2-k)/(2 s^2)) ) / (a-1)
// Steps compose by summing eps(a); conversion to (eps, delta)-DP takes
//   min_a eps_total(a) + log(1/delta)/(a-1).

#ifndef DPBERT_ACCOUNTANT_HPP_
#define DPBERT_ACCOUNTANT_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dpbert {

// Integer orders 2..256.
const std::vector<int>& default_orders();

struct RdpCurve {
  std::vector<int> orders;
  std::vector<double> values;

  bool operator==(const RdpCurve&) const = default;
};

struct ScheduleSegment {
  std::uint64_t steps = 0;
  double q = 0.0;  // sampling probability for each step of the segment

  bool operator==(const ScheduleSegment&) const = default;
};

struct AccountingParams {
  std::uint64_t dataset_size = 0;
  std::vector<ScheduleSegment> segments;
  double noise_multiplier = 1.0;
  double delta = 0.0;  // 0 means 1/dataset_size
  // Set when batches are drawn with a fixed size; the Poisson analysis is
  // then only an approximation and every report says so.
  bool fixed_size_sampling = false;

  std::uint64_t total_steps() const;
  double resolved_delta() const;
  void validate() const;
};

struct SegmentContribution {
  ScheduleSegment segment;
  double rdp_at_optimal_order = 0.0;
};

struct PrivacyReport {
  double epsilon = 0.0;
  int optimal_order = 0;
  double delta = 0.0;
  RdpCurve curve;
  std::vector<SegmentContribution> segments;
  bool approximate = false;
};

// ParameterError for order < 2, q outside [0, 1], or sigma <= 0.
double rdp_subsampled_gaussian(double q, double noise_multiplier, int order);

RdpCurve rdp_subsampled_gaussian_curve(double q, double noise_multiplier,
                                       std::span<const int> orders);

// Per order: sum over segments (in order) of steps * per-step value.
// Identical q values share one per-step evaluation.
RdpCurve compose_schedule(const AccountingParams& params, std::span<const int> orders);

// ParameterError on an empty curve or delta outside (0, 1). Ties go to the
// smaller order.
PrivacyReport rdp_to_dp(const RdpCurve& curve, double delta);

// Full report for a schedule, per-segment contributions filled in.
PrivacyReport account(const AccountingParams& params,
                      std::span<const int> orders = default_orders());

// First `t` steps of the schedule. ParameterError when t > total steps.
std::vector<ScheduleSegment> truncate_schedule(std::span<const ScheduleSegment> segments,
                                               std::uint64_t t);

double epsilon_at_step(const AccountingParams& params, std::uint64_t t,
                       std::span<const int> orders = default_orders());

struct CalibrationBracket {
  double lo = 0.3;
  double hi = 100.0;
};

// Bisection on sigma (epsilon is strictly decreasing in sigma). Returns the
// smallest sigma, to bisection precision, whose epsilon does not exceed
// the target; CalibrationError when the target is outside what the
// bracket can reach within `tolerance`.
double calibrate_sigma(double target_epsilon, double delta,
                       std::span<const ScheduleSegment> segments, double tolerance,
                       CalibrationBracket bracket = {},
                       std::span<const int> orders = default_orders());

// Running epsilon for a training loop: caches one per-step curve per
// distinct q, accumulates as steps are recorded.
class RunningAccountant {
 public:
  RunningAccountant(double noise_multiplier, double delta,
                    std::span<const int> orders = default_orders());

  void record_steps(double q, std::uint64_t steps);
  double epsilon() const;
  std::uint64_t steps() const { return steps_; }
  const std::vector<ScheduleSegment>& segments() const { return segments_; }

 private:
  double noise_multiplier_;
  double delta_;
  std::vector<int> orders_;
  std::vector<ScheduleSegment> segments_;
  std::map<double, std::vector<double>> per_step_;
  std::uint64_t steps_ = 0;
};

}  // namespace dpbert

#endif  // DPBERT_ACCOUNTANT_HPP_
