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

#include "dpbert/accountant.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "dpbert/errors.hpp"

namespace dpbert {

namespace {

constexpr int kMaxOrder = 256;

const std::array<double, kMaxOrder + 1>& log_factorials() {
  static const auto table = [] {
    std::array<double, kMaxOrder + 1> t{};
    for (int i = 0; i <= kMaxOrder; ++i) t[i] = std::lgamma(static_cast<double>(i) + 1.0);
    return t;
  }();
  return table;
}

double log_binomial(int n, int k) {
  const auto& lf = log_factorials();
  return lf[n] - lf[k] - lf[n - k];
}

// log(exp(c) - 1) for c > 0.
double log_expm1(double c) {
  return c > 30.0 ? c + std::log1p(-std::exp(-c)) : std::log(std::expm1(c));
}

// log(1 + exp(x)).
double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double log_sum_exp(const std::vector<double>& xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

void check_order(int order) {
  if (order < 2) throw ParameterError("RDP order must be >= 2");
  if (order > kMaxOrder) throw ParameterError("RDP order must be <= 256");
}

// Consecutive segments with the same q fused; zero-step segments dropped.
std::vector<ScheduleSegment> normalized(std::span<const ScheduleSegment> segments) {
  std::vector<ScheduleSegment> out;
  for (const auto& s : segments) {
    if (s.steps == 0) continue;
    if (!out.empty() && out.back().q == s.q) {
      out.back().steps += s.steps;
    } else {
      out.push_back(s);
    }
  }
  return out;
}

void check_segments(std::span<const ScheduleSegment> segments) {
  for (const auto& s : segments) {
    if (!(s.q >= 0.0 && s.q <= 1.0)) throw ParameterError("sampling probability q must be in [0, 1]");
  }
}

}  // namespace

const std::vector<int>& default_orders() {
  static const std::vector<int> orders = [] {
    std::vector<int> o;
    for (int a = 2; a <= kMaxOrder; ++a) o.push_back(a);
    return o;
  }();
  return orders;
}

// The binomial weights sum to one, so
//   sum_k w_k exp(c_k) = 1 + sum_{k>=2} w_k (exp(c_k) - 1)
// with c_k = (k^2 - k) / (2 sigma^2) (c_0 = c_1 = 0). Working with the excess
// keeps full relative precision when q is tiny and never overflows.
double rdp_subsampled_gaussian(double q, double noise_multiplier, int order) {
  check_order(order);
  if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("sampling probability q must be in [0, 1]");
  if (!(noise_multiplier > 0.0)) throw ParameterError("noise multiplier must be > 0");
  if (q == 0.0) return 0.0;
  const double two_var = 2.0 * noise_multiplier * noise_multiplier;
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(order));
  for (int k = 2; k <= order; ++k) {
    if (q == 1.0 && k < order) continue;
    const double c = static_cast<double>(k) * static_cast<double>(k - 1) / two_var;
    double log_w = log_binomial(order, k) + k * log_q;
    if (k < order) log_w += (order - k) * log_1mq;
    terms.push_back(log_w + log_expm1(c));
  }
  const double value = softplus(log_sum_exp(terms)) / static_cast<double>(order - 1);
  return std::max(value, 0.0);
}

RdpCurve rdp_subsampled_gaussian_curve(double q, double noise_multiplier,
                                       std::span<const int> orders) {
  RdpCurve curve{{orders.begin(), orders.end()}, {}};
  curve.values.reserve(orders.size());
  for (int a : orders) curve.values.push_back(rdp_subsampled_gaussian(q, noise_multiplier, a));
  return curve;
}

std::uint64_t AccountingParams::total_steps() const {
  std::uint64_t t = 0;
  for (const auto& s : segments) t += s.steps;
  return t;
}

double AccountingParams::resolved_delta() const {
  if (delta > 0.0) return delta;
  if (dataset_size == 0) throw ParameterError("privacy.delta unset and dataset size is zero");
  return 1.0 / static_cast<double>(dataset_size);
}

void AccountingParams::validate() const {
  if (!(noise_multiplier > 0.0)) throw ParameterError("noise multiplier must be > 0");
  const double d = resolved_delta();
  if (!(d > 0.0 && d < 1.0)) throw ParameterError("delta must be in (0, 1)");
  check_segments(segments);
}

RdpCurve compose_schedule(const AccountingParams& params, std::span<const int> orders) {
  check_segments(params.segments);
  for (int a : orders) check_order(a);
  const auto segs = normalized(params.segments);
  RdpCurve total{{orders.begin(), orders.end()}, std::vector<double>(orders.size(), 0.0)};
  if (segs.empty()) return total;
  if (!(params.noise_multiplier > 0.0)) throw ParameterError("noise multiplier must be > 0");
  std::map<double, RdpCurve> per_step;
  for (const auto& s : segs) {
    auto it = per_step.find(s.q);
    if (it == per_step.end()) {
      it = per_step.emplace(s.q, rdp_subsampled_gaussian_curve(s.q, params.noise_multiplier, orders))
               .first;
    }
    const auto steps = static_cast<double>(s.steps);
    for (std::size_t i = 0; i < orders.size(); ++i) total.values[i] += steps * it->second.values[i];
  }
  return total;
}

PrivacyReport rdp_to_dp(const RdpCurve& curve, double delta) {
  if (curve.orders.empty() || curve.orders.size() != curve.values.size()) {
    throw ParameterError("rdp_to_dp: empty or malformed RDP curve");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("rdp_to_dp: delta must be in (0, 1)");
  const double log_inv_delta = -std::log(delta);
  PrivacyReport report;
  report.delta = delta;
  report.curve = curve;
  report.epsilon = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < curve.orders.size(); ++i) {
    check_order(curve.orders[i]);
    const double eps =
        curve.values[i] + log_inv_delta / static_cast<double>(curve.orders[i] - 1);
    if (eps < report.epsilon) {
      report.epsilon = eps;
      report.optimal_order = curve.orders[i];
    }
  }
  return report;
}

PrivacyReport account(const AccountingParams& params, std::span<const int> orders) {
  params.validate();
  PrivacyReport report = rdp_to_dp(compose_schedule(params, orders), params.resolved_delta());
  report.approximate = params.fixed_size_sampling;
  // No step has touched data: the empty mechanism is (0, 0)-DP.
  if (params.total_steps() == 0) {
    report.epsilon = 0.0;
    report.optimal_order = report.curve.orders.front();
    return report;
  }
  for (const auto& s : normalized(params.segments)) {
    report.segments.push_back(
        {s, static_cast<double>(s.steps) *
                rdp_subsampled_gaussian(s.q, params.noise_multiplier, report.optimal_order)});
  }
  return report;
}

std::vector<ScheduleSegment> truncate_schedule(std::span<const ScheduleSegment> segments,
                                               std::uint64_t t) {
  std::vector<ScheduleSegment> out;
  std::uint64_t remaining = t;
  for (const auto& s : segments) {
    if (remaining == 0) break;
    const std::uint64_t take = std::min(remaining, s.steps);
    out.push_back({take, s.q});
    remaining -= take;
  }
  if (remaining > 0) throw ParameterError("step " + std::to_string(t) + " is beyond the schedule");
  return out;
}

double epsilon_at_step(const AccountingParams& params, std::uint64_t t,
                       std::span<const int> orders) {
  AccountingParams head = params;
  head.segments = truncate_schedule(params.segments, t);
  head.validate();
  if (t == 0) return 0.0;
  return rdp_to_dp(compose_schedule(head, orders), head.resolved_delta()).epsilon;
}

double calibrate_sigma(double target_epsilon, double delta,
                       std::span<const ScheduleSegment> segments, double tolerance,
                       CalibrationBracket bracket, std::span<const int> orders) {
  if (!(target_epsilon > 0.0)) throw ParameterError("calibrate: target epsilon must be > 0");
  if (!(tolerance > 0.0)) throw ParameterError("calibrate: tolerance must be > 0");
  if (!(bracket.lo > 0.0 && bracket.hi > bracket.lo)) {
    throw ParameterError("calibrate: bracket must satisfy 0 < lo < hi");
  }
  AccountingParams params;
  params.segments.assign(segments.begin(), segments.end());
  params.delta = delta;
  auto eps_at = [&](double sigma) {
    params.noise_multiplier = sigma;
    params.validate();
    return rdp_to_dp(compose_schedule(params, orders), delta).epsilon;
  };
  const double eps_lo = eps_at(bracket.lo);
  const double eps_hi = eps_at(bracket.hi);
  auto unreachable = [&] {
    std::ostringstream os;
    os.precision(10);
    os << "target epsilon " << target_epsilon << " unreachable in sigma bracket [" << bracket.lo
       << ", " << bracket.hi << "]: epsilon ranges from " << eps_lo << " (sigma=" << bracket.lo
       << ") to " << eps_hi << " (sigma=" << bracket.hi << ")";
    return CalibrationError(os.str());
  };
  if (eps_hi > target_epsilon) {
    if (eps_hi - target_epsilon <= tolerance) return bracket.hi;
    throw unreachable();
  }
  if (eps_lo <= target_epsilon) {
    if (target_epsilon - eps_lo <= tolerance) return bracket.lo;
    throw unreachable();
  }
  double lo = bracket.lo;
  double hi = bracket.hi;
  for (int iter = 0; iter < 200 && hi - lo > 1e-13 * hi; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (eps_at(mid) > target_epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  if (std::abs(eps_at(hi) - target_epsilon) > tolerance) throw unreachable();
  return hi;
}

RunningAccountant::RunningAccountant(double noise_multiplier, double delta,
                                     std::span<const int> orders)
    : noise_multiplier_(noise_multiplier), delta_(delta), orders_(orders.begin(), orders.end()) {
  if (!(noise_multiplier > 0.0)) throw ParameterError("noise multiplier must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("delta must be in (0, 1)");
}

void RunningAccountant::record_steps(double q, std::uint64_t steps) {
  if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("sampling probability q must be in [0, 1]");
  if (steps == 0) return;
  if (!segments_.empty() && segments_.back().q == q) {
    segments_.back().steps += steps;
  } else {
    segments_.push_back({steps, q});
  }
  if (!per_step_.contains(q)) {
    per_step_.emplace(q, rdp_subsampled_gaussian_curve(q, noise_multiplier_, orders_).values);
  }
  steps_ += steps;
}

// Same arithmetic, in the same order, as compose_schedule + rdp_to_dp.
double RunningAccountant::epsilon() const {
  if (steps_ == 0) return 0.0;
  RdpCurve total{orders_, std::vector<double>(orders_.size(), 0.0)};
  for (const auto& s : segments_) {
    const auto& v = per_step_.at(s.q);
    const auto steps = static_cast<double>(s.steps);
    for (std::size_t i = 0; i < orders_.size(); ++i) total.values[i] += steps * v[i];
  }
  return rdp_to_dp(total, delta_).epsilon;
}

}  // namespace dpbert
