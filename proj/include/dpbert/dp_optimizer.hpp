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

// DP-SGD with Adam and decoupled weight decay:
//
//   g_t = (N(0, sigma^2 C^2 I) + sum_j clip(grad_j, C)) / |B_t|
//   m_t = b1 m_{t-1} + (1 - b1) g_t,   v_t = b2 v_{t-1} + (1 - b2) g_t^2
//   theta_t = theta_{t-1} - lr_t (m_hat / (sqrt(v_hat) + xi) + lambda theta_{t-1})
//
// Clipped per-example gradients stream through a ClippedAccumulator, so a
// batch of any size costs one gradient-sized buffer.

#ifndef DPBERT_DP_OPTIMIZER_HPP_
#define DPBERT_DP_OPTIMIZER_HPP_

#include <cstdint>
#include <optional>
#include <vector>

#include "dpbert/model.hpp"
#include "dpbert/rng.hpp"

namespace dpbert {

struct DpAdamConfig {
  double clip_norm = 3.2429e-3;
  double noise_multiplier = 1.0;
  double beta1 = 0.75;
  double beta2 = 0.9;
  double weight_decay = 1.0;
  double adam_xi = 1e-11;

  void validate() const;
};

template <Real T>
struct OptimizerState {
  std::uint64_t step = 0;
  ParameterSet<T> m;
  ParameterSet<T> v;

  static OptimizerState zeros_like(const ParameterSet<T>& params) {
    return {0, params.zeros_like(), params.zeros_like()};
  }
  bool operator==(const OptimizerState&) const = default;
};

template <Real T>
class ClippedAccumulator {
 public:
  explicit ClippedAccumulator(const ParameterSet<T>& layout)
      : sum_(layout.zeros_like()) {}

  // sum += clip(grad, C); count += 1. `grad` is clipped in place.
  void absorb(GradientSet<T>& grad, double clip_norm);
  // Sum of sums, sum of counts.
  void merge(const ClippedAccumulator& other);

  const GradientSet<T>& sum() const { return sum_; }
  std::uint64_t count() const { return count_; }

 private:
  GradientSet<T> sum_;
  std::uint64_t count_ = 0;
};

// Functional form of ClippedAccumulator::absorb.
template <Real T>
ClippedAccumulator<T> accumulate_clipped(ClippedAccumulator<T> acc, GradientSet<T> grad,
                                         double clip_norm) {
  acc.absorb(grad, clip_norm);
  return acc;
}

// Pairwise merge in a fixed tree order: ((0,1),(2,3)),... The result
// depends only on the shard list, never on which thread produced a shard.
template <Real T>
ClippedAccumulator<T> tree_merge(std::vector<ClippedAccumulator<T>> shards);

// Norms behind the gradient signal-to-noise ratio of one step.
struct SnrRecord {
  std::uint64_t step = 0;
  std::uint64_t count = 0;
  double signal_norm = 0.0;  // ||sum of clipped gradients||
  double noise_norm = 0.0;   // ||z||, z ~ N(0, sigma^2 C^2 I)
  std::optional<double> ratio;  // empty when noise_norm == 0
};

template <Real T>
struct Privatized {
  GradientSet<T> gradient;
  SnrRecord snr;
};

// g_t = (z + acc.sum) / acc.count. Noise coordinate k of the flattened
// parameter list is draw k of `stream`. ContractError when acc is empty.
template <Real T>
Privatized<T> privatize(const ClippedAccumulator<T>& acc, double clip_norm,
                        double noise_multiplier, const RngStream& stream);

// As privatize, with an explicit positive denominator in place of the
// example count. Lets a caller take a noise-only step on an empty
// Poisson batch.
template <Real T>
Privatized<T> privatize_with_denominator(const ClippedAccumulator<T>& acc, double denominator,
                                         double clip_norm, double noise_multiplier,
                                         const RngStream& stream);

// One Adam step with decoupled weight decay on theta_{t-1}. Increments
// state.step first. NumericError if g_t holds a non-finite value.
template <Real T>
void adam_step(OptimizerState<T>& state, const GradientSet<T>& gradient,
               ParameterSet<T>& params, const DpAdamConfig& config, double learning_rate);

}  // namespace dpbert

#endif  // DPBERT_DP_OPTIMIZER_HPP_
