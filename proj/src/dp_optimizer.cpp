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

#include "dpbert/dp_optimizer.hpp"

#include <cmath>

#include "dpbert/instrumentation.hpp"

namespace dpbert {

void DpAdamConfig::validate() const {
  if (!(clip_norm > 0.0)) throw ParameterError("dp.clip_norm must be > 0");
  if (!(noise_multiplier >= 0.0)) throw ParameterError("dp.noise_multiplier must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ParameterError("dp.beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ParameterError("dp.beta2 must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ParameterError("dp.weight_decay must be >= 0");
  if (!(adam_xi >= 0.0)) throw ParameterError("dp.adam_xi must be >= 0");
}

template <Real T>
void ClippedAccumulator<T>::absorb(GradientSet<T>& grad, double clip_norm) {
  sum_.require_same_layout(grad, "accumulate_clipped");
  clip_in_place<T>(grad.tensors(), clip_norm);
  sum_ += grad;
  ++count_;
}

template <Real T>
void ClippedAccumulator<T>::merge(const ClippedAccumulator& other) {
  sum_ += other.sum_;
  count_ += other.count_;
}

template <Real T>
ClippedAccumulator<T> tree_merge(std::vector<ClippedAccumulator<T>> shards) {
  if (shards.empty()) throw ContractError("tree_merge: no shards");
  while (shards.size() > 1) {
    std::vector<ClippedAccumulator<T>> next;
    next.reserve((shards.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < shards.size(); i += 2) {
      shards[i].merge(shards[i + 1]);
      next.push_back(std::move(shards[i]));
    }
    if (shards.size() % 2 == 1) next.push_back(std::move(shards.back()));
    shards = std::move(next);
  }
  return std::move(shards.front());
}

template <Real T>
Privatized<T> privatize_with_denominator(const ClippedAccumulator<T>& acc, double denominator,
                                         double clip_norm, double noise_multiplier,
                                         const RngStream& stream) {
  if (!(denominator > 0.0)) throw ContractError("privatize: denominator must be > 0");
  if (!(clip_norm > 0.0)) throw ParameterError("privatize: C must be > 0");
  if (!(noise_multiplier >= 0.0)) throw ParameterError("privatize: sigma must be >= 0");
  const double scale = noise_multiplier * clip_norm;
  const GradientSet<T>& sum = acc.sum();
  Privatized<T> out{sum.zeros_like(), {}};
  double noise_sq = 0.0;
  std::uint64_t offset = 0;
  const T inv = static_cast<T>(1.0 / denominator);
  for (std::size_t i = 0; i < sum.size(); ++i) {
    const Tensor<T>& s = sum.at(i);
    Tensor<T> z = gaussian_noise<T>(s.shape(), scale, stream, offset);
    offset += s.size();
    Tensor<T>& g = out.gradient.at(i);
    for (std::size_t k = 0; k < s.size(); ++k) {
      noise_sq += static_cast<double>(z[k]) * static_cast<double>(z[k]);
      g[k] = (z[k] + s[k]) * inv;
    }
  }
  out.snr.step = stream.step();
  out.snr.count = acc.count();
  out.snr.signal_norm = global_l2_norm<T>(sum.tensors());
  out.snr.noise_norm = std::sqrt(noise_sq);
  out.snr.ratio = gradient_snr(out.snr.signal_norm, out.snr.noise_norm);
  return out;
}

template <Real T>
Privatized<T> privatize(const ClippedAccumulator<T>& acc, double clip_norm,
                        double noise_multiplier, const RngStream& stream) {
  if (acc.count() == 0) throw ContractError("privatize: accumulator holds no examples");
  return privatize_with_denominator(acc, static_cast<double>(acc.count()), clip_norm,
                                    noise_multiplier, stream);
}

template <Real T>
void adam_step(OptimizerState<T>& state, const GradientSet<T>& gradient,
               ParameterSet<T>& params, const DpAdamConfig& config, double learning_rate) {
  params.require_same_layout(gradient, "adam_step");
  params.require_same_layout(state.m, "adam_step (first moment)");
  params.require_same_layout(state.v, "adam_step (second moment)");
  require_finite(gradient, "adam_step gradient");
  if (!(learning_rate >= 0.0)) throw ParameterError("adam_step: learning rate must be >= 0");
  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  const T c1 = static_cast<T>(1.0 - config.beta1);
  const T c2 = static_cast<T>(1.0 - config.beta2);
  const T bias1 = static_cast<T>(1.0 / (1.0 - std::pow(config.beta1, t)));
  const T bias2 = static_cast<T>(1.0 / (1.0 - std::pow(config.beta2, t)));
  const T lr = static_cast<T>(learning_rate);
  const T decay = static_cast<T>(config.weight_decay);
  const T xi = static_cast<T>(config.adam_xi);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* theta = params.at(i).data();
    T* m = state.m.at(i).data();
    T* v = state.v.at(i).data();
    const T* g = gradient.at(i).data();
    const std::size_t n = params.at(i).size();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + c1 * g[k];
      v[k] = b2 * v[k] + c2 * g[k] * g[k];
      const T m_hat = m[k] * bias1;
      const T v_hat = v[k] * bias2;
      theta[k] -= lr * (m_hat / (std::sqrt(v_hat) + xi) + decay * theta[k]);
    }
  }
}

#define DPBERT_INSTANTIATE_DP(T)                                                              \
  template class ClippedAccumulator<T>;                                                       \
  template ClippedAccumulator<T> tree_merge<T>(std::vector<ClippedAccumulator<T>>);           \
  template Privatized<T> privatize<T>(const ClippedAccumulator<T>&, double, double,          \
                                      const RngStream&);                                      \
  template Privatized<T> privatize_with_denominator<T>(const ClippedAccumulator<T>&, double,  \
                                                       double, double, const RngStream&);     \
  template void adam_step<T>(OptimizerState<T>&, const GradientSet<T>&, ParameterSet<T>&,    \
                             const DpAdamConfig&, double);

DPBERT_INSTANTIATE_DP(float)
DPBERT_INSTANTIATE_DP(double)

#undef DPBERT_INSTANTIATE_DP

}  // namespace dpbert
