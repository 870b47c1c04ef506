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


// A frozen scale-invariant toy task: logits = LN(x W) with no affine and
// epsilon 0, so rescaling W leaves the loss unchanged. Used to watch how
// DP-Adam moves ||W||_F.

#ifndef DPBERT_TOY_HPP_
#define DPBERT_TOY_HPP_

#include <cstdint>
#include <span>

#include "dpbert/dp_optimizer.hpp"
#include "dpbert/tensor.hpp"

namespace dpbert {

struct ToyTask {
  std::size_t inputs = 16;
  std::size_t outputs = 8;
  std::size_t examples = 256;
  std::size_t batch = 32;
  double init_std = 0.02;

  void validate() const;
};

// Loss of one example; writes dLoss/dW (inputs x outputs) into `dw`.
double toy_example_gradient(const Tensor<double>& w, std::span<const double> x,
                            std::int32_t label, Tensor<double>& dw);

struct ToyRunResult {
  double initial_norm = 0.0;
  double final_norm = 0.0;
};

// Fixed-size batches, clipping, Gaussian noise and DP-Adam at a constant
// learning rate. Data, labels (from a random teacher) and W all derive
// from `seed`.
ToyRunResult run_norm_toy(const ToyTask& task, const DpAdamConfig& dp, double learning_rate,
                          std::uint64_t steps, std::uint64_t seed);

}  // namespace dpbert

#endif  // DPBERT_TOY_HPP_
