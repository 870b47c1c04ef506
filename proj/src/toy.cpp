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


#include "dpbert/toy.hpp"

#include <vector>

#include "dpbert/data.hpp"
#include "dpbert/errors.hpp"
#include "dpbert/kernels.hpp"
#include "dpbert/rng.hpp"

namespace dpbert {

namespace {

using kernels::Mat;
using kernels::RowVec;

constexpr const char* kWeight = "w";

Mat<double> ln_logits(const Tensor<double>& w, std::span<const double> x,
                      kernels::LayerNormCache<double>* cache) {
  const Eigen::Map<const RowVec<double>> xr(x.data(), static_cast<Eigen::Index>(x.size()));
  const Mat<double> h = kernels::matmul_forward<double>(xr, kernels::as_matrix(w));
  const RowVec<double> gain = RowVec<double>::Ones(h.cols());
  const RowVec<double> bias = RowVec<double>::Zero(h.cols());
  return kernels::layer_norm_forward<double>(h, gain, bias, 0.0, cache);
}

}  // namespace

void ToyTask::validate() const {
  if (inputs < 1 || outputs < 2) throw ParameterError("toy: need >= 1 input and >= 2 outputs");
  if (examples < 1 || batch < 1 || batch > examples) {
    throw ParameterError("toy: batch must be in [1, examples]");
  }
  if (!(init_std > 0.0)) throw ParameterError("toy: init_std must be > 0");
}

double toy_example_gradient(const Tensor<double>& w, std::span<const double> x,
                            std::int32_t label, Tensor<double>& dw) {
  if (w.rank() != 2 || w.rows() != x.size() || !dw.same_shape(w)) {
    throw StructuralError("toy_example_gradient: shape mismatch");
  }
  kernels::LayerNormCache<double> cache;
  const Mat<double> logits = ln_logits(w, x, &cache);
  const std::int32_t labels[1] = {label};
  const auto xent = kernels::softmax_xent_forward<double>(logits, labels);
  const Mat<double> dlogits = kernels::softmax_xent_backward<double>(xent.probs, labels);
  const auto n = logits.cols();
  RowVec<double> dgain = RowVec<double>::Zero(n);
  RowVec<double> dbias = RowVec<double>::Zero(n);
  const Mat<double> dh = kernels::layer_norm_backward<double>(dlogits, cache, RowVec<double>::Ones(n),
                                                              dgain, dbias);
  const Eigen::Map<const RowVec<double>> xr(x.data(), static_cast<Eigen::Index>(x.size()));
  auto g = kernels::as_matrix(dw);
  g.noalias() = xr.transpose() * dh;
  return xent.loss;
}

ToyRunResult run_norm_toy(const ToyTask& task, const DpAdamConfig& dp, double learning_rate,
                          std::uint64_t steps, std::uint64_t seed) {
  task.validate();
  dp.validate();
  const Shape shape{task.inputs, task.outputs};

  // Frozen data: Gaussian inputs, labels from a random teacher.
  const RngStream data(seed, 0, 0, Purpose::kToyData);
  std::vector<double> xs(task.examples * task.inputs);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = data.normal(i);
  Tensor<double> teacher(shape);
  for (std::size_t i = 0; i < teacher.size(); ++i) teacher[i] = data.normal(xs.size() + i);
  std::vector<std::int32_t> labels(task.examples);
  for (std::size_t e = 0; e < task.examples; ++e) {
    const Mat<double> z = ln_logits(teacher, {xs.data() + e * task.inputs, task.inputs}, nullptr);
    Eigen::Index arg = 0;
    z.row(0).maxCoeff(&arg);
    labels[e] = static_cast<std::int32_t>(arg);
  }

  ParameterSet<double> params;
  params.add(kWeight, gaussian_noise<double>(shape, task.init_std, RngStream(seed, 0, 0, Purpose::kInit)));
  auto state = OptimizerState<double>::zeros_like(params);
  ToyRunResult out;
  out.initial_norm = global_l2_norm<double>(params.tensors());

  GradientSet<double> grad = params.zeros_like();
  for (std::uint64_t t = 1; t <= steps; ++t) {
    const auto batch = sample_batch(task.examples, task.batch, SamplingMode::kFixed,
                                    RngStream(seed, t, 0, Purpose::kSample));
    ClippedAccumulator<double> acc(params);
    for (auto e : batch) {
      toy_example_gradient(params.at(0), {xs.data() + e * task.inputs, task.inputs}, labels[e],
                           grad.at(0));
      acc.absorb(grad, dp.clip_norm);
    }
    const auto priv = privatize(acc, dp.clip_norm, dp.noise_multiplier,
                                RngStream(seed, t, 0, Purpose::kNoise));
    adam_step(state, priv.gradient, params, dp, learning_rate);
  }
  out.final_norm = global_l2_norm<double>(params.tensors());
  return out;
}

}  // namespace dpbert
