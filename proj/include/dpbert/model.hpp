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

// A reduced-scale BERT masked language model: summed word, position and
// token-type embeddings, an input layer norm, post-LN transformer encoder
// blocks with full bidirectional attention, and an untied linear MLM head
// evaluated only at masked positions.

#ifndef DPBERT_MODEL_HPP_
#define DPBERT_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dpbert/example.hpp"
#include "dpbert/kernels.hpp"
#include "dpbert/rng.hpp"
#include "dpbert/tensor.hpp"

namespace dpbert {

struct ModelConfig {
  std::size_t vocab_size = 512;
  std::size_t seq_len = 32;
  std::size_t width = 64;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t ff_width = 256;
  double ln_xi = 1e-12;
  Precision precision = Precision::kFloat32;

  // Throws ParameterError naming the violated constraint.
  void validate() const;
  std::size_t head_width() const { return width / heads; }
};

// Named tensors in a fixed insertion order. The order is part of the
// contract: noise offsets, checkpoints and norms all walk it.
template <Real T>
class ParameterSet {
 public:
  ParameterSet() = default;

  void add(std::string name, Tensor<T> tensor);

  std::size_t size() const { return tensors_.size(); }
  std::size_t num_elements() const;
  const std::vector<std::string>& names() const { return names_; }
  std::span<Tensor<T>> tensors() { return tensors_; }
  std::span<const Tensor<T>> tensors() const { return tensors_; }

  Tensor<T>& at(std::size_t i) { return tensors_[i]; }
  const Tensor<T>& at(std::size_t i) const { return tensors_[i]; }
  Tensor<T>& at(std::string_view name) { return tensors_[index_of(name)]; }
  const Tensor<T>& at(std::string_view name) const { return tensors_[index_of(name)]; }

  std::optional<std::size_t> find(std::string_view name) const;
  // ParameterError when the name is unknown.
  std::size_t index_of(std::string_view name) const;

  ParameterSet zeros_like() const;
  bool same_layout(const ParameterSet& other) const;
  void require_same_layout(const ParameterSet& other, std::string_view what) const;
  void set_zero();

  ParameterSet& operator+=(const ParameterSet& other);
  ParameterSet& operator*=(T s);
  bool operator==(const ParameterSet& other) const {
    return names_ == other.names_ && tensors_ == other.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

template <Real T>
using GradientSet = ParameterSet<T>;

// Canonical (name, shape) list for a config, in ParameterSet order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config);

// Names of the three embedding tables whose joint rescaling the input
// layer norm cancels.
inline constexpr std::string_view kWordEmbedding = "embeddings.word";
inline constexpr std::string_view kPositionEmbedding = "embeddings.position";
inline constexpr std::string_view kTokenTypeEmbedding = "embeddings.token_type";
std::vector<std::string> embedding_group();

// Truncated normal weights (std 0.02 after truncation at +-2 of the
// underlying normal), zero biases, unit layer-norm gains.
template <Real T>
ParameterSet<T> init_parameters(const ModelConfig& config, const RngStream& stream);

struct LossResult {
  double loss = 0.0;
  std::int64_t correct = 0;
  std::int64_t total_masked = 0;
};

// Throws StructuralError for malformed examples and ContractError when no
// position is masked.
void validate_example(const ModelConfig& config, const MaskedExample& example);

// Reusable forward/backward workspace for single examples. Not shareable
// between threads; parameters are only read.
template <Real T>
class MlmEngine {
 public:
  explicit MlmEngine(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  LossResult forward(const ParameterSet<T>& params, const MaskedExample& example);
  // Logits at the masked positions from the latest forward, [masked x V].
  const kernels::Mat<T>& logits() const { return logits_; }
  // Gradient of the latest forward's loss; overwrites `grads`. Must follow
  // forward() on the same params and example.
  void backward(const ParameterSet<T>& params, const MaskedExample& example,
                GradientSet<T>& grads);

 private:
  struct BlockCache {
    kernels::Mat<T> input, q, k, v, attn_out, h1, pre_act, act;
    std::vector<kernels::Mat<T>> probs;
    kernels::LayerNormCache<T> ln_attn, ln_ffn;
  };
  void check_layout(const ParameterSet<T>& params) const;

  ModelConfig config_;
  std::vector<Shape> shapes_;
  kernels::LayerNormCache<T> ln_embed_;
  std::vector<BlockCache> blocks_;
  kernels::Mat<T> final_hidden_, masked_hidden_, logits_, probs_;
  std::vector<bool> key_is_pad_;
};

template <Real T>
LossResult forward_loss(const ModelConfig& config, const ParameterSet<T>& params,
                        const MaskedExample& example);

template <Real T>
kernels::Mat<T> masked_logits(const ModelConfig& config, const ParameterSet<T>& params,
                              const MaskedExample& example);

// Exact gradient of one example's loss. NumericError names the first
// non-finite tensor (parameter, or gradient, or "loss").
template <Real T>
GradientSet<T> per_example_gradient(const ModelConfig& config, const ParameterSet<T>& params,
                                    const MaskedExample& example, LossResult* loss = nullptr);

// total correct / total masked over the dataset.
template <Real T>
double mlm_accuracy(const ModelConfig& config, const ParameterSet<T>& params,
                    std::span<const MaskedExample> dataset);

// Throws NumericError naming the first tensor holding a NaN or infinity.
template <Real T>
void require_finite(const ParameterSet<T>& set, std::string_view what);

}  // namespace dpbert

#endif  // DPBERT_MODEL_HPP_
