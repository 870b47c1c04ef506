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

#include "dpbert/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dpbert {

using kernels::Mat;
using kernels::RowVec;

namespace {

// Tensor indices in canonical order. Each block owns kPerBlock tensors.
constexpr std::size_t kWord = 0;
constexpr std::size_t kPosition = 1;
constexpr std::size_t kTokenType = 2;
constexpr std::size_t kEmbedGain = 3;
constexpr std::size_t kEmbedBias = 4;
constexpr std::size_t kFirstBlock = 5;
constexpr std::size_t kPerBlock = 16;

enum BlockSlot : std::size_t {
  kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
  kAttnGain, kAttnBias, kFfnInW, kFfnInB, kFfnOutW, kFfnOutB, kFfnGain, kFfnBias,
};

constexpr std::size_t block_index(std::size_t block, BlockSlot slot) {
  return kFirstBlock + kPerBlock * block + slot;
}

std::size_t head_weight_index(const ModelConfig& c) { return kFirstBlock + kPerBlock * c.blocks; }
std::size_t head_bias_index(const ModelConfig& c) { return head_weight_index(c) + 1; }

bool is_weight_matrix(const std::string& name) {
  return name.starts_with("embeddings.word") || name.starts_with("embeddings.position") ||
         name.starts_with("embeddings.token_type") || name.ends_with(".weight");
}

// Std of a standard normal truncated to [-2, 2].
constexpr double kTruncatedStd = 0.87962566103423978;
constexpr double kInitStd = 0.02;

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < static_cast<std::size_t>(kFirstContentToken) + 1) {
    throw ParameterError("model.vocab_size must exceed the reserved special tokens");
  }
  if (seq_len < 2) throw ParameterError("model.seq_len must be >= 2");
  if (width == 0 || heads == 0 || blocks == 0 || ff_width == 0) {
    throw ParameterError("model dimensions must be positive");
  }
  if (width % heads != 0) throw ParameterError("model.width must be divisible by model.heads");
  if (!(ln_xi >= 0.0)) throw ParameterError("model.ln_xi must be >= 0");
}

// ---------------------------------------------------------------- ParameterSet

template <Real T>
void ParameterSet<T>::add(std::string name, Tensor<T> tensor) {
  if (index_.contains(name)) throw StructuralError("duplicate parameter name " + name);
  index_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(tensor));
}

template <Real T>
std::size_t ParameterSet<T>::num_elements() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <Real T>
std::optional<std::size_t> ParameterSet<T>::find(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

template <Real T>
std::size_t ParameterSet<T>::index_of(std::string_view name) const {
  const auto i = find(name);
  if (!i) throw ParameterError("unknown parameter '" + std::string(name) + "'");
  return *i;
}

template <Real T>
ParameterSet<T> ParameterSet<T>::zeros_like() const {
  ParameterSet out;
  for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor<T>(tensors_[i].shape()));
  return out;
}

template <Real T>
bool ParameterSet<T>::same_layout(const ParameterSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (!tensors_[i].same_shape(other.tensors_[i])) return false;
  }
  return true;
}

template <Real T>
void ParameterSet<T>::require_same_layout(const ParameterSet& other,
                                          std::string_view what) const {
  if (!same_layout(other)) {
    throw StructuralError(std::string(what) + ": parameter names or shapes differ");
  }
}

template <Real T>
void ParameterSet<T>::set_zero() {
  for (auto& t : tensors_) t.fill(T{0});
}

template <Real T>
ParameterSet<T>& ParameterSet<T>::operator+=(const ParameterSet& other) {
  require_same_layout(other, "ParameterSet +=");
  for (std::size_t i = 0; i < size(); ++i) tensors_[i] += other.tensors_[i];
  return *this;
}

template <Real T>
ParameterSet<T>& ParameterSet<T>::operator*=(T s) {
  for (auto& t : tensors_) t *= s;
  return *this;
}

template <Real T>
void require_finite(const ParameterSet<T>& set, std::string_view what) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!all_finite<T>(set.at(i).values())) {
      throw NumericError(set.names()[i], std::string(what) + ": non-finite value");
    }
  }
}

// ---------------------------------------------------------------- layout / init

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.width;
  std::vector<std::pair<std::string, Shape>> out = {
      {std::string(kWordEmbedding), {c.vocab_size, d}},
      {std::string(kPositionEmbedding), {c.seq_len, d}},
      {std::string(kTokenTypeEmbedding), {2, d}},
      {"embeddings.ln.gain", {d}},
      {"embeddings.ln.bias", {d}},
  };
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    for (const char* proj : {"query", "key", "value", "output"}) {
      out.push_back({p + "attn." + proj + ".weight", {d, d}});
      out.push_back({p + "attn." + proj + ".bias", {d}});
    }
    out.push_back({p + "attn_ln.gain", {d}});
    out.push_back({p + "attn_ln.bias", {d}});
    out.push_back({p + "ffn.in.weight", {d, c.ff_width}});
    out.push_back({p + "ffn.in.bias", {c.ff_width}});
    out.push_back({p + "ffn.out.weight", {c.ff_width, d}});
    out.push_back({p + "ffn.out.bias", {d}});
    out.push_back({p + "ffn_ln.gain", {d}});
    out.push_back({p + "ffn_ln.bias", {d}});
  }
  out.push_back({"mlm.weight", {d, c.vocab_size}});
  out.push_back({"mlm.bias", {c.vocab_size}});
  return out;
}

std::vector<std::string> embedding_group() {
  return {std::string(kWordEmbedding), std::string(kPositionEmbedding),
          std::string(kTokenTypeEmbedding)};
}

template <Real T>
ParameterSet<T> init_parameters(const ModelConfig& config, const RngStream& stream) {
  ParameterSet<T> params;
  const auto shapes = parameter_shapes(config);
  const double scale = kInitStd / kTruncatedStd;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& [name, shape] = shapes[i];
    Tensor<T> t(shape);
    if (name.ends_with(".gain")) {
      t.fill(T{1});
    } else if (is_weight_matrix(name)) {
      RngCursor cur(stream.with_example(i));
      for (auto& x : t.values()) {
        double z = cur.normal();
        while (std::abs(z) > 2.0) z = cur.normal();
        x = static_cast<T>(scale * z);
      }
    }
    params.add(name, std::move(t));
  }
  return params;
}

void validate_example(const ModelConfig& config, const MaskedExample& ex) {
  const std::size_t L = config.seq_len;
  if (ex.input_ids.size() != L || ex.token_types.size() != L) {
    throw StructuralError("example length " + std::to_string(ex.input_ids.size()) +
                          " does not match model.seq_len " + std::to_string(L));
  }
  if (ex.masked_positions.size() != ex.labels.size()) {
    throw StructuralError("example has mismatched masked positions and labels");
  }
  if (ex.masked_positions.empty()) throw ContractError("example has no masked positions");
  for (std::size_t i = 0; i < L; ++i) {
    if (ex.input_ids[i] < 0 || static_cast<std::size_t>(ex.input_ids[i]) >= config.vocab_size) {
      throw StructuralError("token id out of vocabulary range");
    }
    if (ex.token_types[i] != 0 && ex.token_types[i] != 1) {
      throw StructuralError("token type must be 0 or 1");
    }
  }
  for (std::size_t i = 0; i < ex.labels.size(); ++i) {
    const auto p = ex.masked_positions[i];
    if (p < 0 || static_cast<std::size_t>(p) >= L) throw StructuralError("masked position out of range");
    if (ex.labels[i] < 0 || static_cast<std::size_t>(ex.labels[i]) >= config.vocab_size) {
      throw StructuralError("label out of vocabulary range");
    }
  }
}

// ---------------------------------------------------------------- engine

template <Real T>
MlmEngine<T>::MlmEngine(ModelConfig config) : config_(std::move(config)) {
  for (auto& [name, shape] : parameter_shapes(config_)) shapes_.push_back(shape);
  blocks_.resize(config_.blocks);
}

template <Real T>
void MlmEngine<T>::check_layout(const ParameterSet<T>& params) const {
  if (params.size() != shapes_.size()) {
    throw StructuralError("parameter set has " + std::to_string(params.size()) +
                          " tensors, model expects " + std::to_string(shapes_.size()));
  }
  for (std::size_t i = 0; i < shapes_.size(); ++i) {
    if (params.at(i).shape() != shapes_[i]) {
      throw StructuralError("parameter " + params.names()[i] + " has shape " +
                            shape_string(params.at(i).shape()) + ", expected " +
                            shape_string(shapes_[i]));
    }
  }
}

template <Real T>
LossResult MlmEngine<T>::forward(const ParameterSet<T>& p, const MaskedExample& ex) {
  using kernels::as_matrix;
  using kernels::as_row;
  check_layout(p);
  validate_example(config_, ex);
  const auto L = static_cast<Eigen::Index>(config_.seq_len);
  const auto d = static_cast<Eigen::Index>(config_.width);
  const auto dh = static_cast<Eigen::Index>(config_.head_width());
  const T xi = static_cast<T>(config_.ln_xi);
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

  key_is_pad_.assign(config_.seq_len, false);
  bool any_real_key = false;
  for (std::size_t j = 0; j < config_.seq_len; ++j) {
    key_is_pad_[j] = ex.input_ids[j] == kPadToken;
    any_real_key = any_real_key || !key_is_pad_[j];
  }
  if (!any_real_key) throw DataError("example consists only of padding");

  Mat<T> x = kernels::embedding_forward<T>(as_matrix(p.at(kWord)), ex.input_ids);
  x += as_matrix(p.at(kPosition));
  x += kernels::embedding_forward<T>(as_matrix(p.at(kTokenType)), ex.token_types);
  Mat<T> h = kernels::layer_norm_forward<T>(x, as_row(p.at(kEmbedGain)),
                                            as_row(p.at(kEmbedBias)), xi, &ln_embed_);

  for (std::size_t b = 0; b < config_.blocks; ++b) {
    BlockCache& c = blocks_[b];
    auto W = [&](BlockSlot s) { return as_matrix(p.at(block_index(b, s))); };
    auto B = [&](BlockSlot s) { return as_row(p.at(block_index(b, s))); };
    c.input = std::move(h);
    c.q.noalias() = c.input * W(kWq);
    c.q.rowwise() += B(kBq);
    c.k.noalias() = c.input * W(kWk);
    c.k.rowwise() += B(kBk);
    c.v.noalias() = c.input * W(kWv);
    c.v.rowwise() += B(kBv);
    c.probs.resize(config_.heads);
    Mat<T> context(L, d);
    for (std::size_t head = 0; head < config_.heads; ++head) {
      const auto col = static_cast<Eigen::Index>(head) * dh;
      Mat<T> scores(L, L);
      scores.noalias() = c.q.middleCols(col, dh) * c.k.middleCols(col, dh).transpose();
      scores *= inv_sqrt_dh;
      for (Eigen::Index j = 0; j < L; ++j) {
        if (key_is_pad_[static_cast<std::size_t>(j)]) {
          scores.col(j).setConstant(-std::numeric_limits<T>::infinity());
        }
      }
      c.probs[head] = kernels::softmax_rows_forward<T>(scores);
      context.middleCols(col, dh).noalias() = c.probs[head] * c.v.middleCols(col, dh);
    }
    c.attn_out = std::move(context);
    Mat<T> residual = c.input;
    residual.noalias() += c.attn_out * W(kWo);
    residual.rowwise() += B(kBo);
    c.h1 = kernels::layer_norm_forward<T>(residual, B(kAttnGain), B(kAttnBias), xi, &c.ln_attn);
    c.pre_act.noalias() = c.h1 * W(kFfnInW);
    c.pre_act.rowwise() += B(kFfnInB);
    c.act = kernels::gelu_forward<T>(c.pre_act);
    Mat<T> residual2 = c.h1;
    residual2.noalias() += c.act * W(kFfnOutW);
    residual2.rowwise() += B(kFfnOutB);
    h = kernels::layer_norm_forward<T>(residual2, B(kFfnGain), B(kFfnBias), xi, &c.ln_ffn);
  }
  final_hidden_ = std::move(h);

  const auto M = static_cast<Eigen::Index>(ex.masked_positions.size());
  masked_hidden_.resize(M, d);
  for (Eigen::Index i = 0; i < M; ++i) {
    masked_hidden_.row(i) = final_hidden_.row(ex.masked_positions[static_cast<std::size_t>(i)]);
  }
  logits_.noalias() = masked_hidden_ * as_matrix(p.at(head_weight_index(config_)));
  logits_.rowwise() += as_row(p.at(head_bias_index(config_)));
  auto xent = kernels::softmax_xent_forward<T>(logits_, ex.labels);
  probs_ = std::move(xent.probs);
  return {static_cast<double>(xent.loss), xent.correct, static_cast<std::int64_t>(M)};
}

template <Real T>
void MlmEngine<T>::backward(const ParameterSet<T>& p, const MaskedExample& ex,
                            GradientSet<T>& g) {
  using kernels::as_matrix;
  using kernels::as_row;
  check_layout(g);
  g.set_zero();
  const auto L = static_cast<Eigen::Index>(config_.seq_len);
  const auto d = static_cast<Eigen::Index>(config_.width);
  const auto dh = static_cast<Eigen::Index>(config_.head_width());
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

  // Head.
  const Mat<T> dlogits = kernels::softmax_xent_backward<T>(probs_, ex.labels);
  const auto head_w = as_matrix(p.at(head_weight_index(config_)));
  as_matrix(g.at(head_weight_index(config_))).noalias() += masked_hidden_.transpose() * dlogits;
  as_row(g.at(head_bias_index(config_))).noalias() += dlogits.colwise().sum();
  Mat<T> dh_out = Mat<T>::Zero(L, d);
  {
    const Mat<T> dmasked = dlogits * head_w.transpose();
    for (Eigen::Index i = 0; i < dmasked.rows(); ++i) {
      dh_out.row(ex.masked_positions[static_cast<std::size_t>(i)]) += dmasked.row(i);
    }
  }

  for (std::size_t bi = config_.blocks; bi-- > 0;) {
    BlockCache& c = blocks_[bi];
    auto W = [&](BlockSlot s) { return as_matrix(p.at(block_index(bi, s))); };
    auto B = [&](BlockSlot s) { return as_row(p.at(block_index(bi, s))); };
    auto dW = [&](BlockSlot s) { return as_matrix(g.at(block_index(bi, s))); };
    auto dB = [&](BlockSlot s) { return as_row(g.at(block_index(bi, s))); };

    // FFN sublayer: h = LN(h1 + act W2 + b2).
    const Mat<T> dres2 = kernels::layer_norm_backward<T>(dh_out, c.ln_ffn, B(kFfnGain),
                                                         dB(kFfnGain), dB(kFfnBias));
    dW(kFfnOutW).noalias() += c.act.transpose() * dres2;
    dB(kFfnOutB).noalias() += dres2.colwise().sum();
    Mat<T> dact(L, static_cast<Eigen::Index>(config_.ff_width));
    dact.noalias() = dres2 * W(kFfnOutW).transpose();
    const Mat<T> dpre = kernels::gelu_backward<T>(dact, c.pre_act);
    dW(kFfnInW).noalias() += c.h1.transpose() * dpre;
    dB(kFfnInB).noalias() += dpre.colwise().sum();
    Mat<T> dh1 = dres2;
    dh1.noalias() += dpre * W(kFfnInW).transpose();

    // Attention sublayer: h1 = LN(input + context Wo + bo).
    const Mat<T> dres1 = kernels::layer_norm_backward<T>(dh1, c.ln_attn, B(kAttnGain),
                                                         dB(kAttnGain), dB(kAttnBias));
    dW(kWo).noalias() += c.attn_out.transpose() * dres1;
    dB(kBo).noalias() += dres1.colwise().sum();
    Mat<T> dcontext(L, d);
    dcontext.noalias() = dres1 * W(kWo).transpose();
    Mat<T> dq(L, d), dk(L, d), dv(L, d);
    for (std::size_t head = 0; head < config_.heads; ++head) {
      const auto col = static_cast<Eigen::Index>(head) * dh;
      const Mat<T>& P = c.probs[head];
      const auto dctx = dcontext.middleCols(col, dh);
      dv.middleCols(col, dh).noalias() = P.transpose() * dctx;
      Mat<T> dP(L, L);
      dP.noalias() = dctx * c.v.middleCols(col, dh).transpose();
      Mat<T> dS = kernels::softmax_rows_backward<T>(dP, P);
      dS *= inv_sqrt_dh;
      dq.middleCols(col, dh).noalias() = dS * c.k.middleCols(col, dh);
      dk.middleCols(col, dh).noalias() = dS.transpose() * c.q.middleCols(col, dh);
    }
    Mat<T> din = dres1;
    dW(kWq).noalias() += c.input.transpose() * dq;
    dB(kBq).noalias() += dq.colwise().sum();
    din.noalias() += dq * W(kWq).transpose();
    dW(kWk).noalias() += c.input.transpose() * dk;
    dB(kBk).noalias() += dk.colwise().sum();
    din.noalias() += dk * W(kWk).transpose();
    dW(kWv).noalias() += c.input.transpose() * dv;
    dB(kBv).noalias() += dv.colwise().sum();
    din.noalias() += dv * W(kWv).transpose();
    dh_out = std::move(din);
  }

  const Mat<T> dx = kernels::layer_norm_backward<T>(
      dh_out, ln_embed_, as_row(p.at(kEmbedGain)), as_row(g.at(kEmbedGain)),
      as_row(g.at(kEmbedBias)));
  kernels::embedding_backward<T>(dx, ex.input_ids, as_matrix(g.at(kWord)));
  as_matrix(g.at(kPosition)) += dx;
  kernels::embedding_backward<T>(dx, ex.token_types, as_matrix(g.at(kTokenType)));
}

// ---------------------------------------------------------------- free functions

template <Real T>
LossResult forward_loss(const ModelConfig& config, const ParameterSet<T>& params,
                        const MaskedExample& example) {
  MlmEngine<T> engine(config);
  return engine.forward(params, example);
}

template <Real T>
Mat<T> masked_logits(const ModelConfig& config, const ParameterSet<T>& params,
                     const MaskedExample& example) {
  MlmEngine<T> engine(config);
  engine.forward(params, example);
  return engine.logits();
}

template <Real T>
GradientSet<T> per_example_gradient(const ModelConfig& config, const ParameterSet<T>& params,
                                    const MaskedExample& example, LossResult* loss) {
  MlmEngine<T> engine(config);
  const LossResult r = engine.forward(params, example);
  if (!std::isfinite(r.loss)) {
    require_finite(params, "per_example_gradient");
    throw NumericError("loss", "per_example_gradient: non-finite loss");
  }
  GradientSet<T> grads = params.zeros_like();
  engine.backward(params, example, grads);
  require_finite(grads, "per_example_gradient");
  if (loss != nullptr) *loss = r;
  return grads;
}

template <Real T>
double mlm_accuracy(const ModelConfig& config, const ParameterSet<T>& params,
                    std::span<const MaskedExample> dataset) {
  if (dataset.empty()) throw ParameterError("mlm_accuracy: empty dataset");
  MlmEngine<T> engine(config);
  std::int64_t correct = 0;
  std::int64_t total = 0;
  for (const auto& ex : dataset) {
    const LossResult r = engine.forward(params, ex);
    correct += r.correct;
    total += r.total_masked;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

#define DPBERT_INSTANTIATE_MODEL(T)                                                          \
  template class ParameterSet<T>;                                                            \
  template class MlmEngine<T>;                                                               \
  template void require_finite<T>(const ParameterSet<T>&, std::string_view);                 \
  template ParameterSet<T> init_parameters<T>(const ModelConfig&, const RngStream&);         \
  template LossResult forward_loss<T>(const ModelConfig&, const ParameterSet<T>&,            \
                                      const MaskedExample&);                                 \
  template Mat<T> masked_logits<T>(const ModelConfig&, const ParameterSet<T>&,               \
                                   const MaskedExample&);                                    \
  template GradientSet<T> per_example_gradient<T>(const ModelConfig&, const ParameterSet<T>&, \
                                                  const MaskedExample&, LossResult*);        \
  template double mlm_accuracy<T>(const ModelConfig&, const ParameterSet<T>&,                \
                                  std::span<const MaskedExample>);

DPBERT_INSTANTIATE_MODEL(float)
DPBERT_INSTANTIATE_MODEL(double)

#undef DPBERT_INSTANTIATE_MODEL

}  // namespace dpbert
