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

// Forward and backward passes for the fixed kernel set the model is built
// from. Every backward returns (or accumulates) the exact gradient of its
// forward with respect to each differentiable input.

#ifndef DPBERT_KERNELS_HPP_
#define DPBERT_KERNELS_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dpbert/errors.hpp"
#include "dpbert/tensor.hpp"

namespace dpbert::kernels {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using MatRef = Eigen::Ref<Mat<T>>;
template <typename T>
using ConstMatRef = Eigen::Ref<const Mat<T>>;
template <typename T>
using RowVecRef = Eigen::Ref<RowVec<T>>;
template <typename T>
using ConstRowVecRef = Eigen::Ref<const RowVec<T>>;

// Views of a tensor as a (rows x cols) row-major matrix or a single row.
template <Real T>
Eigen::Map<Mat<T>> as_matrix(Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
template <Real T>
Eigen::Map<const Mat<T>> as_matrix(const Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
template <Real T>
Eigen::Map<RowVec<T>> as_row(Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.size())};
}
template <Real T>
Eigen::Map<const RowVec<T>> as_row(const Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.size())};
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw StructuralError(what);
}

// ---------------------------------------------------------------- matmul

template <typename T>
Mat<T> matmul_forward(const ConstMatRef<T>& a, const ConstMatRef<T>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Mat<T> c(a.rows(), b.cols());
  c.noalias() = a * b;
  return c;
}

// da = dc b^T (overwritten); db += a^T dc.
template <typename T>
void matmul_backward(const ConstMatRef<T>& dc, const ConstMatRef<T>& a,
                     const ConstMatRef<T>& b, Mat<T>* da, MatRef<T> db) {
  require(dc.rows() == a.rows() && dc.cols() == b.cols() && a.cols() == b.rows(),
          "matmul_backward: shape mismatch");
  require(db.rows() == b.rows() && db.cols() == b.cols(), "matmul_backward: db shape");
  if (da != nullptr) da->noalias() = dc * b.transpose();
  db.noalias() += a.transpose() * dc;
}

// ---------------------------------------------------------------- bias add

template <typename T>
void bias_add_forward(MatRef<T> x, const ConstRowVecRef<T>& bias) {
  require(x.cols() == bias.cols(), "bias_add: width mismatch");
  x.rowwise() += bias;
}

// dx = dy passes through unchanged; dbias += column sums of dy.
template <typename T>
void bias_add_backward(const ConstMatRef<T>& dy, RowVecRef<T> dbias) {
  require(dy.cols() == dbias.cols(), "bias_add_backward: width mismatch");
  dbias.noalias() += dy.colwise().sum();
}

// ---------------------------------------------------------------- GELU (tanh)

template <typename T>
T gelu(T x) {
  constexpr T k = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = static_cast<T>(0.044715);
  return T(0.5) * x * (T(1) + std::tanh(k * (x + c * x * x * x)));
}

template <typename T>
T gelu_derivative(T x) {
  constexpr T k = static_cast<T>(0.7978845608028654);
  constexpr T c = static_cast<T>(0.044715);
  const T th = std::tanh(k * (x + c * x * x * x));
  return T(0.5) * (T(1) + th) +
         T(0.5) * x * (T(1) - th * th) * k * (T(1) + T(3) * c * x * x);
}

template <typename T>
Mat<T> gelu_forward(const ConstMatRef<T>& x) {
  return x.unaryExpr([](T v) { return gelu(v); });
}

template <typename T>
Mat<T> gelu_backward(const ConstMatRef<T>& dy, const ConstMatRef<T>& x) {
  require(dy.rows() == x.rows() && dy.cols() == x.cols(), "gelu_backward: shape mismatch");
  return dy.cwiseProduct(x.unaryExpr([](T v) { return gelu_derivative(v); }));
}

// ---------------------------------------------------------------- row softmax

// Softmax along each row. -inf entries get probability 0; a row must keep
// at least one finite entry.
template <typename T>
Mat<T> softmax_rows_forward(const ConstMatRef<T>& x) {
  require(x.cols() > 0, "softmax: empty axis");
  Mat<T> p(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mx = x.row(r).maxCoeff();
    p.row(r) = (x.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

// dx = p * (dy - rowsum(dy * p)).
template <typename T>
Mat<T> softmax_rows_backward(const ConstMatRef<T>& dy, const ConstMatRef<T>& p) {
  require(dy.rows() == p.rows() && dy.cols() == p.cols(), "softmax_backward: shape mismatch");
  Mat<T> dx(p.rows(), p.cols());
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const T dot = dy.row(r).dot(p.row(r));
    dx.row(r) = p.row(r).cwiseProduct((dy.row(r).array() - dot).matrix());
  }
  return dx;
}

// ---------------------------------------------------------------- softmax + cross-entropy

template <typename T>
struct SoftmaxXentResult {
  T loss = 0;       // mean over rows
  Mat<T> probs;     // softmax of the logits, kept for the backward pass
  std::int64_t correct = 0;  // rows whose argmax equals the label
};

template <typename T>
SoftmaxXentResult<T> softmax_xent_forward(const ConstMatRef<T>& logits,
                                          std::span<const std::int32_t> labels) {
  require(logits.cols() > 0, "softmax_xent: empty class axis");
  require(logits.rows() > 0, "softmax_xent: no rows");
  require(static_cast<std::size_t>(logits.rows()) == labels.size(),
          "softmax_xent: label count mismatch");
  SoftmaxXentResult<T> out;
  out.probs.resize(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto label = labels[static_cast<std::size_t>(r)];
    require(label >= 0 && label < logits.cols(), "softmax_xent: label out of range");
    Eigen::Index arg = 0;
    const T mx = logits.row(r).maxCoeff(&arg);
    out.probs.row(r) = (logits.row(r).array() - mx).exp();
    const T z = out.probs.row(r).sum();
    out.probs.row(r) /= z;
    total += static_cast<double>(std::log(z) - (logits(r, label) - mx));
    if (arg == label) ++out.correct;
  }
  out.loss = static_cast<T>(total / static_cast<double>(logits.rows()));
  return out;
}

// Gradient of the mean loss: (p - onehot) / rows.
template <typename T>
Mat<T> softmax_xent_backward(const ConstMatRef<T>& probs, std::span<const std::int32_t> labels) {
  require(static_cast<std::size_t>(probs.rows()) == labels.size(),
          "softmax_xent_backward: label count mismatch");
  Mat<T> d = probs;
  for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, labels[static_cast<std::size_t>(r)]) -= T(1);
  d /= static_cast<T>(d.rows());
  return d;
}

// ---------------------------------------------------------------- layer norm

// y = gain * (x - mean) / (sqrt(var) + xi) + bias, per row, with the
// population variance. xi = 0 makes each row exactly invariant to positive
// rescaling.
template <typename T>
struct LayerNormCache {
  Mat<T> centered;   // x - mean
  Mat<T> normed;     // centered / denom
  std::vector<T> stddev;
  std::vector<T> denom;  // stddev + xi
};

template <typename T>
Mat<T> layer_norm_forward(const ConstMatRef<T>& x, const ConstRowVecRef<T>& gain,
                          const ConstRowVecRef<T>& bias, T xi, LayerNormCache<T>* cache) {
  require(x.cols() == gain.cols() && x.cols() == bias.cols(), "layer_norm: width mismatch");
  require(x.cols() > 0, "layer_norm: empty row");
  if (!(xi >= T(0))) throw ParameterError("layer_norm: xi must be >= 0");
  const auto n = static_cast<T>(x.cols());
  LayerNormCache<T> local;
  LayerNormCache<T>& c = cache != nullptr ? *cache : local;
  c.centered = x.colwise() - x.rowwise().mean();
  c.normed.resize(x.rows(), x.cols());
  c.stddev.resize(static_cast<std::size_t>(x.rows()));
  c.denom.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T var = c.centered.row(r).squaredNorm() / n;
    const T sd = std::sqrt(var);
    const T den = sd + xi;
    c.stddev[static_cast<std::size_t>(r)] = sd;
    c.denom[static_cast<std::size_t>(r)] = den;
    c.normed.row(r) = c.centered.row(r) / den;
  }
  Mat<T> y = c.normed.array().rowwise() * gain.array();
  y.rowwise() += bias;
  return y;
}

// Returns dx; accumulates into dgain and dbias.
template <typename T>
Mat<T> layer_norm_backward(const ConstMatRef<T>& dy, const LayerNormCache<T>& c,
                           const ConstRowVecRef<T>& gain, RowVecRef<T> dgain,
                           RowVecRef<T> dbias) {
  require(dy.rows() == c.normed.rows() && dy.cols() == c.normed.cols(),
          "layer_norm_backward: shape mismatch");
  const auto n = static_cast<T>(dy.cols());
  dgain.noalias() += dy.cwiseProduct(c.normed).colwise().sum();
  dbias.noalias() += dy.colwise().sum();
  const Mat<T> dn = dy.array().rowwise() * gain.array();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T den = c.denom[static_cast<std::size_t>(r)];
    const T sd = c.stddev[static_cast<std::size_t>(r)];
    const T mean_dn = dn.row(r).mean();
    dx.row(r) = (dn.row(r).array() - mean_dn) / den;
    if (sd > T(0)) {
      // d(stddev)/dx = centered / (n * stddev).
      const T proj = dn.row(r).dot(c.centered.row(r));
      dx.row(r) -= c.centered.row(r) * (proj / (n * sd * den * den));
    }
  }
  return dx;
}

// ---------------------------------------------------------------- embedding gather

template <typename T>
Mat<T> embedding_forward(const ConstMatRef<T>& table, std::span<const std::int32_t> ids) {
  Mat<T> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table.rows(), "embedding: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  }
  return out;
}

// Scatter-adds dy rows into dtable.
template <typename T>
void embedding_backward(const ConstMatRef<T>& dy, std::span<const std::int32_t> ids,
                        MatRef<T> dtable) {
  require(static_cast<std::size_t>(dy.rows()) == ids.size() && dy.cols() == dtable.cols(),
          "embedding_backward: shape mismatch");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    dtable.row(ids[i]) += dy.row(static_cast<Eigen::Index>(i));
  }
}

}  // namespace dpbert::kernels

#endif  // DPBERT_KERNELS_HPP_
