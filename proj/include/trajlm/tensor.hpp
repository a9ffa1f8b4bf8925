// Copyright 2026 The trajlm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "trajlm/common.hpp"

namespace trajlm {

/// Dense row-major matrix. Rows are contiguous so a single row can be handed
/// to the row kernels below.
template <class Real>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  Real* row(std::size_t r) { return data_.data() + r * cols_; }
  const Real* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::vector<Real>& values() { return data_; }
  const std::vector<Real>& values() const { return data_; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  /// Keeps the first min(rows, n) rows; new rows are zero.
  void resize_rows(std::size_t n) {
    data_.resize(n * cols_, Real(0));
    rows_ = n;
  }

  void reserve_rows(std::size_t n) { data_.reserve(n * cols_); }

  void append_row(const Real* src) {
    data_.insert(data_.end(), src, src + cols_);
    ++rows_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

inline std::string shape_string(std::size_t r, std::size_t c) {
  return "(" + std::to_string(r) + ", " + std::to_string(c) + ")";
}

template <class Real>
void require_shape(const Matrix<Real>& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DomainError(std::string(what) + ": expected shape " + shape_string(rows, cols) + ", got " +
                      shape_string(m.rows(), m.cols()));
  }
}

// Row kernels. Every forward computation, batch or incremental, goes through
// these with a fixed summation order, which is what makes cached scoring
// reproduce batch scoring exactly.
namespace kernels {

/// out = x W (+ bias). x has W.rows() entries, out has W.cols().
template <class Real>
void affine_row(const Real* x, const Matrix<Real>& w, const Real* bias, Real* out) {
  const std::size_t n_out = w.cols();
  if (bias) {
    std::copy(bias, bias + n_out, out);
  } else {
    std::fill(out, out + n_out, Real(0));
  }
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const Real xr = x[r];
    const Real* wr = w.row(r);
    for (std::size_t c = 0; c < n_out; ++c) out[c] += xr * wr[c];
  }
}

inline constexpr double kLayerNormEps = 1e-5;

template <class Real>
void layer_norm_row(const Real* x, std::size_t d, const Real* gain, const Real* bias, Real* out, Real& mean,
                    Real& rstd) {
  Real sum = 0;
  for (std::size_t i = 0; i < d; ++i) sum += x[i];
  mean = sum / static_cast<Real>(d);
  Real var = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const Real c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<Real>(d);
  rstd = Real(1) / std::sqrt(var + static_cast<Real>(kLayerNormEps));
  for (std::size_t i = 0; i < d; ++i) out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
}

/// Scaled dot-product attention of one query row against the first
/// n_visible rows of K and V, restricted to columns [offset, offset + dim).
/// Writes the attention weights to probs[0..n_visible) and the context
/// slice to ctx[offset..offset + dim).
template <class Real>
void attention_row(const Real* q, const Matrix<Real>& k, const Matrix<Real>& v, std::size_t n_visible,
                   std::size_t offset, std::size_t dim, Real scale, Real* probs, Real* ctx) {
  Real max_score = -std::numeric_limits<Real>::infinity();
  for (std::size_t j = 0; j < n_visible; ++j) {
    const Real* kj = k.row(j) + offset;
    Real s = 0;
    for (std::size_t t = 0; t < dim; ++t) s += q[offset + t] * kj[t];
    s *= scale;
    probs[j] = s;
    max_score = std::max(max_score, s);
  }
  Real sum = 0;
  for (std::size_t j = 0; j < n_visible; ++j) {
    probs[j] = std::exp(probs[j] - max_score);
    sum += probs[j];
  }
  for (std::size_t j = 0; j < n_visible; ++j) probs[j] /= sum;
  Real* out = ctx + offset;
  std::fill(out, out + dim, Real(0));
  for (std::size_t j = 0; j < n_visible; ++j) {
    const Real p = probs[j];
    const Real* vj = v.row(j) + offset;
    for (std::size_t t = 0; t < dim; ++t) out[t] += p * vj[t];
  }
}

/// log softmax(logits)[target], max-subtracted.
template <class Real>
Real log_softmax_at(const Real* logits, std::size_t n, std::size_t target) {
  Real m = logits[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, logits[i]);
  Real sum = 0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(logits[i] - m);
  return logits[target] - m - std::log(sum);
}

template <class Real>
void softmax_row(const Real* logits, std::size_t n, Real* out) {
  Real m = logits[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, logits[i]);
  Real sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
}

// Backward helpers over whole matrices.

/// g += a^T d, with a (n x r), d (n x c), g (r x c).
template <class Real>
void accumulate_at_b(const Matrix<Real>& a, const Matrix<Real>& d, Matrix<Real>& g) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const Real* ai = a.row(i);
    const Real* di = d.row(i);
    for (std::size_t r = 0; r < a.cols(); ++r) {
      const Real ar = ai[r];
      if (ar == Real(0)) continue;
      Real* gr = g.row(r);
      for (std::size_t c = 0; c < d.cols(); ++c) gr[c] += ar * di[c];
    }
  }
}

/// out (n x r) += d (n x c) w^T, with w (r x c).
template <class Real>
void accumulate_a_bt(const Matrix<Real>& d, const Matrix<Real>& w, Matrix<Real>& out) {
  for (std::size_t i = 0; i < d.rows(); ++i) {
    const Real* di = d.row(i);
    Real* oi = out.row(i);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      const Real* wr = w.row(r);
      Real s = 0;
      for (std::size_t c = 0; c < w.cols(); ++c) s += di[c] * wr[c];
      oi[r] += s;
    }
  }
}

/// g (1 x c) += column sums of d.
template <class Real>
void accumulate_column_sums(const Matrix<Real>& d, Matrix<Real>& g) {
  Real* gr = g.row(0);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    const Real* di = d.row(i);
    for (std::size_t c = 0; c < d.cols(); ++c) gr[c] += di[c];
  }
}

/// Layer-norm backward for one row. Accumulates gain/bias gradients and adds
/// the input gradient into dx.
template <class Real>
void layer_norm_backward_row(const Real* x, const Real* dy, std::size_t d, const Real* gain, Real mean,
                             Real rstd, Real* dgain, Real* dbias, Real* dx) {
  Real mean_dxhat = 0;
  Real mean_dxhat_xhat = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const Real xhat = (x[i] - mean) * rstd;
    const Real dxhat = dy[i] * gain[i];
    dgain[i] += dy[i] * xhat;
    dbias[i] += dy[i];
    mean_dxhat += dxhat;
    mean_dxhat_xhat += dxhat * xhat;
  }
  mean_dxhat /= static_cast<Real>(d);
  mean_dxhat_xhat /= static_cast<Real>(d);
  for (std::size_t i = 0; i < d; ++i) {
    const Real xhat = (x[i] - mean) * rstd;
    const Real dxhat = dy[i] * gain[i];
    dx[i] += rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
  }
}

}  // namespace kernels
}  // namespace trajlm
