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
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajlm/common.hpp"
#include "trajlm/model.hpp"
#include "trajlm/scoring.hpp"

namespace trajlm {

struct PushResult {
  double surprisal = 0.0;
  double running_perplexity = 0.0;
};

/// Incremental scorer for one trajectory. Keeps each layer's projected key
/// and value rows so a new token costs one query row per layer.
///
/// Rows go through the same kernels as the batch forward pass, so the
/// surprisals match token_log_probs bit for bit.
template <class Real>
class Session {
 public:
  /// Feeds the conditioning tokens without scoring them.
  Session(const Model<Real>& model, std::span<const TokenId> conditioning) : model_(&model) {
    if (conditioning.empty()) throw DomainError("open_session: conditioning prefix is empty");
    check_ids(model, conditioning);
    const auto& c = model.config;
    keys_.assign(c.n_layers, Matrix<Real>(0, c.d_model));
    values_.assign(c.n_layers, Matrix<Real>(0, c.d_model));
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      keys_[l].reserve_rows(c.max_seq_len);
      values_[l].reserve_rows(c.max_seq_len);
    }
    ids_.reserve(c.max_seq_len);
    x_.resize(c.d_model);
    h_.resize(c.d_model);
    q_.resize(c.d_model);
    k_.resize(c.d_model);
    v_.resize(c.d_model);
    ctx_.resize(c.d_model);
    branch_.resize(c.d_model);
    hidden_.resize(c.d_ff);
    probs_.resize(c.max_seq_len);
    logits_.resize(c.vocab_size);
    for (TokenId id : conditioning) advance(id);
  }

  /// Scores `id` against the current context, then appends it.
  PushResult push(TokenId id) {
    const auto& c = model_->config;
    if (ids_.size() >= c.max_seq_len) {
      throw DataError("session full: max_seq_len " + std::to_string(c.max_seq_len) + " reached");
    }
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw DataError("token id " + std::to_string(id) + " outside vocabulary");
    }
    const double s =
        -static_cast<double>(kernels::log_softmax_at(logits_.data(), logits_.size(), static_cast<std::size_t>(id)));
    advance(id);
    sum_ += s;
    ++count_;
    return {s, running_perplexity()};
  }

  std::size_t length() const { return ids_.size(); }
  std::size_t scored() const { return count_; }
  const std::vector<TokenId>& tokens() const { return ids_; }
  const Matrix<Real>& cached_keys(std::size_t layer) const { return keys_.at(layer); }
  const Matrix<Real>& cached_values(std::size_t layer) const { return values_.at(layer); }
  bool full() const { return ids_.size() >= model_->config.max_seq_len; }

  double running_perplexity() const {
    if (count_ == 0) throw DomainError("running perplexity: nothing scored yet");
    return std::exp(sum_ / static_cast<double>(count_));
  }

 private:
  void advance(TokenId id) {
    const auto& c = model_->config;
    const auto& p = model_->params;
    const std::size_t pos = ids_.size(), d = c.d_model, hd = c.head_dim();
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));
    const Real* te = p.tok_emb.row(static_cast<std::size_t>(id));
    const Real* pe = p.pos_emb.row(pos);
    for (std::size_t t = 0; t < d; ++t) x_[t] = te[t] + pe[t];
    Real mean, rstd;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const auto& lp = p.layers[l];
      kernels::layer_norm_row(x_.data(), d, lp.ln1_gain.row(0), lp.ln1_bias.row(0), h_.data(), mean, rstd);
      kernels::affine_row(h_.data(), lp.wq, static_cast<const Real*>(nullptr), q_.data());
      kernels::affine_row(h_.data(), lp.wk, static_cast<const Real*>(nullptr), k_.data());
      kernels::affine_row(h_.data(), lp.wv, static_cast<const Real*>(nullptr), v_.data());
      keys_[l].append_row(k_.data());
      values_[l].append_row(v_.data());
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        kernels::attention_row(q_.data(), keys_[l], values_[l], pos + 1, h * hd, hd, scale, probs_.data(),
                               ctx_.data());
      }
      kernels::affine_row(ctx_.data(), lp.wo, static_cast<const Real*>(nullptr), branch_.data());
      for (std::size_t t = 0; t < d; ++t) x_[t] = x_[t] + branch_[t];
      kernels::layer_norm_row(x_.data(), d, lp.ln2_gain.row(0), lp.ln2_bias.row(0), h_.data(), mean, rstd);
      kernels::affine_row(h_.data(), lp.w1, lp.b1.row(0), hidden_.data());
      for (auto& a : hidden_) a = std::max(a, Real(0));
      kernels::affine_row(hidden_.data(), lp.w2, lp.b2.row(0), branch_.data());
      for (std::size_t t = 0; t < d; ++t) x_[t] = x_[t] + branch_[t];
    }
    kernels::layer_norm_row(x_.data(), d, p.lnf_gain.row(0), p.lnf_bias.row(0), h_.data(), mean, rstd);
    kernels::affine_row(h_.data(), p.w_out, static_cast<const Real*>(nullptr), logits_.data());
    ids_.push_back(id);
  }

  const Model<Real>* model_;
  std::vector<Matrix<Real>> keys_, values_;
  std::vector<TokenId> ids_;
  std::vector<Real> x_, h_, q_, k_, v_, ctx_, branch_, hidden_, probs_, logits_;
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

template <class Real>
Session<Real> open_session(const Model<Real>& model, std::span<const TokenId> conditioning) {
  return Session<Real>(model, conditioning);
}

/// Verdict on the trajectory seen so far.
template <class Real>
Label partial_verdict(const Session<Real>& s, const ThresholdTable& table, Scope scope,
                      const std::optional<std::string>& agent = std::nullopt) {
  if (s.scored() == 0) throw DomainError("partial_verdict: nothing scored yet");
  return verdict_for(s.running_perplexity(), select_threshold(table, scope, agent).threshold);
}

}  // namespace trajlm
