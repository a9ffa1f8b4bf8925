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

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "trajlm/common.hpp"
#include "trajlm/model.hpp"

namespace trajlm {

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t n_epochs = 10;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  }
};

/// Adam moments plus progress counters, persisted with checkpoints so a
/// resumed run continues where it stopped.
template <class Real>
struct OptimizerState {
  Parameters<Real> m, v;
  std::uint64_t step = 0;
  std::uint64_t epochs_done = 0;

  static OptimizerState fresh(const ModelConfig& c) {
    return {Parameters<Real>::zeros(c), Parameters<Real>::zeros(c), 0, 0};
  }
};

template <class Real>
double global_norm(Parameters<Real>& g) {
  double sq = 0.0;
  for (auto& [name, t] : g.tensors()) {
    for (Real x : t->values()) sq += static_cast<double>(x) * static_cast<double>(x);
  }
  return std::sqrt(sq);
}

/// One Adam update from gradients already accumulated in grads.
template <class Real>
void adam_update(Model<Real>& model, Parameters<Real>& grads, OptimizerState<Real>& state, const TrainConfig& tc) {
  if (tc.clip_norm > 0.0) {
    const double norm = global_norm(grads);
    if (norm > tc.clip_norm) {
      const Real s = static_cast<Real>(tc.clip_norm / norm);
      for (auto& [name, t] : grads.tensors()) {
        for (auto& x : t->values()) x *= s;
      }
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(state.step));
  auto params = model.params.tensors();
  auto gs = grads.tensors();
  auto ms = state.m.tensors();
  auto vs = state.v.tensors();
  const Real b1 = static_cast<Real>(tc.beta1), b2 = static_cast<Real>(tc.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& pv = params[k].tensor->values();
    const auto& gv = gs[k].tensor->values();
    auto& mv = ms[k].tensor->values();
    auto& vv = vs[k].tensor->values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = b1 * mv[i] + (Real(1) - b1) * gv[i];
      vv[i] = b2 * vv[i] + (Real(1) - b2) * gv[i] * gv[i];
      const double mhat = static_cast<double>(mv[i]) / bc1;
      const double vhat = static_cast<double>(vv[i]) / bc2;
      pv[i] -= static_cast<Real>(tc.learning_rate * mhat / (std::sqrt(vhat) + tc.epsilon));
    }
  }
}

/// Gradient step on one batch; returns the batch's mean live NLL (before the
/// update).
template <class Real>
double train_step(Model<Real>& model, std::span<const std::vector<TokenId>* const> batch, const TrainConfig& tc,
                  OptimizerState<Real>& state, Parameters<Real>& grads) {
  std::size_t total = 0;
  for (const auto* seq : batch) total += Targets::next_token(*seq).live_count();
  if (total == 0) return 0.0;
  for (auto& [name, t] : grads.tensors()) t->fill(Real(0));
  Rng dropout_rng(unit_seed(component_seed(tc.seed, "dropout"), state.step));
  Rng* drop = model.config.dropout_rate > 0.0 ? &dropout_rng : nullptr;
  const Real weight = Real(1) / static_cast<Real>(total);
  double loss = 0.0;
  for (const auto* seq : batch) {
    loss += static_cast<double>(accumulate_sequence_gradient(model, std::span<const TokenId>(*seq), weight, grads, drop).first);
  }
  loss /= static_cast<double>(total);
  if (!std::isfinite(loss)) {
    throw TrainingDiverged("training diverged at step " + std::to_string(state.step) + ": batch loss is " +
                           std::to_string(loss) + "; lower the learning rate or enable clipping");
  }
  adam_update(model, grads, state, tc);
  return loss;
}

struct TrainLog {
  std::vector<double> epoch_loss;  // token-weighted mean NLL per epoch
  std::uint64_t steps = 0;
};

/// Mini-batch training. Each epoch visits the corpus in an order drawn from
/// (seed, absolute epoch index), so resumed runs replay the same schedule.
template <class Real>
TrainLog train(Model<Real>& model, const std::vector<std::vector<TokenId>>& corpus, const TrainConfig& tc,
               OptimizerState<Real>& state, const std::function<void(std::size_t, double)>& on_epoch = {}) {
  tc.validate();
  TrainLog log;
  if (corpus.empty() || tc.n_epochs == 0) return log;
  for (const auto& seq : corpus) check_ids(model, seq);
  auto grads = Parameters<Real>::zeros(model.config);
  std::vector<std::size_t> order(corpus.size());
  std::vector<const std::vector<TokenId>*> batch;
  for (std::size_t e = 0; e < tc.n_epochs; ++e) {
    const std::uint64_t epoch = state.epochs_done;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(unit_seed(component_seed(tc.seed, "shuffle"), epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[uniform_index(rng, i)]);
    }
    double weighted = 0.0;
    std::size_t tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      batch.clear();
      std::size_t batch_tokens = 0;
      for (std::size_t k = start; k < std::min(order.size(), start + tc.batch_size); ++k) {
        batch.push_back(&corpus[order[k]]);
        batch_tokens += Targets::next_token(corpus[order[k]]).live_count();
      }
      const double loss = train_step(model, std::span<const std::vector<TokenId>* const>(batch), tc, state, grads);
      weighted += loss * static_cast<double>(batch_tokens);
      tokens += batch_tokens;
      ++log.steps;
    }
    ++state.epochs_done;
    const double mean = tokens ? weighted / static_cast<double>(tokens) : 0.0;
    log.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(static_cast<std::size_t>(state.epochs_done), mean);
  }
  return log;
}

template <class Real>
TrainLog train(Model<Real>& model, const std::vector<std::vector<TokenId>>& corpus, const TrainConfig& tc) {
  auto state = OptimizerState<Real>::fresh(model.config);
  return train(model, corpus, tc, state);
}

}  // namespace trajlm
