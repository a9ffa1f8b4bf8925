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

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajlm/config.hpp"
#include "trajlm/corpus.hpp"
#include "trajlm/eval.hpp"
#include "trajlm/model.hpp"
#include "trajlm/scoring.hpp"
#include "trajlm/synth.hpp"
#include "trajlm/train.hpp"
#include "trajlm/vocab.hpp"

namespace trajlm {

/// Route corpus: OD pairs and routes, the OD frequency filter, then
/// anomaly injection.
inline Corpus generate_route_corpus(const RunConfig& c) {
  const auto routes =
      synth::gen_route_corpus(c.route_grid, c.n_od_pairs, c.routes_per_od, c.route_noise, c.routes_seed());
  std::vector<synth::CellPath> paths;
  paths.reserve(routes.size());
  for (const auto& r : routes) paths.push_back(r.cells);
  std::vector<synth::Route> kept;
  for (std::size_t i : synth::od_filter_indices(paths, c.min_od_count)) kept.push_back(routes[i]);
  return synth::inject_anomalies(kept, c.anomaly, c.anomaly_fraction, c.route_grid, c.anomaly_seed());
}

inline Corpus generate_corpus(const RunConfig& c, std::optional<synth::LocationConfig> location = std::nullopt) {
  if (c.dataset == Dataset::kRoutes) return generate_route_corpus(c);
  return synth::gen_pol_corpus(c.world_config(), location.value_or(c.location));
}

inline std::vector<std::vector<TokenId>> training_sequences(const std::vector<EncodedTrajectory>& encoded,
                                                            bool exclude_anomalous) {
  std::vector<std::vector<TokenId>> out;
  for (const auto& e : encoded) {
    if (exclude_anomalous && e.label == Label::kAnomalous) continue;
    out.push_back(e.ids);
  }
  return out;
}

inline std::size_t longest(const std::vector<EncodedTrajectory>& encoded) {
  std::size_t n = 0;
  for (const auto& e : encoded) n = std::max(n, e.ids.size());
  return n;
}

/// Perplexity-based thresholds from the training trajectories.
inline ThresholdTable fit_thresholds(const std::vector<EncodedTrajectory>& encoded,
                                     const std::vector<double>& perplexities, bool exclude_anomalous, Scope scope) {
  std::vector<PerplexitySample> samples;
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    if (exclude_anomalous && encoded[i].label == Label::kAnomalous) continue;
    samples.push_back({encoded[i].agent, perplexities[i]});
  }
  return compute_thresholds(samples, scope == Scope::kPerAgent);
}

template <class Real>
struct PipelineResult {
  Vocab vocab;
  Model<Real> model;
  TrainLog log;
  std::vector<EncodedTrajectory> encoded;
  ThresholdTable thresholds;
  std::vector<ScoreReport> reports;
};

/// Vocabulary, training, thresholds and scoring for one corpus.
template <class Real = double>
PipelineResult<Real> run_pipeline(const std::vector<CorpusRecord>& records, const RunConfig& rc,
                                  const std::function<void(std::size_t, double)>& on_epoch = {}) {
  rc.validate();
  PipelineResult<Real> r;
  r.vocab = build_vocab(records);
  r.encoded = encode_corpus(records, r.vocab);
  const auto mc = rc.model_config(r.vocab.size());
  if (longest(r.encoded) > mc.max_seq_len) {
    throw ConfigError("model.max_seq_len (" + std::to_string(mc.max_seq_len) + ") is shorter than the longest sequence (" +
                      std::to_string(longest(r.encoded)) + ")");
  }
  r.model = init_model<Real>(mc);
  auto state = OptimizerState<Real>::fresh(mc);
  r.log = train(r.model, training_sequences(r.encoded, rc.exclude_anomalous), rc.train_config(), state, on_epoch);
  std::vector<Surprisal> surprisals;
  std::vector<double> ppl;
  for (const auto& e : r.encoded) {
    surprisals.push_back(surprisal(r.model, std::span<const TokenId>(e.ids)));
    ppl.push_back(perplexity_from(surprisals.back().values));
  }
  r.thresholds = fit_thresholds(r.encoded, ppl, rc.exclude_anomalous, rc.scope);
  for (std::size_t i = 0; i < r.encoded.size(); ++i) {
    r.reports.push_back(classify(r.encoded[i].id, r.encoded[i].agent, surprisals[i], r.thresholds, rc.scope));
  }
  return r;
}

/// One corpus per location configuration from the same world, each run
/// through the full pipeline.
template <class Real = double>
AblationTable run_ablation(const RunConfig& rc) {
  if (rc.dataset != Dataset::kPol) throw ConfigError("ablation needs the pol dataset");
  std::vector<std::pair<std::string, std::vector<CorpusRecord>>> corpora;
  const auto world = synth::generate_world(rc.world_config());
  for (auto loc : rc.ablation) {
    corpora.emplace_back(std::string(synth::location_config_name(loc)), synth::render(world, loc).records);
  }
  return ablation_eval(corpora, [&](const std::vector<CorpusRecord>& recs) { return run_pipeline<Real>(recs, rc).reports; });
}

}  // namespace trajlm
