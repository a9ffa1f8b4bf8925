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
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "trajlm/common.hpp"
#include "trajlm/corpus.hpp"
#include "trajlm/model.hpp"
#include "trajlm/vocab.hpp"

namespace trajlm {

/// Log-probabilities (nats) of each predicted token. positions[k] is the
/// index in the id sequence of the token scored by log_probs[k]; the head
/// token is never scored, PAD targets are skipped, EOT is included.
struct TokenScores {
  std::vector<double> log_probs;
  std::vector<std::size_t> positions;
};

template <class Real>
TokenScores token_log_probs(const Model<Real>& m, std::span<const TokenId> ids) {
  const auto logits = forward(m, ids);
  TokenScores out;
  for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
    if (ids[i + 1] == kPadId) continue;
    out.log_probs.push_back(static_cast<double>(
        kernels::log_softmax_at(logits.row(i), logits.cols(), static_cast<std::size_t>(ids[i + 1]))));
    out.positions.push_back(i + 1);
  }
  return out;
}

struct Surprisal {
  std::vector<double> values;  // nats, >= 0
  std::vector<std::size_t> positions;
};

inline Surprisal surprisal_from(const TokenScores& s) {
  Surprisal out;
  out.positions = s.positions;
  out.values.reserve(s.log_probs.size());
  for (double lp : s.log_probs) out.values.push_back(-lp);
  return out;
}

template <class Real>
Surprisal surprisal(const Model<Real>& m, std::span<const TokenId> ids) {
  return surprisal_from(token_log_probs(m, ids));
}

/// exp(mean surprisal), summing in position order.
inline double perplexity_from(std::span<const double> surprisals) {
  if (surprisals.empty()) throw DomainError("perplexity: no scored positions");
  double sum = 0.0;
  for (double s : surprisals) sum += s;
  return std::exp(sum / static_cast<double>(surprisals.size()));
}

template <class Real>
double perplexity(const Model<Real>& m, std::span<const TokenId> ids) {
  return perplexity_from(surprisal(m, ids).values);
}

/// Arithmetic mean of per-trajectory perplexities.
template <class Real>
double dataset_perplexity(const Model<Real>& m, const std::vector<EncodedTrajectory>& corpus) {
  if (corpus.empty()) throw DomainError("dataset_perplexity: empty corpus");
  double sum = 0.0;
  for (const auto& t : corpus) sum += perplexity(m, std::span<const TokenId>(t.ids));
  return sum / static_cast<double>(corpus.size());
}

// ---------------------------------------------------------------------------
// Thresholds and verdicts
// ---------------------------------------------------------------------------

enum class Scope { kGlobal, kPerAgent };

inline std::string_view scope_name(Scope s) { return s == Scope::kGlobal ? "global" : "per_agent"; }

inline Scope parse_scope(std::string_view s) {
  if (s == "global") return Scope::kGlobal;
  if (s == "per_agent") return Scope::kPerAgent;
  throw ConfigError("unknown scope '" + std::string(s) + "' (expected global or per_agent)");
}

struct PerplexitySample {
  std::optional<std::string> agent;
  double perplexity = 0.0;
};

struct ThresholdEntry {
  double threshold = 0.0;  // mean + population std
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct ThresholdTable {
  std::optional<ThresholdEntry> global;
  std::map<std::string, ThresholdEntry> per_agent;
  std::vector<std::string> warnings;
};

inline ThresholdEntry mean_plus_std(std::span<const double> xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  const double sd = std::sqrt(sq / static_cast<double>(xs.size()));
  return {mean + sd, mean, sd, xs.size()};
}

/// Global entry from every sample; with group_by_agent, one entry per agent
/// from that agent's samples only. Groups under 2 samples are left out.
inline ThresholdTable compute_thresholds(std::span<const PerplexitySample> samples, bool group_by_agent) {
  ThresholdTable table;
  std::vector<double> all;
  std::map<std::string, std::vector<double>> by_agent;
  for (const auto& s : samples) {
    if (!(s.perplexity > 0.0) || !std::isfinite(s.perplexity)) {
      throw DomainError("compute_thresholds: perplexities must be positive and finite");
    }
    all.push_back(s.perplexity);
    if (group_by_agent && s.agent) by_agent[*s.agent].push_back(s.perplexity);
  }
  if (all.size() >= 2) {
    table.global = mean_plus_std(all);
  } else {
    table.warnings.push_back("global threshold omitted: fewer than 2 samples");
  }
  for (const auto& [agent, xs] : by_agent) {
    if (xs.size() < 2) {
      table.warnings.push_back("threshold for agent '" + agent + "' omitted: fewer than 2 samples");
      continue;
    }
    table.per_agent.emplace(agent, mean_plus_std(xs));
  }
  return table;
}

inline const ThresholdEntry& select_threshold(const ThresholdTable& table, Scope scope,
                                              const std::optional<std::string>& agent) {
  if (scope == Scope::kGlobal) {
    if (!table.global) throw DataError("no global threshold available");
    return *table.global;
  }
  if (!agent) throw DataError("per-agent scope needs an agent; use global scope for agent-less trajectories");
  auto it = table.per_agent.find(*agent);
  if (it == table.per_agent.end()) {
    throw DataError("no per-agent threshold for agent '" + *agent + "'; use global scope instead");
  }
  return it->second;
}

/// Anomalous iff perplexity strictly exceeds the threshold.
inline Label verdict_for(double perplexity, double threshold) {
  return perplexity > threshold ? Label::kAnomalous : Label::kNormal;
}

struct ScoreReport {
  std::string id;
  std::optional<std::string> agent;
  std::vector<double> surprisal;
  std::vector<std::size_t> positions;
  double perplexity = 0.0;
  double threshold = 0.0;
  Label verdict = Label::kNormal;
};

inline ScoreReport classify(const std::string& id, const std::optional<std::string>& agent, const Surprisal& s,
                            const ThresholdTable& table, Scope scope) {
  ScoreReport r;
  r.id = id;
  r.agent = agent;
  r.surprisal = s.values;
  r.positions = s.positions;
  r.perplexity = perplexity_from(s.values);
  r.threshold = select_threshold(table, scope, agent).threshold;
  r.verdict = verdict_for(r.perplexity, r.threshold);
  return r;
}

template <class Real>
ScoreReport score_trajectory(const Model<Real>& m, const EncodedTrajectory& t, const ThresholdTable& table,
                             Scope scope) {
  return classify(t.id, t.agent, surprisal(m, std::span<const TokenId>(t.ids)), table, scope);
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline void write_scores_csv(std::ostream& out, const std::vector<ScoreReport>& reports, const ArtifactMeta& meta) {
  out << "# trajlm " << meta.tool_version << " config=" << meta.config_hash << '\n';
  out << "id,agent,perplexity,threshold,verdict\n";
  for (const auto& r : reports) {
    out << r.id << ',' << r.agent.value_or("") << ',' << format_double(r.perplexity) << ','
        << format_double(r.threshold) << ',' << label_name(r.verdict) << '\n';
  }
}

inline std::vector<ScoreReport> read_scores_csv(std::istream& in) {
  std::vector<ScoreReport> out;
  for (auto& f : read_csv_rows(in, 5)) {
    ScoreReport r;
    r.id = f[0];
    if (!f[1].empty()) r.agent = f[1];
    r.perplexity = parse_double(f[2]);
    r.threshold = parse_double(f[3]);
    r.verdict = parse_label(f[4]);
    out.push_back(std::move(r));
  }
  return out;
}

/// Per-position surprisal dump: id,pos,token,surprisal.
inline void write_surprisal_csv(std::ostream& out, const std::vector<ScoreReport>& reports,
                                const std::vector<EncodedTrajectory>& encoded, const Vocab& vocab,
                                const ArtifactMeta& meta) {
  out << "# trajlm " << meta.tool_version << " config=" << meta.config_hash << '\n';
  out << "id,pos,token,surprisal\n";
  for (std::size_t k = 0; k < reports.size(); ++k) {
    const auto& r = reports[k];
    for (std::size_t i = 0; i < r.surprisal.size(); ++i) {
      const TokenId id = encoded[k].ids[r.positions[i]];
      out << r.id << ',' << r.positions[i] << ',' << vocab.token(id).str() << ',' << format_double(r.surprisal[i])
          << '\n';
    }
  }
}

inline void write_thresholds_csv(std::ostream& out, const ThresholdTable& t, const ArtifactMeta& meta) {
  out << "# trajlm " << meta.tool_version << " config=" << meta.config_hash << '\n';
  out << "scope,agent,threshold,mean,std,count\n";
  auto row = [&](std::string_view scope, const std::string& agent, const ThresholdEntry& e) {
    out << scope << ',' << agent << ',' << format_double(e.threshold) << ',' << format_double(e.mean) << ','
        << format_double(e.std) << ',' << e.count << '\n';
  };
  if (t.global) row("global", "", *t.global);
  for (const auto& [agent, e] : t.per_agent) row("per_agent", agent, e);
}

inline ThresholdTable read_thresholds_csv(std::istream& in) {
  ThresholdTable t;
  for (auto& f : read_csv_rows(in, 6)) {
    ThresholdEntry e{parse_double(f[2]), parse_double(f[3]), parse_double(f[4]),
                     static_cast<std::size_t>(parse_double(f[5]))};
    if (f[0] == "global") {
      t.global = e;
    } else if (f[0] == "per_agent") {
      t.per_agent[f[1]] = e;
    } else {
      throw DataError("unknown threshold scope '" + f[0] + "'");
    }
  }
  return t;
}

}  // namespace trajlm
