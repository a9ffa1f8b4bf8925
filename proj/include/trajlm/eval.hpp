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
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajlm/common.hpp"
#include "trajlm/corpus.hpp"
#include "trajlm/online.hpp"
#include "trajlm/scoring.hpp"
#include "trajlm/vocab.hpp"

namespace trajlm {

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  std::size_t total() const { return tp + fp + fn + tn; }
};

/// Anomalous is the positive class.
inline Confusion confusion(std::span<const Label> labels, std::span<const Label> verdicts) {
  if (labels.size() != verdicts.size()) {
    throw DomainError("confusion: " + std::to_string(labels.size()) + " labels vs " +
                      std::to_string(verdicts.size()) + " verdicts");
  }
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pos = labels[i] == Label::kAnomalous, pred = verdicts[i] == Label::kAnomalous;
    if (pos && pred) ++c.tp;
    else if (!pos && pred) ++c.fp;
    else if (pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double f1(std::span<const Label> labels, std::span<const Label> verdicts) {
  return confusion(labels, verdicts).f1();
}

struct PRPoint {
  double threshold = 0.0;  // predict anomalous when score >= threshold
  double precision = 0.0;
  double recall = 0.0;
};

/// Descending-score sweep; samples with equal scores enter together, giving
/// one point per distinct score in order of increasing recall.
inline std::vector<PRPoint> pr_curve(std::span<const Label> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) {
    throw DomainError("pr_curve: " + std::to_string(labels.size()) + " labels vs " + std::to_string(scores.size()) +
                      " scores");
  }
  std::size_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (std::isnan(scores[i])) throw DomainError("pr_curve: NaN score at index " + std::to_string(i));
    if (labels[i] == Label::kAnomalous) ++positives;
  }
  if (positives == 0) throw DomainError("pr_curve: no positive labels");
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<PRPoint> curve;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      ++seen;
      if (labels[order[i]] == Label::kAnomalous) ++tp;
    }
    curve.push_back({s, static_cast<double>(tp) / static_cast<double>(seen),
                     static_cast<double>(tp) / static_cast<double>(positives)});
  }
  return curve;
}

/// Average precision: sum of (R_k - R_{k-1}) * P_k over the sweep.
inline double pr_auc(std::span<const Label> labels, std::span<const double> scores) {
  double area = 0.0, prev_recall = 0.0;
  for (const auto& p : pr_curve(labels, scores)) {
    area += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return area;
}

struct EvalReport {
  std::string scope;  // "global" or "per_agent"
  std::optional<std::string> agent;
  double f1 = 0.0;
  double pr_auc = 0.0;
  Confusion counts;
  std::string config_hash;
};

using TruthMap = std::map<std::string, Label>;

inline TruthMap truth_map(const std::vector<TruthRecord>& truth) {
  TruthMap m;
  for (const auto& t : truth) m[t.id] = t.label;
  return m;
}

inline TruthMap truth_map(const std::vector<CorpusRecord>& records) {
  TruthMap m;
  for (const auto& r : records) m[r.id] = r.label;
  return m;
}

inline Label truth_of(const TruthMap& truth, const std::string& id) {
  auto it = truth.find(id);
  if (it == truth.end()) throw DataError("no ground truth for trajectory '" + id + "'");
  return it->second;
}

/// Verdicts drive F1, perplexities drive PR-AUC.
inline EvalReport evaluate(std::span<const ScoreReport> reports, const TruthMap& truth, std::string scope) {
  std::vector<Label> labels, verdicts;
  std::vector<double> scores;
  for (const auto& r : reports) {
    labels.push_back(truth_of(truth, r.id));
    verdicts.push_back(r.verdict);
    scores.push_back(r.perplexity);
  }
  EvalReport e;
  e.scope = std::move(scope);
  e.counts = confusion(labels, verdicts);
  e.f1 = e.counts.f1();
  e.pr_auc = pr_auc(labels, scores);
  return e;
}

inline EvalReport global_eval(std::span<const ScoreReport> reports, const TruthMap& truth) {
  return evaluate(reports, truth, "global");
}

/// One report per agent that has at least one anomalous trajectory; the
/// rest are left out.
inline std::map<std::string, EvalReport> per_agent_eval(std::span<const ScoreReport> reports,
                                                        const TruthMap& truth) {
  std::map<std::string, std::vector<ScoreReport>> groups;
  for (const auto& r : reports) {
    if (!r.agent) throw DataError("per_agent_eval: trajectory '" + r.id + "' has no agent");
    groups[*r.agent].push_back(r);
  }
  std::map<std::string, EvalReport> out;
  for (const auto& [agent, rs] : groups) {
    const bool any = std::any_of(rs.begin(), rs.end(),
                                 [&](const ScoreReport& r) { return truth_of(truth, r.id) == Label::kAnomalous; });
    if (!any) continue;
    auto e = evaluate(rs, truth, "per_agent");
    e.agent = agent;
    out.emplace(agent, std::move(e));
  }
  return out;
}

/// Same, but first checks every agent has an entry in the threshold table.
inline std::map<std::string, EvalReport> per_agent_eval(std::span<const ScoreReport> reports, const TruthMap& truth,
                                                        const ThresholdTable& table) {
  for (const auto& r : reports) {
    if (r.agent && !table.per_agent.contains(*r.agent)) {
      throw DataError("per_agent_eval: agent '" + *r.agent + "' missing from threshold table");
    }
  }
  return per_agent_eval(reports, truth);
}

// ---------------------------------------------------------------------------
// Completion ratios
// ---------------------------------------------------------------------------

/// Number of scored positions kept at ratio r out of n.
inline std::size_t prefix_length(double ratio, std::size_t n) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw DomainError("completion ratio must lie in (0, 1], got " + format_double(ratio));
  const double k = std::ceil(ratio * static_cast<double>(n) - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, k)));
}

struct RatioRow {
  double ratio = 0.0;
  EvalReport report;
  std::size_t skipped = 0;
};

/// Streams each trajectory through a session opened on its head token and
/// evaluates the running perplexity after the first ceil(r * n) scored
/// positions, for each ratio r.
template <class Real>
std::vector<RatioRow> completion_ratio_eval(const Model<Real>& m, const std::vector<EncodedTrajectory>& corpus,
                                            const TruthMap& truth, const ThresholdTable& table, Scope scope,
                                            std::span<const double> ratios,
                                            std::vector<std::string>* warnings = nullptr) {
  for (double r : ratios) prefix_length(r, 1);
  std::vector<std::vector<double>> running(corpus.size());
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    const auto& ids = corpus[k].ids;
    if (ids.size() < 2) throw DataError("trajectory '" + corpus[k].id + "' has no scored positions");
    auto s = open_session(m, std::span<const TokenId>(ids.data(), 1));
    running[k].reserve(ids.size() - 1);
    for (std::size_t i = 1; i < ids.size(); ++i) {
      if (ids[i] == kPadId) continue;
      running[k].push_back(s.push(ids[i]).running_perplexity);
    }
  }
  std::vector<RatioRow> rows;
  for (double r : ratios) {
    RatioRow row;
    row.ratio = r;
    std::vector<ScoreReport> reports;
    for (std::size_t k = 0; k < corpus.size(); ++k) {
      const std::size_t len = prefix_length(r, running[k].size());
      if (len == 0) {
        ++row.skipped;
        if (warnings) warnings->push_back("ratio " + format_double(r) + ": '" + corpus[k].id + "' has an empty prefix");
        continue;
      }
      ScoreReport rep;
      rep.id = corpus[k].id;
      rep.agent = corpus[k].agent;
      rep.perplexity = running[k][len - 1];
      rep.threshold = select_threshold(table, scope, rep.agent).threshold;
      rep.verdict = verdict_for(rep.perplexity, rep.threshold);
      reports.push_back(std::move(rep));
    }
    row.report = evaluate(reports, truth, std::string(scope_name(scope)));
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Location-configuration ablation
// ---------------------------------------------------------------------------

struct AblationColumn {
  std::string name;
  std::map<std::string, EvalReport> per_agent;
  double mean_f1 = 0.0;
  double mean_pr_auc = 0.0;
};

/// Columns are configurations; rows are the anomalous agents plus an
/// average row.
struct AblationTable {
  std::vector<std::string> agents;
  std::vector<AblationColumn> columns;

  std::size_t row_count() const { return agents.size() + 1; }
};

using ScoringPipeline = std::function<std::vector<ScoreReport>(const std::vector<CorpusRecord>&)>;

inline AblationTable ablation_eval(const std::vector<std::pair<std::string, std::vector<CorpusRecord>>>& corpora,
                                   const ScoringPipeline& pipeline) {
  if (corpora.empty()) throw DomainError("ablation_eval: no configurations");
  const auto& ref = corpora.front().second;
  for (const auto& [name, recs] : corpora) {
    bool same = recs.size() == ref.size();
    for (std::size_t i = 0; same && i < recs.size(); ++i) same = recs[i].id == ref[i].id && recs[i].label == ref[i].label;
    if (!same) throw DataError("ablation_eval: configuration '" + name + "' does not share trajectory ids with '" +
                               corpora.front().first + "'");
  }
  const auto truth = truth_map(ref);
  AblationTable table;
  std::set<std::string> agents;
  for (const auto& [name, recs] : corpora) {
    AblationColumn col;
    col.name = name;
    const auto reports = pipeline(recs);
    col.per_agent = per_agent_eval(reports, truth);
    for (const auto& [agent, e] : col.per_agent) {
      agents.insert(agent);
      col.mean_f1 += e.f1;
      col.mean_pr_auc += e.pr_auc;
    }
    if (!col.per_agent.empty()) {
      col.mean_f1 /= static_cast<double>(col.per_agent.size());
      col.mean_pr_auc /= static_cast<double>(col.per_agent.size());
    }
    table.columns.push_back(std::move(col));
  }
  table.agents.assign(agents.begin(), agents.end());
  return table;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline void write_meta_comment(std::ostream& out, const ArtifactMeta& meta) {
  out << "# trajlm " << meta.tool_version << " config=" << meta.config_hash << '\n';
}

/// Per-agent table: agent,f1,pr_auc,tp,fp,fn,tn.
inline void write_agent_table_csv(std::ostream& out, const std::map<std::string, EvalReport>& rows,
                                  const ArtifactMeta& meta) {
  write_meta_comment(out, meta);
  out << "agent,f1,pr_auc,tp,fp,fn,tn\n";
  for (const auto& [agent, e] : rows) {
    out << agent << ',' << format_double(e.f1) << ',' << format_double(e.pr_auc) << ',' << e.counts.tp << ','
        << e.counts.fp << ',' << e.counts.fn << ',' << e.counts.tn << '\n';
  }
}

/// One row per labelled evaluation, e.g. per anomaly kind.
inline void write_global_table_csv(std::ostream& out, const std::vector<std::pair<std::string, EvalReport>>& rows,
                                   const ArtifactMeta& meta) {
  write_meta_comment(out, meta);
  out << "anomaly,f1,pr_auc,tp,fp,fn,tn\n";
  for (const auto& [name, e] : rows) {
    out << name << ',' << format_double(e.f1) << ',' << format_double(e.pr_auc) << ',' << e.counts.tp << ','
        << e.counts.fp << ',' << e.counts.fn << ',' << e.counts.tn << '\n';
  }
}

inline void write_ratio_table_csv(std::ostream& out, const std::vector<RatioRow>& rows, const ArtifactMeta& meta) {
  write_meta_comment(out, meta);
  out << "ratio,f1,pr_auc,n,skipped\n";
  for (const auto& r : rows) {
    out << format_double(r.ratio) << ',' << format_double(r.report.f1) << ',' << format_double(r.report.pr_auc)
        << ',' << r.report.counts.total() << ',' << r.skipped << '\n';
  }
}

inline void write_ablation_csv(std::ostream& out, const AblationTable& t, const ArtifactMeta& meta) {
  write_meta_comment(out, meta);
  out << "agent";
  for (const auto& c : t.columns) out << ',' << c.name << "_f1," << c.name << "_pr_auc";
  out << '\n';
  for (const auto& agent : t.agents) {
    out << agent;
    for (const auto& c : t.columns) {
      auto it = c.per_agent.find(agent);
      if (it == c.per_agent.end()) {
        out << ",,";
      } else {
        out << ',' << format_double(it->second.f1) << ',' << format_double(it->second.pr_auc);
      }
    }
    out << '\n';
  }
  out << "average";
  for (const auto& c : t.columns) out << ',' << format_double(c.mean_f1) << ',' << format_double(c.mean_pr_auc);
  out << '\n';
}

}  // namespace trajlm
