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

#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajlm/common.hpp"
#include "trajlm/grid.hpp"
#include "trajlm/vocab.hpp"

namespace trajlm {

/// Provenance stamped into every artifact the pipeline writes.
struct ArtifactMeta {
  std::string tool_version = std::string(kToolVersion);
  std::string config_hash;
};

/// One trajectory in corpus form. `tokens` holds location tokens only; the
/// conditioning prefix comes from `agent`/`weekday`.
struct CorpusRecord {
  std::string id;
  std::optional<std::string> agent;
  std::optional<std::string> weekday;
  std::vector<Token> tokens;
  Label label = Label::kNormal;
};

/// Agent-conditioned records are laid out [agent, weekday, locations...];
/// the rest as [SOT, locations...]. EOT is appended by encode.
inline bool uses_sot(const CorpusRecord& r) { return !r.agent.has_value(); }

inline std::vector<Token> layout_tokens(const CorpusRecord& r) {
  std::vector<Token> out;
  out.reserve(r.tokens.size() + 2);
  if (r.agent) out.push_back({TokenKind::kAgentId, *r.agent});
  if (r.weekday) out.push_back(Token::make(TokenKind::kWeekday, *r.weekday));
  out.insert(out.end(), r.tokens.begin(), r.tokens.end());
  return out;
}

/// Full token sequence including SOT/EOT, as seen by the model.
inline std::vector<Token> model_tokens(const CorpusRecord& r) {
  std::vector<Token> out;
  if (uses_sot(r)) out.push_back(sot_token());
  auto body = layout_tokens(r);
  out.insert(out.end(), body.begin(), body.end());
  out.push_back(eot_token());
  return out;
}

inline EncodedTrajectory encode_record(const CorpusRecord& r, const Vocab& vocab) {
  const auto body = layout_tokens(r);
  EncodedTrajectory e = encode(body, vocab, uses_sot(r), true);
  e.id = r.id;
  e.label = r.label;
  e.agent = r.agent;
  return e;
}

inline std::vector<EncodedTrajectory> encode_corpus(const std::vector<CorpusRecord>& records,
                                                    const Vocab& vocab) {
  std::vector<EncodedTrajectory> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    try {
      out.push_back(encode_record(r, vocab));
    } catch (const UnknownTokenError& e) {
      throw UnknownTokenError(e.token(), "trajectory '" + r.id + "'");
    }
  }
  return out;
}

inline Vocab build_vocab(const std::vector<CorpusRecord>& records) {
  std::vector<std::vector<Token>> seqs;
  seqs.reserve(records.size());
  for (const auto& r : records) seqs.push_back(model_tokens(r));
  return build_vocab(std::span<const std::vector<Token>>(seqs));
}

struct TruthRecord {
  std::string id;
  Label label = Label::kNormal;
  std::string kind = "none";
  double ratio = 0.0;
  std::int64_t dist = 0;
};

struct Corpus {
  std::vector<CorpusRecord> records;
  std::vector<TruthRecord> truth;
};

// --- corpus JSONL --------------------------------------------------------

inline nlohmann::json to_json(const CorpusRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  if (r.agent) j["agent"] = *r.agent;
  if (r.weekday) j["weekday"] = *r.weekday;
  auto& toks = j["tokens"] = nlohmann::json::array();
  for (const auto& t : r.tokens) toks.push_back(t.str());
  j["label"] = std::string(label_name(r.label));
  return j;
}

inline CorpusRecord corpus_record_from_json(const nlohmann::json& j) {
  CorpusRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    if (j.contains("agent") && !j["agent"].is_null()) r.agent = j["agent"].get<std::string>();
    if (j.contains("weekday") && !j["weekday"].is_null()) r.weekday = j["weekday"].get<std::string>();
    for (const auto& t : j.at("tokens")) r.tokens.push_back(Token::parse(t.get<std::string>()));
    r.label = j.contains("label") ? parse_label(j["label"].get<std::string>()) : Label::kNormal;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed corpus record: ") + e.what());
  }
  return r;
}

/// Writes a metadata line followed by one record per line.
inline void write_corpus_jsonl(std::ostream& out, const std::vector<CorpusRecord>& records,
                               const ArtifactMeta& meta) {
  nlohmann::json m;
  m["meta"] = {{"tool_version", meta.tool_version}, {"config_hash", meta.config_hash}};
  out << m.dump() << '\n';
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<CorpusRecord> read_corpus_jsonl(std::istream& in) {
  std::vector<CorpusRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
    if (j.contains("meta")) continue;
    out.push_back(corpus_record_from_json(j));
  }
  return out;
}

// --- ground truth CSV ----------------------------------------------------

inline void write_truth_csv(std::ostream& out, const std::vector<TruthRecord>& truth,
                            const ArtifactMeta& meta) {
  out << "# trajlm " << meta.tool_version << " config=" << meta.config_hash << '\n';
  out << "id,label,kind,ratio,dist\n";
  for (const auto& t : truth) {
    out << t.id << ',' << label_name(t.label) << ',' << t.kind << ',' << format_double(t.ratio) << ','
        << t.dist << '\n';
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

/// Reads data rows of a CSV with a header line, skipping '#' comments.
inline std::vector<std::vector<std::string>> read_csv_rows(std::istream& in, std::size_t expected_cols) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    auto f = split_csv_line(line);
    if (f.size() != expected_cols) {
      throw DataError("CSV row has " + std::to_string(f.size()) + " fields, expected " +
                      std::to_string(expected_cols) + ": " + line);
    }
    rows.push_back(std::move(f));
  }
  return rows;
}

inline std::vector<TruthRecord> read_truth_csv(std::istream& in) {
  std::vector<TruthRecord> out;
  for (auto& f : read_csv_rows(in, 5)) {
    TruthRecord t;
    t.id = f[0];
    t.label = parse_label(f[1]);
    t.kind = f[2];
    t.ratio = parse_double(f[3]);
    t.dist = static_cast<std::int64_t>(parse_double(f[4]));
    out.push_back(std::move(t));
  }
  return out;
}

// --- raw trajectories ----------------------------------------------------

/// Line-delimited {"id", "agent_id"?, "points": [[x, y, t], ...]}.
inline std::vector<grid::RawTrajectory> read_raw_trajectories(std::istream& in) {
  std::vector<grid::RawTrajectory> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      grid::RawTrajectory t;
      t.id = j.at("id").get<std::string>();
      if (j.contains("agent_id") && !j["agent_id"].is_null()) t.agent_id = j["agent_id"].get<std::string>();
      for (const auto& p : j.at("points")) {
        if (p.size() != 3) throw DataError("point must be [x, y, t]");
        t.points.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
      }
      t.validate();
      out.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("raw trajectory line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <class T, class Reader>
T read_file(const std::string& path, Reader reader) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return reader(in);
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << content;
  if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace trajlm
