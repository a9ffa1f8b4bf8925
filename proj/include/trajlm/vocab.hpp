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
#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "trajlm/common.hpp"

namespace trajlm {

enum class TokenKind : std::uint8_t {
  kCell,
  kStaypoint,
  kDurationBucket,
  kActivity,
  kAgentId,
  kWeekday,
  kSpecial,
};

inline constexpr std::array<std::string_view, 7> kTokenKindNames = {
    "cell", "staypoint", "duration", "activity", "agent", "weekday", "special"};

inline constexpr std::array<std::string_view, 7> kWeekdays = {
    "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"};

inline std::string_view kind_name(TokenKind k) { return kTokenKindNames[static_cast<std::size_t>(k)]; }

inline TokenKind parse_kind(std::string_view s) {
  for (std::size_t i = 0; i < kTokenKindNames.size(); ++i) {
    if (kTokenKindNames[i] == s) return static_cast<TokenKind>(i);
  }
  throw DataError("unknown token kind '" + std::string(s) + "'");
}

struct Token {
  TokenKind kind = TokenKind::kSpecial;
  std::string value;

  friend auto operator<=>(const Token&, const Token&) = default;

  /// "kind:value", the form used in corpus files.
  std::string str() const { return std::string(kind_name(kind)) + ":" + value; }

  static Token parse(std::string_view s) {
    const auto sep = s.find(':');
    if (sep == std::string_view::npos) throw DataError("malformed token '" + std::string(s) + "'");
    return make(parse_kind(s.substr(0, sep)), std::string(s.substr(sep + 1)));
  }

  /// Builds a token, enforcing the per-kind value restrictions.
  static Token make(TokenKind kind, std::string value) {
    if (kind == TokenKind::kSpecial && value != "PAD" && value != "SOT" && value != "EOT") {
      throw DataError("unknown special token '" + value + "'");
    }
    if (kind == TokenKind::kWeekday &&
        std::find(kWeekdays.begin(), kWeekdays.end(), value) == kWeekdays.end()) {
      throw DataError("invalid weekday '" + value + "'");
    }
    if (kind == TokenKind::kDurationBucket &&
        (value.empty() || !std::all_of(value.begin(), value.end(), [](char c) { return c >= '0' && c <= '9'; }))) {
      throw DataError("invalid duration bucket '" + value + "'");
    }
    return Token{kind, std::move(value)};
  }
};

inline Token pad_token() { return {TokenKind::kSpecial, "PAD"}; }
inline Token sot_token() { return {TokenKind::kSpecial, "SOT"}; }
inline Token eot_token() { return {TokenKind::kSpecial, "EOT"}; }

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kSotId = 1;
inline constexpr TokenId kEotId = 2;

enum class Label : std::uint8_t { kNormal, kAnomalous };

inline std::string_view label_name(Label l) { return l == Label::kNormal ? "normal" : "anomalous"; }

inline Label parse_label(std::string_view s) {
  if (s == "normal") return Label::kNormal;
  if (s == "anomalous") return Label::kAnomalous;
  throw DataError("invalid label '" + std::string(s) + "'");
}

/// Dense bijection between tokens and ids. PAD, SOT and EOT are always ids 0-2;
/// the rest follow in (kind, value) order, so the result is a function of the
/// token set alone.
class Vocab {
 public:
  Vocab() : Vocab(std::set<Token>{}) {}

  explicit Vocab(const std::set<Token>& tokens) {
    add(pad_token());
    add(sot_token());
    add(eot_token());
    for (const auto& t : tokens) {
      if (t.kind == TokenKind::kSpecial) continue;
      add(t);
    }
  }

  std::size_t size() const { return tokens_.size(); }

  bool contains(const Token& t) const { return ids_.count(t) != 0; }

  TokenId id(const Token& t) const {
    auto it = ids_.find(t);
    if (it == ids_.end()) throw UnknownTokenError(t.str());
    return it->second;
  }

  const Token& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw DataError("token id " + std::to_string(id) + " out of range [0, " +
                      std::to_string(tokens_.size()) + ")");
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t count(TokenKind kind) const {
    return static_cast<std::size_t>(std::count_if(tokens_.begin(), tokens_.end(),
                                                  [kind](const Token& t) { return t.kind == kind; }));
  }

  const std::vector<Token>& tokens() const { return tokens_; }

  /// One token per line, "kind<TAB>value"; line number is the id.
  void write(std::ostream& out) const {
    for (const auto& t : tokens_) out << kind_name(t.kind) << '\t' << t.value << '\n';
  }

  std::string text() const {
    std::ostringstream s;
    write(s);
    return s.str();
  }

  std::uint64_t hash() const { return fnv1a64(text()); }

  static Vocab read(std::istream& in) {
    std::vector<Token> lines;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw DataError("vocab line " + std::to_string(lines.size()) + " lacks a TAB separator");
      }
      lines.push_back(Token::make(parse_kind(line.substr(0, tab)), line.substr(tab + 1)));
    }
    if (lines.size() < 3 || lines[0] != pad_token() || lines[1] != sot_token() || lines[2] != eot_token()) {
      throw DataError("vocab file must start with PAD, SOT, EOT");
    }
    Vocab v(std::set<Token>(lines.begin(), lines.end()));
    if (v.tokens_ != lines) throw DataError("vocab file is not in canonical order");
    return v;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void add(const Token& t) {
    if (ids_.count(t)) return;
    ids_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(t);
  }

  std::vector<Token> tokens_;
  std::map<Token, TokenId> ids_;
};

inline Vocab build_vocab(std::span<const std::vector<Token>> corpus) {
  std::set<Token> all;
  for (const auto& seq : corpus) all.insert(seq.begin(), seq.end());
  return Vocab(all);
}

struct EncodedTrajectory {
  std::string id;
  std::vector<TokenId> ids;
  std::size_t prefix_len = 0;  // agent/weekday/SOT conditioning tokens
  std::optional<Label> label;
  std::optional<std::string> agent;
};

inline EncodedTrajectory encode(std::span<const Token> tokens, const Vocab& vocab, bool with_sot,
                                bool with_eot) {
  EncodedTrajectory out;
  out.ids.reserve(tokens.size() + 2);
  if (with_sot) {
    out.ids.push_back(kSotId);
    ++out.prefix_len;
  }
  for (const auto& t : tokens) {
    out.ids.push_back(vocab.id(t));
    if (t.kind == TokenKind::kAgentId || t.kind == TokenKind::kWeekday) ++out.prefix_len;
  }
  if (with_eot) out.ids.push_back(kEotId);
  return out;
}

inline std::vector<Token> decode(std::span<const TokenId> ids, const Vocab& vocab) {
  std::vector<Token> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(vocab.token(id));
  return out;
}

inline constexpr std::int64_t kDefaultMaxDurationBucket = 12;

/// 1-hour dwell-time bucket, capped at max_bucket.
inline Token bucket_duration(double seconds, std::int64_t max_bucket = kDefaultMaxDurationBucket) {
  if (!(seconds >= 0.0)) throw DomainError("bucket_duration: negative duration");
  const auto bucket = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(seconds / 3600.0)), max_bucket);
  return {TokenKind::kDurationBucket, std::to_string(bucket)};
}

}  // namespace trajlm
