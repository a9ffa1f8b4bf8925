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

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "trajlm/online.hpp"

namespace trajlm {
namespace {

ModelConfig config() {
  ModelConfig c;
  c.vocab_size = 17;
  c.d_model = 12;
  c.n_heads = 3;
  c.n_layers = 2;
  c.d_ff = 24;
  c.max_seq_len = 20;
  c.seed = 21;
  return c;
}

template <class Real>
Model<Real> spread_model() {
  auto m = init_model<Real>(config());
  Rng rng(77);
  for (auto& [name, t] : m.params.tensors()) {
    for (auto& v : t->values()) v += static_cast<Real>(0.2 * standard_normal(rng));
  }
  return m;
}

std::vector<TokenId> random_ids(Rng& rng, std::size_t n) {
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = static_cast<TokenId>(1 + uniform_index(rng, 16));
  return ids;
}

TEST(Session, MatchesBatchScoring) {
  const auto m = spread_model<double>();
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ids = random_ids(rng, 2 + uniform_index(rng, 19));
    const std::size_t head = 1 + uniform_index(rng, ids.size() - 1);
    const auto batch = surprisal(m, std::span<const TokenId>(ids));
    auto s = open_session(m, std::span<const TokenId>(ids).first(head));
    std::vector<double> online;
    for (std::size_t i = head; i < ids.size(); ++i) {
      const auto r = s.push(ids[i]);
      EXPECT_EQ(r.surprisal, batch.values[i - 1]) << "trial " << trial << " position " << i;
      online.push_back(r.surprisal);
      EXPECT_EQ(r.running_perplexity, perplexity_from(online));
    }
    EXPECT_EQ(s.length(), ids.size());
    EXPECT_EQ(s.scored(), ids.size() - head);
    EXPECT_EQ(s.tokens(), ids);
    if (head == 1) {
      EXPECT_EQ(s.running_perplexity(), perplexity_from(batch.values));
    }
  }
}

TEST(Session, SinglePrecisionMatchesBatch) {
  const auto m = spread_model<float>();
  Rng rng(2);
  const auto ids = random_ids(rng, 12);
  const auto batch = surprisal(m, std::span<const TokenId>(ids));
  auto s = open_session(m, std::span<const TokenId>(ids).first(1));
  for (std::size_t i = 1; i < ids.size(); ++i) EXPECT_EQ(s.push(ids[i]).surprisal, batch.values[i - 1]);
}

TEST(Session, CacheIsAppendOnly) {
  const auto m = spread_model<double>();
  Rng rng(3);
  const auto ids = random_ids(rng, 10);
  auto s = open_session(m, std::span<const TokenId>(ids).first(2));
  for (std::size_t i = 2; i < ids.size(); ++i) {
    const auto keys = s.cached_keys(1);
    const auto values = s.cached_values(1);
    s.push(ids[i]);
    ASSERT_EQ(s.cached_keys(1).rows(), i + 1);
    for (std::size_t r = 0; r < i; ++r) {
      for (std::size_t t = 0; t < 12; ++t) {
        EXPECT_EQ(s.cached_keys(1)(r, t), keys(r, t));
        EXPECT_EQ(s.cached_values(1)(r, t), values(r, t));
      }
    }
  }
}

TEST(Session, FullAndInvalidPushesLeaveStateIntact) {
  const auto m = spread_model<double>();
  Rng rng(4);
  const auto ids = random_ids(rng, 20);
  auto s = open_session(m, std::span<const TokenId>(ids).first(1));
  for (std::size_t i = 1; i < 20; ++i) s.push(ids[i]);
  EXPECT_TRUE(s.full());
  const double ppl = s.running_perplexity();
  EXPECT_THROW(s.push(3), DataError);
  EXPECT_EQ(s.length(), 20u);
  EXPECT_EQ(s.running_perplexity(), ppl);

  auto t = open_session(m, std::span<const TokenId>(ids).first(1));
  EXPECT_THROW(t.push(17), DataError);
  EXPECT_THROW(t.push(-1), DataError);
  EXPECT_EQ(t.length(), 1u);
  EXPECT_EQ(t.scored(), 0u);
  EXPECT_THROW(t.running_perplexity(), DomainError);
}

TEST(Session, RejectsBadConditioning) {
  const auto m = spread_model<double>();
  std::vector<TokenId> empty, bad{1, 40};
  EXPECT_THROW(open_session(m, std::span<const TokenId>(empty)), DomainError);
  EXPECT_THROW(open_session(m, std::span<const TokenId>(bad)), DataError);
}

TEST(Session, IndependentSessionsAgree) {
  const auto m = spread_model<double>();
  Rng rng(5);
  const auto ids = random_ids(rng, 15);
  auto a = open_session(m, std::span<const TokenId>(ids).first(1));
  auto b = open_session(m, std::span<const TokenId>(ids).first(1));
  auto other = open_session(m, std::span<const TokenId>(ids).first(3));
  for (std::size_t i = 1; i < 15; ++i) {
    EXPECT_EQ(a.push(ids[i]).surprisal, b.push(ids[i]).surprisal);
    if (i >= 3) other.push(ids[i]);
  }
}

TEST(PartialVerdict, FlipsOnImprobableToken) {
  const auto m = spread_model<double>();
  Rng rng(6);
  const auto ids = random_ids(rng, 8);
  auto s = open_session(m, std::span<const TokenId>(ids).first(1));
  for (std::size_t i = 1; i < ids.size(); ++i) s.push(ids[i]);

  // The least likely next token under the model, found by batch scoring
  // every candidate continuation.
  TokenId worst = 1;
  double worst_s = -1;
  for (TokenId cand = 1; cand < 17; ++cand) {
    auto ext = ids;
    ext.push_back(cand);
    const double v = surprisal(m, std::span<const TokenId>(ext)).values.back();
    if (v > worst_s) {
      worst_s = v;
      worst = cand;
    }
  }
  ThresholdTable table;
  table.global = ThresholdEntry{s.running_perplexity() * (1 + 1e-9), 0, 0, 2};
  EXPECT_EQ(partial_verdict(s, table, Scope::kGlobal), Label::kNormal);
  ASSERT_GT(worst_s, std::log(s.running_perplexity()));
  s.push(worst);
  EXPECT_EQ(partial_verdict(s, table, Scope::kGlobal), Label::kAnomalous);
}

}  // namespace
}  // namespace trajlm
