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
#include <sstream>
#include <vector>

#include "trajlm/scoring.hpp"

namespace trajlm {
namespace {

ModelConfig config(std::size_t vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 16;
  c.max_seq_len = 16;
  c.seed = 2;
  return c;
}

Model<double> uniform_model(std::size_t vocab) {
  auto m = init_model<double>(config(vocab));
  m.params.w_out.fill(0.0);
  return m;
}

TEST(TokenLogProbs, MatchNaiveSoftmax) {
  const auto m = init_model<double>(config(11));
  std::vector<TokenId> ids{1, 4, 7, 3, 2};
  const auto logits = forward(m, std::span<const TokenId>(ids));
  const auto s = token_log_probs(m, std::span<const TokenId>(ids));
  ASSERT_EQ(s.log_probs.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    double z = 0;
    for (std::size_t t = 0; t < 11; ++t) z += std::exp(logits(i, t));
    EXPECT_NEAR(s.log_probs[i], logits(i, static_cast<std::size_t>(ids[i + 1])) - std::log(z), 1e-12);
    EXPECT_EQ(s.positions[i], i + 1);
  }
}

TEST(TokenLogProbs, SkipsPadTargets) {
  const auto m = init_model<double>(config(11));
  std::vector<TokenId> ids{1, 4, 7, kPadId, kPadId};
  const auto s = token_log_probs(m, std::span<const TokenId>(ids));
  EXPECT_EQ(s.positions, (std::vector<std::size_t>{1, 2}));
}

TEST(Perplexity, UniformModelGivesVocabSize) {
  for (std::size_t v : {5u, 11u, 40u}) {
    const auto m = uniform_model(v);
    Rng rng(v);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<TokenId> ids(2 + uniform_index(rng, 14));
      for (auto& id : ids) id = static_cast<TokenId>(1 + uniform_index(rng, v - 1));
      EXPECT_NEAR(perplexity(m, std::span<const TokenId>(ids)), static_cast<double>(v), 1e-6);
    }
  }
}

TEST(Perplexity, ClosedForms) {
  const std::vector<double> zeros{0, 0, 0};
  EXPECT_EQ(perplexity_from(zeros), 1.0);
  const std::vector<double> one{std::log(4.0)};
  EXPECT_NEAR(perplexity_from(one), 4.0, 1e-12);
  const std::vector<double> two{std::log(2.0), std::log(8.0)};
  EXPECT_NEAR(perplexity_from(two), 4.0, 1e-12);
  EXPECT_THROW(perplexity_from(std::vector<double>{}), DomainError);
  const auto m = uniform_model(5);
  std::vector<TokenId> single{3};
  EXPECT_THROW(perplexity(m, std::span<const TokenId>(single)), DomainError);
}

TEST(Perplexity, DatasetIsMeanOfTrajectories) {
  const auto m = init_model<double>(config(9));
  std::vector<EncodedTrajectory> corpus(3);
  corpus[0].ids = {1, 3, 4};
  corpus[1].ids = {1, 5, 6, 7, 2};
  corpus[2].ids = {1, 8};
  double expected = 0;
  for (const auto& t : corpus) expected += perplexity(m, std::span<const TokenId>(t.ids));
  EXPECT_DOUBLE_EQ(dataset_perplexity(m, corpus), expected / 3);
}

TEST(Thresholds, MeanPlusPopulationStd) {
  std::vector<PerplexitySample> s{{"a", 2}, {"a", 4}, {"b", 10}, {"b", 10}, {"c", 5}};
  const auto t = compute_thresholds(s, true);
  ASSERT_TRUE(t.global.has_value());
  const double mean = 31.0 / 5;
  double var = 0;
  for (double x : {2.0, 4.0, 10.0, 10.0, 5.0}) var += (x - mean) * (x - mean) / 5;
  EXPECT_NEAR(t.global->threshold, mean + std::sqrt(var), 1e-12);
  EXPECT_EQ(t.per_agent.at("a").threshold, 4.0);
  EXPECT_EQ(t.per_agent.at("b").threshold, 10.0);
  EXPECT_EQ(t.per_agent.at("b").std, 0.0);
  EXPECT_FALSE(t.per_agent.count("c"));
  ASSERT_EQ(t.warnings.size(), 1u);

  EXPECT_THROW(select_threshold(t, Scope::kPerAgent, std::string("c")), DataError);
  EXPECT_THROW(select_threshold(t, Scope::kPerAgent, std::nullopt), DataError);
  EXPECT_EQ(&select_threshold(t, Scope::kGlobal, std::string("c")), &*t.global);

  const auto flat = compute_thresholds(s, false);
  EXPECT_TRUE(flat.per_agent.empty());

  std::vector<PerplexitySample> bad{{"a", 2}, {"a", 0}};
  EXPECT_THROW(compute_thresholds(bad, true), DomainError);
}

TEST(Verdict, StrictlyAbove) {
  EXPECT_EQ(verdict_for(5.0, 5.0), Label::kNormal);
  EXPECT_EQ(verdict_for(5.0 + 1e-12, 5.0), Label::kAnomalous);
}

TEST(Classify, UsesRequestedScope) {
  ThresholdTable t;
  t.global = ThresholdEntry{3.0, 2.0, 1.0, 10};
  t.per_agent["a"] = ThresholdEntry{1.5, 1.2, 0.3, 5};
  Surprisal s{{std::log(2.0), std::log(2.0)}, {1, 2}};
  const auto g = classify("t1", std::string("a"), s, t, Scope::kGlobal);
  EXPECT_NEAR(g.perplexity, 2.0, 1e-12);
  EXPECT_EQ(g.verdict, Label::kNormal);
  const auto p = classify("t1", std::string("a"), s, t, Scope::kPerAgent);
  EXPECT_EQ(p.threshold, 1.5);
  EXPECT_EQ(p.verdict, Label::kAnomalous);
}

TEST(ScoreFiles, RoundTrip) {
  std::vector<ScoreReport> reports(2);
  reports[0] = {"x", std::string("a"), {}, {}, 1.0 / 3.0, 2.5, Label::kNormal};
  reports[1] = {"y", std::nullopt, {}, {}, 7.25, 2.5, Label::kAnomalous};
  std::stringstream buf;
  write_scores_csv(buf, reports, ArtifactMeta{"0.0", "abc"});
  EXPECT_EQ(buf.str().rfind("# trajlm 0.0 config=abc\nid,agent,perplexity,threshold,verdict\n", 0), 0u);
  const auto back = read_scores_csv(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].perplexity, 1.0 / 3.0);
  EXPECT_EQ(back[0].agent, std::optional<std::string>("a"));
  EXPECT_FALSE(back[1].agent.has_value());
  EXPECT_EQ(back[1].verdict, Label::kAnomalous);

  ThresholdTable t;
  t.global = ThresholdEntry{3.1, 2.0, 1.1, 10};
  t.per_agent["a"] = ThresholdEntry{1.5, 1.2, 0.3, 5};
  std::stringstream tb;
  write_thresholds_csv(tb, t, ArtifactMeta{"0.0", "abc"});
  const auto tt = read_thresholds_csv(tb);
  EXPECT_EQ(tt.global->threshold, 3.1);
  EXPECT_EQ(tt.per_agent.at("a").count, 5u);
}

TEST(ParseScope, Names) {
  EXPECT_EQ(parse_scope("global"), Scope::kGlobal);
  EXPECT_EQ(parse_scope(scope_name(Scope::kPerAgent)), Scope::kPerAgent);
  EXPECT_THROW(parse_scope("agent"), ConfigError);
}

}  // namespace
}  // namespace trajlm
