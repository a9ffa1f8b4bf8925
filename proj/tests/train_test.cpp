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

#include "trajlm/model.hpp"
#include "trajlm/train.hpp"

namespace trajlm {
namespace {

ModelConfig small_config(std::size_t vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 32;
  c.max_seq_len = 12;
  c.seed = 5;
  return c;
}

/// Sequences whose first token is unique, so everything after it can be
/// memorized exactly.
std::vector<std::vector<TokenId>> keyed_corpus(std::size_t n, std::size_t len, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<TokenId>> out;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<TokenId> s{static_cast<TokenId>(1 + k)};
    while (s.size() < len) s.push_back(static_cast<TokenId>(1 + n + uniform_index(rng, vocab - n - 1)));
    out.push_back(std::move(s));
  }
  return out;
}

double corpus_perplexity(const Model<double>& m, const std::vector<std::vector<TokenId>>& corpus) {
  double nll = 0;
  std::size_t n = 0;
  for (const auto& s : corpus) {
    const auto t = Targets::next_token(s);
    const double loss = nll_loss(forward(m, std::span<const TokenId>(s)), std::span<const TokenId>(t.ids), t.live);
    nll += loss * static_cast<double>(t.live_count());
    n += t.live_count();
  }
  return std::exp(nll / static_cast<double>(n));
}

TEST(Train, LossDecreasesOnRepeatedBatch) {
  auto m = init_model<double>(small_config(16));
  const auto corpus = keyed_corpus(4, 8, 16, 1);
  std::vector<const std::vector<TokenId>*> batch;
  for (const auto& s : corpus) batch.push_back(&s);
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  auto state = OptimizerState<double>::fresh(m.config);
  auto grads = Parameters<double>::zeros(m.config);
  double previous = INFINITY;
  for (int step = 0; step < 10; ++step) {
    const double loss = train_step(m, std::span<const std::vector<TokenId>* const>(batch), tc, state, grads);
    EXPECT_LT(loss, previous) << "step " << step;
    previous = loss;
  }
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  auto m = init_model<double>(small_config(16));
  const auto before = m.params;
  TrainConfig tc;
  tc.n_epochs = 0;
  const auto log = train(m, keyed_corpus(4, 8, 16, 2), tc);
  EXPECT_TRUE(m.params == before);
  EXPECT_TRUE(log.epoch_loss.empty());
}

TEST(Train, MemorizesSmallCorpus) {
  auto m = init_model<double>(small_config(32));
  const auto corpus = keyed_corpus(20, 10, 32, 3);
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.batch_size = 20;
  tc.n_epochs = 300;
  const auto log = train(m, corpus, tc);
  ASSERT_EQ(log.epoch_loss.size(), 300u);
  EXPECT_LT(log.epoch_loss.back(), log.epoch_loss.front());
  EXPECT_LT(corpus_perplexity(m, corpus), 1.1);
}

TEST(Train, DeterministicForSeed) {
  const auto corpus = keyed_corpus(8, 8, 20, 4);
  TrainConfig tc;
  tc.batch_size = 3;
  tc.n_epochs = 2;
  auto a = init_model<double>(small_config(20));
  auto b = init_model<double>(small_config(20));
  train(a, corpus, tc);
  train(b, corpus, tc);
  EXPECT_TRUE(a.params == b.params);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto corpus = keyed_corpus(8, 8, 20, 5);
  TrainConfig tc;
  tc.batch_size = 3;
  tc.n_epochs = 4;
  auto whole = init_model<double>(small_config(20));
  auto ws = OptimizerState<double>::fresh(whole.config);
  train(whole, corpus, tc, ws);

  auto split = init_model<double>(small_config(20));
  auto ss = OptimizerState<double>::fresh(split.config);
  tc.n_epochs = 2;
  train(split, corpus, tc, ss);
  train(split, corpus, tc, ss);
  EXPECT_TRUE(whole.params == split.params);
  EXPECT_EQ(ws.step, ss.step);
  EXPECT_EQ(ss.epochs_done, 4u);
}

TEST(Train, DropoutOnlyAffectsTraining) {
  auto c = small_config(20);
  c.dropout_rate = 0.3;
  const auto corpus = keyed_corpus(6, 8, 20, 6);
  TrainConfig tc;
  tc.n_epochs = 2;
  auto a = init_model<double>(c);
  auto b = init_model<double>(c);
  train(a, corpus, tc);
  train(b, corpus, tc);
  EXPECT_TRUE(a.params == b.params);
  const auto& s = corpus[0];
  EXPECT_EQ(forward(a, std::span<const TokenId>(s)), forward(a, std::span<const TokenId>(s)));
}

TEST(Train, ClippingBoundsUpdateNorm) {
  auto c = small_config(16);
  auto g = Parameters<double>::zeros(c);
  g.w_out.fill(10.0);
  auto m = init_model<double>(c);
  auto state = OptimizerState<double>::fresh(c);
  TrainConfig tc;
  tc.clip_norm = 1.0;
  adam_update(m, g, state, tc);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-12);
  EXPECT_EQ(state.step, 1u);
}

TEST(Train, NonFiniteLossIsReported) {
  auto m = init_model<double>(small_config(16));
  m.params.w_out(0, 3) = NAN;
  TrainConfig tc;
  tc.n_epochs = 1;
  EXPECT_THROW(train(m, keyed_corpus(4, 8, 16, 7), tc), TrainingDiverged);
}

TEST(Train, RejectsBadConfig) {
  auto m = init_model<double>(small_config(16));
  TrainConfig tc;
  tc.learning_rate = 0;
  EXPECT_THROW(train(m, keyed_corpus(2, 4, 16, 8), tc), ConfigError);
  tc = TrainConfig{};
  std::vector<std::vector<TokenId>> bad{{1, 2, 99}};
  EXPECT_THROW(train(m, bad, tc), DataError);
}

}  // namespace
}  // namespace trajlm
