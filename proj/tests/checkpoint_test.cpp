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

#include <cstring>
#include <string>

#include "trajlm/checkpoint.hpp"
#include "trajlm/train.hpp"

namespace trajlm {
namespace {

ModelConfig config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ff = 16;
  c.max_seq_len = 8;
  c.seed = 9;
  return c;
}

Model<double> trained(OptimizerState<double>& state) {
  auto m = init_model<double>(config());
  state = OptimizerState<double>::fresh(m.config);
  TrainConfig tc;
  tc.n_epochs = 2;
  tc.batch_size = 2;
  train(m, {{1, 3, 4, 5}, {1, 6, 7, 8, 2}, {1, 9, 10, 11}}, tc, state);
  return m;
}

void expect_kind(const std::string& bytes, CheckpointError::Kind kind) {
  try {
    load_checkpoint(bytes);
    FAIL() << "expected a checkpoint error";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  OptimizerState<double> state;
  const auto m = trained(state);
  const auto bytes = save_checkpoint(m, 0xabcdefULL, &state, "test run");
  const auto loaded = load_checkpoint(bytes);
  EXPECT_EQ(loaded.model.config, m.config);
  EXPECT_TRUE(loaded.model.params == m.params);
  EXPECT_EQ(loaded.vocab_hash, 0xabcdefULL);
  EXPECT_EQ(loaded.provenance, "test run");
  ASSERT_TRUE(loaded.optimizer.has_value());
  EXPECT_TRUE(loaded.optimizer->m == state.m);
  EXPECT_TRUE(loaded.optimizer->v == state.v);
  EXPECT_EQ(loaded.optimizer->step, state.step);
  EXPECT_EQ(loaded.optimizer->epochs_done, 2u);
  EXPECT_EQ(save_checkpoint(loaded.model, 0xabcdefULL, &*loaded.optimizer, "test run"), bytes);
}

TEST(Checkpoint, WithoutOptimizer) {
  const auto m = init_model<double>(config());
  const auto loaded = load_checkpoint(save_checkpoint(m, 1));
  EXPECT_FALSE(loaded.optimizer.has_value());
  EXPECT_TRUE(loaded.model.params == m.params);
}

TEST(Checkpoint, SinglePrecisionLoad) {
  const auto m = init_model<double>(config());
  const auto f = load_checkpoint<float>(save_checkpoint(m, 1));
  EXPECT_EQ(f.model.params.w_out(3, 5), static_cast<float>(m.params.w_out(3, 5)));
}

TEST(Checkpoint, EveryTruncationIsRejected) {
  const auto bytes = save_checkpoint(init_model<double>(config()), 7);
  for (std::size_t n = 0; n < bytes.size(); n += 13) {
    EXPECT_THROW(load_checkpoint(bytes.substr(0, n)), CheckpointError) << "length " << n;
  }
  expect_kind(bytes.substr(0, bytes.size() - 1), CheckpointError::Kind::kTruncated);
}

TEST(Checkpoint, BadMagicAndVersion) {
  auto bytes = save_checkpoint(init_model<double>(config()), 7);
  auto wrong_magic = bytes;
  wrong_magic[0] = 'X';
  expect_kind(wrong_magic, CheckpointError::Kind::kBadMagic);
  auto wrong_version = bytes;
  wrong_version[kCheckpointMagic.size()] = 9;
  expect_kind(wrong_version, CheckpointError::Kind::kVersion);
  expect_kind(bytes + "x", CheckpointError::Kind::kShape);
}

TEST(Checkpoint, VocabularyMismatch) {
  Vocab vocab(std::set<Token>{Token::parse("staypoint:home"), Token::parse("staypoint:work")});
  const auto loaded = load_checkpoint(save_checkpoint(init_model<double>(config()), vocab.hash()));
  EXPECT_NO_THROW(loaded.require_vocab(vocab));
  Vocab other(std::set<Token>{Token::parse("staypoint:home")});
  try {
    loaded.require_vocab(other);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::kVocabHash);
  }
}

TEST(Checkpoint, DeterministicBytes) {
  OptimizerState<double> a, b;
  EXPECT_EQ(save_checkpoint(trained(a), 5, &a), save_checkpoint(trained(b), 5, &b));
}

}  // namespace
}  // namespace trajlm
