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
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "trajlm/corpus.hpp"
#include "trajlm/vocab.hpp"

namespace fs = std::filesystem;

namespace trajlm {
namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args, const std::string& stdin_path = "") {
  const fs::path capture = fs::temp_directory_path() / "trajlm_cli_capture.txt";
  std::string cmd = std::string(TRAJLM_CLI) + " " + args;
  if (!stdin_path.empty()) cmd += " < '" + stdin_path + "'";
  cmd += " > '" + capture.string() + "' 2>/dev/null";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(capture);
  std::ostringstream s;
  s << in.rdbuf();
  r.out = s.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("trajlm_cli_" + name);
  fs::remove_all(d);
  return d;
}

std::string tiny(const fs::path& dir) { return "-p tiny -o '" + dir.string() + "'"; }

void full_chain(const fs::path& dir) {
  ASSERT_EQ(run("gen-data " + tiny(dir)).code, 0);
  ASSERT_EQ(run("build-vocab " + tiny(dir)).code, 0);
  ASSERT_EQ(run("train " + tiny(dir)).code, 0);
  ASSERT_EQ(run("score " + tiny(dir)).code, 0);
}

TEST(Cli, GenDataIsDeterministic) {
  const auto a = fresh_dir("gen_a"), b = fresh_dir("gen_b"), c = fresh_dir("gen_c");
  const auto ra = run("gen-data " + tiny(a));
  ASSERT_EQ(ra.code, 0);
  EXPECT_NE(ra.out.find("trajectories "), std::string::npos) << ra.out;
  EXPECT_NE(ra.out.find("anomalous 6\n"), std::string::npos) << ra.out;
  ASSERT_EQ(run("gen-data " + tiny(b)).code, 0);
  ASSERT_EQ(run("gen-data " + tiny(c) + " --seed 5").code, 0);
  EXPECT_EQ(slurp(a / "corpus.jsonl"), slurp(b / "corpus.jsonl"));
  EXPECT_EQ(slurp(a / "truth.csv"), slurp(b / "truth.csv"));
  EXPECT_NE(slurp(a / "corpus.jsonl"), slurp(c / "corpus.jsonl"));
}

TEST(Cli, FullChainProducesArtifacts) {
  const auto d = fresh_dir("chain");
  full_chain(d);
  for (const char* f : {"corpus.jsonl", "truth.csv", "config.ini", "vocab.tsv", "vocab.tsv.meta.json", "model.ckpt",
                        "loss.csv", "scores.csv", "thresholds.csv", "surprisal.csv"}) {
    EXPECT_TRUE(fs::exists(d / f)) << f;
  }
  const auto ev = run("eval " + tiny(d));
  ASSERT_EQ(ev.code, 0);
  EXPECT_NE(ev.out.find("agent,f1,pr_auc,tp,fp,fn,tn"), std::string::npos) << ev.out;
  EXPECT_TRUE(fs::exists(d / "eval_agents.csv"));
  EXPECT_TRUE(fs::exists(d / "eval_global.csv"));
  EXPECT_EQ(slurp(d / "loss.csv").find("# trajlm"), 0u);

  // The same run done in memory gives the same table.
  const auto e2e = fresh_dir("chain_e2e");
  ASSERT_EQ(run("eval --end-to-end " + tiny(e2e)).code, 0);
  EXPECT_EQ(slurp(d / "eval_global.csv"), slurp(e2e / "eval_global.csv"));
  EXPECT_EQ(slurp(d / "eval_agents.csv"), slurp(e2e / "eval_agents.csv"));

  const auto ratios = run("eval --ratios " + tiny(d));
  ASSERT_EQ(ratios.code, 0);
  EXPECT_NE(ratios.out.find("ratio,f1,pr_auc,n,skipped"), std::string::npos);
}

TEST(Cli, StreamMatchesBatchScores) {
  const auto d = fresh_dir("stream");
  full_chain(d);
  std::ifstream vin(d / "vocab.tsv");
  const auto vocab = Vocab::read(vin);
  std::ifstream cin(d / "corpus.jsonl");
  const auto encoded = encode_corpus(read_corpus_jsonl(cin), vocab);
  const auto& t = encoded.front();
  const fs::path input = d / "stream_in.txt";
  {
    std::ofstream out(input);
    for (TokenId id : t.ids) out << vocab.token(id).str() << '\n';
  }
  const auto r = run("stream " + tiny(d), input.string());
  ASSERT_EQ(r.code, 0);

  // surprisal.csv rows for this trajectory: id,pos,token,surprisal
  std::vector<std::string> batch;
  std::istringstream sur(slurp(d / "surprisal.csv"));
  for (std::string line; std::getline(sur, line);) {
    if (line.rfind(t.id + ",", 0) == 0) batch.push_back(line.substr(line.rfind(',') + 1));
  }
  std::vector<std::string> streamed;
  std::istringstream so(r.out);
  std::string line;
  std::getline(so, line);
  EXPECT_EQ(line, "pos,token,surprisal,running_ppl,verdict");
  while (std::getline(so, line)) {
    std::vector<std::string> f;
    std::istringstream fs_(line);
    for (std::string x; std::getline(fs_, x, ',');) f.push_back(x);
    ASSERT_EQ(f.size(), 5u) << line;
    streamed.push_back(f[2]);
  }
  EXPECT_EQ(streamed, batch);
  ASSERT_EQ(streamed.size(), t.ids.size() - 1);
}

TEST(Cli, ResumeMatchesUninterruptedTraining) {
  const auto a = fresh_dir("resume_a"), b = fresh_dir("resume_b");
  for (const auto& d : {a, b}) {
    ASSERT_EQ(run("gen-data " + tiny(d)).code, 0);
    ASSERT_EQ(run("build-vocab " + tiny(d)).code, 0);
  }
  ASSERT_EQ(run("train " + tiny(a) + " --epochs 2").code, 0);
  ASSERT_EQ(run("train " + tiny(b) + " --epochs 1").code, 0);
  ASSERT_EQ(run("train " + tiny(b) + " --epochs 2 --resume").code, 0);
  EXPECT_EQ(slurp(a / "model.ckpt"), slurp(b / "model.ckpt"));
  EXPECT_EQ(slurp(a / "loss.csv"), slurp(b / "loss.csv"));
}

TEST(Cli, SinglePrecisionChain) {
  const auto d = fresh_dir("f32");
  {
    fs::create_directories(d);
    std::ofstream cfg(d / "f32.ini");
    cfg << "[model]\nprecision = f32\n";
  }
  const std::string args = tiny(d) + " -c '" + (d / "f32.ini").string() + "'";
  ASSERT_EQ(run("gen-data " + args).code, 0);
  ASSERT_EQ(run("build-vocab " + args).code, 0);
  ASSERT_EQ(run("train " + args).code, 0);
  ASSERT_EQ(run("score " + args).code, 0);
  EXPECT_EQ(run("eval " + args).code, 0);
}

TEST(Cli, ErrorExitCodes) {
  const auto d = fresh_dir("errors");
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("train --bogus").code, 1);
  EXPECT_EQ(run("gen-data -p nope -o '" + d.string() + "'").code, 1);
  fs::create_directories(d);
  {
    std::ofstream cfg(d / "bad.ini");
    cfg << "[model]\nwidth = 4\n";
  }
  EXPECT_EQ(run("gen-data " + tiny(d) + " -c '" + (d / "bad.ini").string() + "'").code, 1);
  ASSERT_EQ(run("gen-data " + tiny(d)).code, 0);
  EXPECT_EQ(run("train " + tiny(d)).code, 2);
  EXPECT_EQ(run("score " + tiny(d)).code, 2);
}

}  // namespace
}  // namespace trajlm
