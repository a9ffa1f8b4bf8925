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

// trajlm command-line driver: data generation, training, scoring, streaming
// and evaluation over files in one output directory.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "trajlm/checkpoint.hpp"
#include "trajlm/config.hpp"
#include "trajlm/corpus.hpp"
#include "trajlm/eval.hpp"
#include "trajlm/online.hpp"
#include "trajlm/pipeline.hpp"
#include "trajlm/scoring.hpp"
#include "trajlm/train.hpp"
#include "trajlm/vocab.hpp"

namespace fs = std::filesystem;
using namespace trajlm;

namespace {

struct Common {
  std::string config;
  std::string preset = "pol";
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct Ctx {
  RunConfig rc;
  ArtifactMeta meta;

  std::string path(const std::string& name) const { return (fs::path(rc.out_dir) / name).string(); }
  std::string or_default(const std::string& given, const std::string& name) const {
    return given.empty() ? path(name) : given;
  }
};

Ctx load_context(const Common& c) {
  RunConfig rc = preset(c.preset);
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw ConfigError("cannot open config file '" + c.config + "'");
    rc = parse_run_config(in, rc);
  }
  if (c.seed) rc.seed = *c.seed;
  if (!c.out.empty()) rc.out_dir = c.out;
  rc.validate();
  return {rc, ArtifactMeta{std::string(kToolVersion), rc.hash()}};
}

/// Calls fn.template operator()<Real>() with Real picked by model.precision.
template <class Fn>
int with_precision(const RunConfig& rc, Fn&& fn) {
  if (rc.precision == Precision::kF32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

std::string provenance(const ArtifactMeta& m) { return "trajlm " + m.tool_version + " config=" + m.config_hash; }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + dir + "': " + ec.message());
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  ensure_dir(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path().string());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

std::ifstream open_in(const std::string& path, const std::string& hint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'" + (hint.empty() ? "" : "; " + hint));
  return in;
}

std::vector<CorpusRecord> load_corpus(const std::string& path) {
  auto in = open_in(path, "run gen-data first");
  return read_corpus_jsonl(in);
}

Vocab load_vocab(const std::string& path) {
  auto in = open_in(path, "run build-vocab first");
  return Vocab::read(in);
}

template <class Real>
LoadedCheckpoint<Real> load_model(const std::string& path, const Vocab& vocab) {
  if (!fs::exists(path)) throw DataError("cannot open checkpoint '" + path + "'; run train first");
  auto ck = load_checkpoint<Real>(read_binary_file(path));
  ck.require_vocab(vocab);
  return ck;
}

/// The vocab file is one token per line (line number = id), so its
/// provenance goes into a JSON sidecar.
void write_vocab(const std::string& path, const Vocab& v, const ArtifactMeta& meta) {
  {
    auto out = open_out(path);
    v.write(out);
  }
  auto out = open_out(path + ".meta.json");
  out << nlohmann::json{{"tool_version", meta.tool_version}, {"config_hash", meta.config_hash},
                        {"vocab_hash", hex64(v.hash())}}
             .dump()
      << '\n';
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& common, const std::string& location) {
  auto ctx = load_context(common);
  std::optional<synth::LocationConfig> loc;
  if (!location.empty()) loc = synth::parse_location_config(location);
  const auto corpus = generate_corpus(ctx.rc, loc);
  ensure_dir(ctx.rc.out_dir);
  {
    auto out = open_out(ctx.path("corpus.jsonl"));
    write_corpus_jsonl(out, corpus.records, ctx.meta);
  }
  {
    auto out = open_out(ctx.path("truth.csv"));
    write_truth_csv(out, corpus.truth, ctx.meta);
  }
  {
    auto out = open_out(ctx.path("config.ini"));
    out << "# " << provenance(ctx.meta) << '\n' << ctx.rc.to_ini();
  }
  std::size_t anomalous = 0;
  for (const auto& r : corpus.records) anomalous += r.label == Label::kAnomalous;
  std::cout << "trajectories " << corpus.records.size() << '\n'
            << "anomalous " << anomalous << '\n'
            << "vocab " << build_vocab(corpus.records).size() << '\n'
            << "config " << ctx.meta.config_hash << '\n';
  return 0;
}

int cmd_build_vocab(const Common& common, const std::string& corpus_path, const std::string& vocab_path) {
  auto ctx = load_context(common);
  const auto records = load_corpus(ctx.or_default(corpus_path, "corpus.jsonl"));
  const auto vocab = build_vocab(records);
  write_vocab(ctx.or_default(vocab_path, "vocab.tsv"), vocab, ctx.meta);
  std::cout << "vocab " << vocab.size() << " hash " << hex64(vocab.hash()) << '\n';
  return 0;
}

std::vector<std::pair<std::size_t, double>> read_loss_log(const std::string& path) {
  std::vector<std::pair<std::size_t, double>> rows;
  if (!fs::exists(path)) return rows;
  auto in = open_in(path, "");
  for (auto& f : read_csv_rows(in, 2)) rows.emplace_back(static_cast<std::size_t>(std::stoull(f[0])), parse_double(f[1]));
  return rows;
}

template <class Real>
int train_impl(const Ctx& ctx, const std::string& corpus_path, const std::string& vocab_path,
               const std::string& ckpt_path_in, bool resume, std::optional<std::size_t> epochs) {
  const auto vocab = load_vocab(ctx.or_default(vocab_path, "vocab.tsv"));
  const auto records = load_corpus(ctx.or_default(corpus_path, "corpus.jsonl"));
  const auto encoded = encode_corpus(records, vocab);
  const std::string ckpt_path = ctx.or_default(ckpt_path_in, "model.ckpt");
  const std::string log_path = ctx.path("loss.csv");

  Model<Real> model;
  OptimizerState<Real> state;
  std::vector<std::pair<std::size_t, double>> log;
  if (resume) {
    auto ck = load_model<Real>(ckpt_path, vocab);
    if (!ck.optimizer) throw DataError("checkpoint '" + ckpt_path + "' has no optimizer state to resume from");
    model = std::move(ck.model);
    state = std::move(*ck.optimizer);
    for (const auto& row : read_loss_log(log_path)) {
      if (row.first <= state.epochs_done) log.push_back(row);
    }
  } else {
    const auto mc = ctx.rc.model_config(vocab.size());
    if (longest(encoded) > mc.max_seq_len) {
      throw ConfigError("model.max_seq_len " + std::to_string(mc.max_seq_len) + " is shorter than the longest sequence (" +
                        std::to_string(longest(encoded)) + ")");
    }
    model = init_model<Real>(mc);
    state = OptimizerState<Real>::fresh(mc);
  }
  auto tc = ctx.rc.train_config();
  const std::size_t total = epochs.value_or(tc.n_epochs);
  tc.n_epochs = total > state.epochs_done ? total - state.epochs_done : 0;
  train(model, training_sequences(encoded, ctx.rc.exclude_anomalous), tc, state, [&](std::size_t e, double loss) {
    log.emplace_back(e, loss);
    std::cout << "epoch " << e << " loss " << format_double(loss) << std::endl;
  });
  {
    auto out = open_out(ckpt_path, true);
    out << save_checkpoint(model, vocab.hash(), &state, provenance(ctx.meta));
  }
  {
    auto out = open_out(log_path);
    out << "# " << provenance(ctx.meta) << "\nepoch,loss\n";
    for (const auto& [e, l] : log) out << e << ',' << format_double(l) << '\n';
  }
  return 0;
}

int cmd_train(const Common& common, const std::string& corpus_path, const std::string& vocab_path,
              const std::string& ckpt_path, bool resume, std::optional<std::size_t> epochs) {
  const auto ctx = load_context(common);
  return with_precision(ctx.rc, [&]<class Real>() {
    return train_impl<Real>(ctx, corpus_path, vocab_path, ckpt_path, resume, epochs);
  });
}

template <class Real>
int score_impl(const Ctx& ctx, const std::string& corpus_path, const std::string& vocab_path,
               const std::string& ckpt_path, const std::string& thresholds_in) {
  const auto vocab = load_vocab(ctx.or_default(vocab_path, "vocab.tsv"));
  const auto ck = load_model<Real>(ctx.or_default(ckpt_path, "model.ckpt"), vocab);
  const auto records = load_corpus(ctx.or_default(corpus_path, "corpus.jsonl"));
  const auto encoded = encode_corpus(records, vocab);

  std::vector<Surprisal> surprisals;
  std::vector<double> ppl;
  for (const auto& e : encoded) {
    surprisals.push_back(surprisal(ck.model, std::span<const TokenId>(e.ids)));
    ppl.push_back(perplexity_from(surprisals.back().values));
  }
  ThresholdTable table;
  if (thresholds_in.empty()) {
    table = fit_thresholds(encoded, ppl, ctx.rc.exclude_anomalous, ctx.rc.scope);
  } else {
    auto in = open_in(thresholds_in, "");
    table = read_thresholds_csv(in);
  }
  for (const auto& w : table.warnings) std::cerr << "warning: " << w << '\n';
  std::vector<ScoreReport> reports;
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    reports.push_back(classify(encoded[i].id, encoded[i].agent, surprisals[i], table, ctx.rc.scope));
  }
  {
    auto out = open_out(ctx.path("scores.csv"));
    write_scores_csv(out, reports, ctx.meta);
  }
  {
    auto out = open_out(ctx.path("thresholds.csv"));
    write_thresholds_csv(out, table, ctx.meta);
  }
  {
    auto out = open_out(ctx.path("surprisal.csv"));
    write_surprisal_csv(out, reports, encoded, vocab, ctx.meta);
  }
  std::size_t flagged = 0;
  for (const auto& r : reports) flagged += r.verdict == Label::kAnomalous;
  std::cout << "scored " << reports.size() << " flagged " << flagged << '\n';
  return 0;
}

int cmd_score(const Common& common, const std::string& corpus_path, const std::string& vocab_path,
              const std::string& ckpt_path, const std::string& thresholds_in) {
  const auto ctx = load_context(common);
  return with_precision(ctx.rc, [&]<class Real>() {
    return score_impl<Real>(ctx, corpus_path, vocab_path, ckpt_path, thresholds_in);
  });
}

/// First input line is the head token (agent or SOT) and is not scored.
template <class Real>
int stream_impl(const Ctx& ctx, const std::string& vocab_path, const std::string& ckpt_path,
                const std::string& thresholds_path) {
  const auto vocab = load_vocab(ctx.or_default(vocab_path, "vocab.tsv"));
  const auto ck = load_model<Real>(ctx.or_default(ckpt_path, "model.ckpt"), vocab);
  ThresholdTable table;
  {
    auto in = open_in(ctx.or_default(thresholds_path, "thresholds.csv"), "run score first");
    table = read_thresholds_csv(in);
  }
  std::optional<Session<Real>> session;
  std::optional<std::string> agent;
  std::string line;
  std::size_t pos = 0;
  std::cout << "pos,token,surprisal,running_ppl,verdict" << std::endl;
  while (std::getline(std::cin, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const Token tok = Token::parse(line);
    const TokenId id = vocab.id(tok);
    if (!session) {
      if (tok.kind == TokenKind::kAgentId) agent = tok.value;
      const TokenId head[] = {id};
      session.emplace(ck.model, std::span<const TokenId>(head));
      continue;
    }
    const auto r = session->push(id);
    ++pos;
    const Label v = partial_verdict(*session, table, ctx.rc.scope, agent);
    std::cout << pos << ',' << tok.str() << ',' << format_double(r.surprisal) << ','
              << format_double(r.running_perplexity) << ',' << label_name(v) << std::endl;
  }
  return 0;
}

int cmd_stream(const Common& common, const std::string& vocab_path, const std::string& ckpt_path,
               const std::string& thresholds_path) {
  const auto ctx = load_context(common);
  return with_precision(ctx.rc, [&]<class Real>() { return stream_impl<Real>(ctx, vocab_path, ckpt_path, thresholds_path); });
}

std::string anomaly_kind_of(const std::vector<TruthRecord>& truth) {
  for (const auto& t : truth) {
    if (t.label == Label::kAnomalous) return t.kind;
  }
  return "none";
}

void write_eval_tables(const Ctx& ctx, const std::vector<ScoreReport>& reports, const std::vector<TruthRecord>& truth) {
  const auto tm = truth_map(truth);
  if (ctx.rc.scope == Scope::kPerAgent) {
    const auto per_agent = per_agent_eval(reports, tm);
    auto out = open_out(ctx.path("eval_agents.csv"));
    write_agent_table_csv(out, per_agent, ctx.meta);
    write_agent_table_csv(std::cout, per_agent, ctx.meta);
  }
  std::vector<std::pair<std::string, EvalReport>> rows{{anomaly_kind_of(truth), global_eval(reports, tm)}};
  auto out = open_out(ctx.path("eval_global.csv"));
  write_global_table_csv(out, rows, ctx.meta);
  write_global_table_csv(std::cout, rows, ctx.meta);
}

std::vector<TruthRecord> load_truth(const std::string& path) {
  auto in = open_in(path, "run gen-data first");
  return read_truth_csv(in);
}

template <class Real>
int eval_impl(const Ctx& ctx, const std::string& scores_path, const std::string& truth_path, bool end_to_end,
              bool ratios) {
  if (end_to_end) {
    const auto corpus = generate_corpus(ctx.rc);
    const auto result = run_pipeline<Real>(corpus.records, ctx.rc);
    write_eval_tables(ctx, result.reports, corpus.truth);
    return 0;
  }
  const auto truth = load_truth(ctx.or_default(truth_path, "truth.csv"));
  if (ratios) {
    const auto vocab = load_vocab(ctx.path("vocab.tsv"));
    const auto ck = load_model<Real>(ctx.path("model.ckpt"), vocab);
    const auto encoded = encode_corpus(load_corpus(ctx.path("corpus.jsonl")), vocab);
    auto in = open_in(ctx.path("thresholds.csv"), "run score first");
    const auto table = read_thresholds_csv(in);
    std::vector<std::string> warnings;
    const auto rows = completion_ratio_eval(ck.model, encoded, truth_map(truth), table, ctx.rc.scope,
                                            std::span<const double>(ctx.rc.ratios), &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    auto out = open_out(ctx.path("ratios.csv"));
    write_ratio_table_csv(out, rows, ctx.meta);
    write_ratio_table_csv(std::cout, rows, ctx.meta);
    return 0;
  }
  auto in = open_in(ctx.or_default(scores_path, "scores.csv"), "run score first");
  write_eval_tables(ctx, read_scores_csv(in), truth);
  return 0;
}

int cmd_eval(const Common& common, const std::string& scores_path, const std::string& truth_path, bool end_to_end,
             bool ratios) {
  const auto ctx = load_context(common);
  return with_precision(ctx.rc, [&]<class Real>() {
    return eval_impl<Real>(ctx, scores_path, truth_path, end_to_end, ratios);
  });
}

template <class Real>
int report_impl(const Ctx& ctx, const std::string& kind) {
  if (kind == "ablation") {
    const auto table = run_ablation<Real>(ctx.rc);
    auto out = open_out(ctx.path("ablation.csv"));
    write_ablation_csv(out, table, ctx.meta);
    write_ablation_csv(std::cout, table, ctx.meta);
    return 0;
  }
  // completion: full pipeline, then the ratio sweep on its model
  const auto corpus = generate_corpus(ctx.rc);
  const auto result = run_pipeline<Real>(corpus.records, ctx.rc);
  std::vector<std::string> warnings;
  const auto rows = completion_ratio_eval(result.model, result.encoded, truth_map(corpus.truth), result.thresholds,
                                          ctx.rc.scope, std::span<const double>(ctx.rc.ratios), &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  auto out = open_out(ctx.path("ratios.csv"));
  write_ratio_table_csv(out, rows, ctx.meta);
  write_ratio_table_csv(std::cout, rows, ctx.meta);
  return 0;
}

int cmd_report(const Common& common, const std::string& kind) {
  const auto ctx = load_context(common);
  return with_precision(ctx.rc, [&]<class Real>() { return report_impl<Real>(ctx, kind); });
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "INI config file");
  app->add_option("-p,--preset", c.preset, "base preset: pol, routes or tiny")->capture_default_str();
  app->add_option("-o,--out", c.out, "output directory (overrides paths.out_dir)");
  app->add_option("--seed", c.seed, "root seed (overrides run.seed)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajlm: trajectory anomaly detection with a small causal language model"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  Common common;
  int rc = 0;

  std::string location;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus and ground truth");
  add_common(gen, common);
  gen->add_option("--location", location, "location configuration for pol corpora");
  gen->callback([&] { rc = cmd_gen_data(common, location); });

  std::string corpus_path, vocab_path, ckpt_path, thresholds_path, scores_path, truth_path;
  auto* bv = app.add_subcommand("build-vocab", "build the token vocabulary of a corpus");
  add_common(bv, common);
  bv->add_option("--corpus", corpus_path, "corpus JSONL");
  bv->add_option("--vocab", vocab_path, "vocabulary output");
  bv->callback([&] { rc = cmd_build_vocab(common, corpus_path, vocab_path); });

  bool resume = false;
  std::optional<std::size_t> epochs;
  auto* tr = app.add_subcommand("train", "train the model and write a checkpoint");
  add_common(tr, common);
  tr->add_option("--corpus", corpus_path, "corpus JSONL");
  tr->add_option("--vocab", vocab_path, "vocabulary file");
  tr->add_option("--checkpoint", ckpt_path, "checkpoint path");
  tr->add_flag("--resume", resume, "continue from the checkpoint's optimizer state");
  tr->add_option("--epochs", epochs, "total epochs (overrides train.epochs)");
  tr->callback([&] { rc = cmd_train(common, corpus_path, vocab_path, ckpt_path, resume, epochs); });

  auto* sc = app.add_subcommand("score", "score every trajectory and fit thresholds");
  add_common(sc, common);
  sc->add_option("--corpus", corpus_path, "corpus JSONL");
  sc->add_option("--vocab", vocab_path, "vocabulary file");
  sc->add_option("--checkpoint", ckpt_path, "checkpoint path");
  sc->add_option("--thresholds", thresholds_path, "use these thresholds instead of fitting");
  sc->callback([&] { rc = cmd_score(common, corpus_path, vocab_path, ckpt_path, thresholds_path); });

  auto* st = app.add_subcommand("stream", "score tokens from stdin as they arrive");
  add_common(st, common);
  st->add_option("--vocab", vocab_path, "vocabulary file");
  st->add_option("--checkpoint", ckpt_path, "checkpoint path");
  st->add_option("--thresholds", thresholds_path, "threshold table");
  st->callback([&] { rc = cmd_stream(common, vocab_path, ckpt_path, thresholds_path); });

  bool end_to_end = false, ratios = false;
  auto* ev = app.add_subcommand("eval", "detection metrics from scores and ground truth");
  add_common(ev, common);
  ev->add_option("--scores", scores_path, "scores CSV");
  ev->add_option("--truth", truth_path, "ground truth CSV");
  ev->add_flag("--end-to-end", end_to_end, "generate, train and score in memory first");
  ev->add_flag("--ratios", ratios, "completion-ratio table from the stored model");
  ev->callback([&] { rc = cmd_eval(common, scores_path, truth_path, end_to_end, ratios); });

  std::string kind = "ablation";
  auto* rp = app.add_subcommand("report", "multi-run experiment tables");
  add_common(rp, common);
  rp->add_option("kind", kind, "ablation or completion")->check(CLI::IsMember({"ablation", "completion"}));
  rp->callback([&] { rc = cmd_report(common, kind); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return rc;
}
