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

#include <cstdint>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "trajlm/common.hpp"
#include "trajlm/grid.hpp"
#include "trajlm/model.hpp"
#include "trajlm/scoring.hpp"
#include "trajlm/synth.hpp"
#include "trajlm/train.hpp"

namespace trajlm {

enum class Dataset { kPol, kRoutes };

inline std::string_view dataset_name(Dataset d) { return d == Dataset::kPol ? "pol" : "routes"; }

inline Dataset parse_dataset(std::string_view s) {
  if (s == "pol") return Dataset::kPol;
  if (s == "routes") return Dataset::kRoutes;
  throw ConfigError("unknown dataset '" + std::string(s) + "' (expected pol or routes)");
}

/// Everything an experiment depends on. Component seeds are derived from
/// `seed`; `out_dir` is the only field left out of the config hash.
/// Floating-point width of the model, its training and its scoring.
enum class Precision { kF64, kF32 };

inline std::string_view precision_name(Precision p) { return p == Precision::kF64 ? "f64" : "f32"; }

inline Precision parse_precision(std::string_view s) {
  if (s == "f64") return Precision::kF64;
  if (s == "f32") return Precision::kF32;
  throw ConfigError("unknown precision '" + std::string(s) + "' (expected f64 or f32)");
}

struct RunConfig {
  std::uint64_t seed = 1;
  Dataset dataset = Dataset::kPol;

  // [world]
  synth::WorldConfig world;
  synth::LocationConfig location = synth::LocationConfig::kStaypoint;
  std::vector<synth::LocationConfig> ablation{synth::LocationConfig::kStaypoint, synth::LocationConfig::kGps,
                                              synth::LocationConfig::kDuration,
                                              synth::LocationConfig::kActivity};

  // [routes]
  grid::GridSpec route_grid{0.0, 0.0, 100.0, 16, 16};
  std::size_t n_od_pairs = 20;
  std::size_t routes_per_od = 40;
  std::size_t min_od_count = 25;
  double route_noise = 0.1;

  // [anomaly]
  synth::AnomalySpec anomaly;
  double anomaly_fraction = 0.05;

  ModelConfig model;
  Precision precision = Precision::kF64;
  TrainConfig train;
  bool exclude_anomalous = false;

  // [score]
  Scope scope = Scope::kPerAgent;

  // [eval]
  std::vector<double> ratios{0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

  // [paths]
  std::string out_dir = "out";

  std::uint64_t world_seed() const { return component_seed(seed, "world"); }
  std::uint64_t routes_seed() const { return component_seed(seed, "routes"); }
  std::uint64_t anomaly_seed() const { return component_seed(seed, "anomaly"); }

  /// Model config with the derived seed; vocab_size is filled in later.
  ModelConfig model_config(std::size_t vocab_size) const {
    ModelConfig m = model;
    m.vocab_size = vocab_size;
    m.seed = component_seed(seed, "model");
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = component_seed(seed, "train");
    return t;
  }

  synth::WorldConfig world_config() const {
    synth::WorldConfig w = world;
    w.seed = world_seed();
    return w;
  }

  void validate() const;
  std::string to_ini() const;
  /// Canonical text of every field except out_dir.
  std::string canonical_text() const;
  std::string hash() const { return hex64(fnv1a64(canonical_text())); }
};

namespace detail {

template <class T>
std::string config_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    return format_double(static_cast<double>(v));
  } else if constexpr (std::is_arithmetic_v<T>) {
    return std::to_string(v);
  } else {
    return std::string(v);
  }
}

template <class T>
T parse_config_value(const std::string& key, const std::string& raw) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (raw == "true" || raw == "1") return true;
      if (raw == "false" || raw == "0") return false;
      throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      return static_cast<T>(parse_double(raw));
    } else if constexpr (std::is_integral_v<T>) {
      std::size_t used = 0;
      const long long v = std::stoll(raw, &used);
      if (used != raw.size()) throw ConfigError("");
      if (std::is_unsigned_v<T> && v < 0) throw ConfigError("");
      return static_cast<T>(v);
    } else {
      return raw;
    }
  } catch (const std::exception&) {
    throw ConfigError(key + ": cannot parse value '" + raw + "'");
  }
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t"), e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

/// Visits every (section.key, field) pair. Visitor gets (key, field&).
template <class Cfg, class Visitor>
void visit_fields(Cfg& c, Visitor&& v) {
  v("run.seed", c.seed);
  v("world.n_agents", c.world.n_agents);
  v("world.n_days", c.world.n_days);
  v("world.n_anomalous_agents", c.world.n_anomalous_agents);
  v("world.anomalous_days", c.world.anomalous_days);
  v("world.substitution_prob", c.world.substitution_prob);
  v("world.max_duration_bucket", c.world.max_duration_bucket);
  v("world.venue_cols", c.world.venue_grid.n_cols);
  v("world.venue_rows", c.world.venue_grid.n_rows);
  v("world.venue_cell_size", c.world.venue_grid.cell_size);
  v("routes.origin_x", c.route_grid.origin_x);
  v("routes.origin_y", c.route_grid.origin_y);
  v("routes.cell_size", c.route_grid.cell_size);
  v("routes.n_cols", c.route_grid.n_cols);
  v("routes.n_rows", c.route_grid.n_rows);
  v("routes.n_od_pairs", c.n_od_pairs);
  v("routes.routes_per_od", c.routes_per_od);
  v("routes.min_od_count", c.min_od_count);
  v("routes.noise", c.route_noise);
  v("anomaly.ratio", c.anomaly.ratio);
  v("anomaly.dist", c.anomaly.dist);
  v("anomaly.fraction", c.anomaly_fraction);
  v("model.d_model", c.model.d_model);
  v("model.n_heads", c.model.n_heads);
  v("model.n_layers", c.model.n_layers);
  v("model.d_ff", c.model.d_ff);
  v("model.max_seq_len", c.model.max_seq_len);
  v("model.dropout", c.model.dropout_rate);
  v("train.batch_size", c.train.batch_size);
  v("train.learning_rate", c.train.learning_rate);
  v("train.beta1", c.train.beta1);
  v("train.beta2", c.train.beta2);
  v("train.epsilon", c.train.epsilon);
  v("train.epochs", c.train.n_epochs);
  v("train.clip_norm", c.train.clip_norm);
  v("train.exclude_anomalous", c.exclude_anomalous);
}

inline std::string location_list(const std::vector<synth::LocationConfig>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::string(synth::location_config_name(xs[i]));
  return out;
}

inline std::string ratio_list(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + format_double(xs[i]);
  return out;
}

}  // namespace detail

inline void RunConfig::validate() const {
  auto wrap = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    } catch (const DomainError& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  wrap("world", [&] { world_config().validate(); });
  wrap("routes", [&] {
    route_grid.validate();
    if (n_od_pairs < 1 || routes_per_od < 1) throw ConfigError("n_od_pairs and routes_per_od must be >= 1");
    if (!(route_noise >= 0.0 && route_noise < 1.0)) throw ConfigError("noise must be in [0, 1)");
  });
  wrap("anomaly", [&] {
    anomaly.validate();
    if (!(anomaly_fraction >= 0.0 && anomaly_fraction <= 1.0)) throw ConfigError("fraction must be in [0, 1]");
  });
  wrap("model", [&] { model_config(std::max<std::size_t>(model.vocab_size, 4)).validate(); });
  wrap("train", [&] { train_config().validate(); });
  wrap("eval", [&] {
    if (ratios.empty()) throw ConfigError("ratios must not be empty");
    for (double r : ratios) {
      if (!(r > 0.0 && r <= 1.0)) throw ConfigError("ratios must lie in (0, 1], got " + format_double(r));
    }
  });
  wrap("world", [&] {
    if (ablation.empty()) throw ConfigError("ablation list must not be empty");
  });
}

inline std::string RunConfig::canonical_text() const {
  std::ostringstream out;
  out << "run.dataset=" << dataset_name(dataset) << '\n';
  out << "world.location=" << synth::location_config_name(location) << '\n';
  out << "world.ablation=" << detail::location_list(ablation) << '\n';
  out << "anomaly.kind=" << synth::anomaly_kind_name(anomaly.kind) << '\n';
  out << "model.precision=" << precision_name(precision) << '\n';
  out << "score.scope=" << scope_name(scope) << '\n';
  out << "eval.ratios=" << detail::ratio_list(ratios) << '\n';
  auto self = *this;
  detail::visit_fields(self, [&](const char* key, auto& field) { out << key << '=' << detail::config_value(field) << '\n'; });
  return out.str();
}

inline std::string RunConfig::to_ini() const {
  std::string section;
  std::ostringstream out;
  auto emit = [&](const std::string& key, const std::string& value) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    out << key.substr(dot + 1) << " = " << value << '\n';
  };
  // Keys grouped by section in a fixed order.
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("run.dataset", std::string(dataset_name(dataset)));
  kv.emplace_back("world.location", std::string(synth::location_config_name(location)));
  kv.emplace_back("world.ablation", detail::location_list(ablation));
  kv.emplace_back("anomaly.kind", std::string(synth::anomaly_kind_name(anomaly.kind)));
  kv.emplace_back("model.precision", std::string(precision_name(precision)));
  kv.emplace_back("score.scope", std::string(scope_name(scope)));
  kv.emplace_back("eval.ratios", detail::ratio_list(ratios));
  kv.emplace_back("paths.out_dir", out_dir);
  auto self = *this;
  detail::visit_fields(self, [&](const char* key, auto& field) { kv.emplace_back(key, detail::config_value(field)); });
  const char* order[] = {"run", "world", "routes", "anomaly", "model", "train", "score", "eval", "paths"};
  for (const char* s : order) {
    for (const auto& [k, v] : kv) {
      if (k.substr(0, k.find('.')) == s) emit(k, v);
    }
  }
  return out.str();
}

/// Named starting points. "pol" and "routes" are the two experiment
/// families; "tiny" is a seconds-scale smoke configuration.
inline RunConfig preset(std::string_view name) {
  RunConfig c;
  c.model.d_model = 32;
  c.model.n_heads = 4;
  c.model.n_layers = 2;
  c.model.d_ff = 64;
  c.model.max_seq_len = 64;
  c.train.batch_size = 16;
  c.train.learning_rate = 3e-4;
  if (name == "pol") {
    c.dataset = Dataset::kPol;
    c.scope = Scope::kPerAgent;
    c.exclude_anomalous = false;
    c.train.n_epochs = 8;
  } else if (name == "routes") {
    c.dataset = Dataset::kRoutes;
    c.scope = Scope::kGlobal;
    c.exclude_anomalous = true;
    c.train.learning_rate = 1e-3;
    c.train.n_epochs = 12;
  } else if (name == "tiny") {
    c.train.learning_rate = 3e-3;
    c.dataset = Dataset::kPol;
    c.scope = Scope::kPerAgent;
    c.world.n_agents = 6;
    c.world.n_days = 12;
    c.world.n_anomalous_agents = 2;
    c.world.anomalous_days = 3;
    c.model.d_model = 16;
    c.model.n_heads = 2;
    c.model.n_layers = 1;
    c.model.d_ff = 32;
    c.train.n_epochs = 2;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected pol, routes or tiny)");
  }
  return c;
}

/// Reads an INI file over a base config. Unknown sections or keys are errors.
inline RunConfig parse_run_config(std::istream& in, RunConfig base = RunConfig{}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::map<std::string, std::string> kv;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) kv[section + "." + key] = value.data();
  }
  RunConfig c = std::move(base);
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto wrap = [](const std::string& key, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  };
  if (auto v = take("run.dataset")) wrap("run.dataset", [&] { c.dataset = parse_dataset(*v); });
  if (auto v = take("world.location")) wrap("world.location", [&] { c.location = synth::parse_location_config(*v); });
  if (auto v = take("world.ablation")) {
    wrap("world.ablation", [&] {
      c.ablation.clear();
      for (const auto& s : detail::split_list(*v)) c.ablation.push_back(synth::parse_location_config(s));
    });
  }
  if (auto v = take("anomaly.kind")) {
    wrap("anomaly.kind", [&] { c.anomaly.kind = synth::parse_anomaly_kind(*v); });
  }
  if (auto v = take("model.precision")) wrap("model.precision", [&] { c.precision = parse_precision(*v); });
  if (auto v = take("score.scope")) wrap("score.scope", [&] { c.scope = parse_scope(*v); });
  if (auto v = take("eval.ratios")) {
    c.ratios.clear();
    for (const auto& s : detail::split_list(*v)) c.ratios.push_back(detail::parse_config_value<double>("eval.ratios", s));
  }
  if (auto v = take("paths.out_dir")) c.out_dir = *v;
  detail::visit_fields(c, [&](const char* key, auto& field) {
    if (auto v = take(key)) field = detail::parse_config_value<std::decay_t<decltype(field)>>(key, *v);
  });
  if (!kv.empty()) throw ConfigError("config: unknown key '" + kv.begin()->first + "'");
  c.validate();
  return c;
}

inline RunConfig parse_run_config(const std::string& text, RunConfig base = RunConfig{}) {
  std::istringstream in(text);
  return parse_run_config(in, std::move(base));
}

}  // namespace trajlm
