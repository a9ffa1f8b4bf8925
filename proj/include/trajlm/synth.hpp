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
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trajlm/common.hpp"
#include "trajlm/corpus.hpp"
#include "trajlm/grid.hpp"
#include "trajlm/vocab.hpp"

namespace trajlm::synth {

// ---------------------------------------------------------------------------
// Pattern-of-life world
// ---------------------------------------------------------------------------

inline std::vector<std::string> default_staypoint_catalog() {
  return {"home", "work", "restaurant", "cafe", "gym", "park",
          "shop", "bar", "friend", "cinema", "library", "clinic"};
}

struct WorldConfig {
  std::int64_t n_agents = 50;
  std::int64_t n_days = 100;
  std::int64_t n_anomalous_agents = 5;
  std::int64_t anomalous_days = 14;
  std::vector<std::string> staypoint_catalog = default_staypoint_catalog();
  std::uint64_t seed = 1;
  /// Chance that a normal day swaps its lunch staypoint (restaurant <-> cafe).
  double substitution_prob = 0.03;
  grid::GridSpec venue_grid{0.0, 0.0, 100.0, 30, 30};
  std::int64_t max_duration_bucket = kDefaultMaxDurationBucket;

  void validate() const {
    if (n_agents < 1 || n_days < 1) throw ConfigError("world needs at least one agent and one day");
    if (n_anomalous_agents < 0 || n_anomalous_agents > n_agents) {
      throw ConfigError("n_anomalous_agents must be in [0, n_agents]");
    }
    if (anomalous_days < 0 || anomalous_days > n_days) throw ConfigError("anomalous_days must be in [0, n_days]");
    if (!(substitution_prob >= 0.0 && substitution_prob <= 1.0)) {
      throw ConfigError("substitution_prob must be in [0, 1]");
    }
    auto has = [&](const char* s) {
      return std::find(staypoint_catalog.begin(), staypoint_catalog.end(), s) != staypoint_catalog.end();
    };
    if (!has("home") || !has("work")) throw ConfigError("staypoint catalog must contain 'home' and 'work'");
    if (std::set<std::string>(staypoint_catalog.begin(), staypoint_catalog.end()).size() !=
        staypoint_catalog.size()) {
      throw ConfigError("staypoint catalog has duplicates");
    }
    if (staypoint_catalog.size() < 7) throw ConfigError("staypoint catalog needs at least 7 entries");
    venue_grid.validate();
  }
};

struct Dwell {
  double mean_hours;
  double sd_hours;
};

inline Dwell dwell_for(const std::string& label) {
  static const std::map<std::string, Dwell> kTable = {
      {"home", {8.0, 1.0}},   {"work", {4.0, 0.5}},    {"restaurant", {1.0, 0.25}},
      {"cafe", {0.75, 0.2}},  {"gym", {1.5, 0.3}},     {"park", {2.0, 0.5}},
      {"shop", {1.0, 0.3}},   {"bar", {2.5, 0.5}},     {"friend", {3.0, 0.7}},
      {"cinema", {2.5, 0.3}}, {"library", {2.0, 0.5}}, {"clinic", {1.5, 0.4}},
  };
  auto it = kTable.find(label);
  return it == kTable.end() ? Dwell{1.5, 0.4} : it->second;
}

inline std::string activity_for(const std::string& label) {
  static const std::map<std::string, std::string> kTable = {
      {"home", "resting"},        {"work", "working"},        {"restaurant", "eating"},
      {"cafe", "eating"},         {"gym", "exercising"},      {"park", "recreation"},
      {"shop", "shopping"},       {"bar", "socializing"},     {"friend", "socializing"},
      {"cinema", "entertainment"}, {"library", "studying"},   {"clinic", "healthcare"},
  };
  auto it = kTable.find(label);
  return it == kTable.end() ? label : it->second;
}

/// One slot of a daily routine.
struct RoutineSlot {
  std::string label;
  bool lunch = false;  // subject to restaurant/cafe substitution and venue choice
};

/// Per-weekday ordered routine; slot 1 is the day's anchor (work on working
/// days, the main outing otherwise).
struct AgentSchedule {
  std::string agent;
  grid::CellId home;
  std::map<std::string, std::vector<grid::CellId>> venues;  // label -> favourites
  std::vector<double> favourite_weights;                    // over venues[label]
  std::array<std::vector<RoutineSlot>, 7> routine;
  std::array<bool, 7> working{};
};

struct Stay {
  std::string label;
  grid::CellId cell;
  double duration_s = 0.0;
};

struct DayRecord {
  std::string id;
  std::string agent;
  std::int64_t day = 0;
  std::string weekday;
  std::vector<Stay> stays;
  Label label = Label::kNormal;
  std::optional<std::size_t> planted_stay;  // index into stays
};

struct World {
  WorldConfig config;
  std::vector<AgentSchedule> agents;
  std::vector<std::size_t> anomalous_agents;  // indices into agents, ascending
  std::vector<DayRecord> days;                // agent-major, chronological per agent
};

namespace detail {

inline grid::CellId random_cell(Rng& rng, const grid::GridSpec& g) {
  return {static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(g.n_cols))),
          static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(g.n_rows)))};
}

template <class T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[uniform_index(rng, v.size())];
}

/// k distinct indices from [0, n), in draw order.
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

inline std::size_t weighted_index(Rng& rng, const std::vector<double>& w) {
  double total = 0.0;
  for (double x : w) total += x;
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  return w.size() - 1;
}

inline double sample_dwell_seconds(Rng& rng, const std::string& label) {
  const Dwell d = dwell_for(label);
  const double hours = std::max(0.25, d.mean_hours + d.sd_hours * standard_normal(rng));
  return hours * 3600.0;
}

}  // namespace detail

inline World generate_world(const WorldConfig& cfg) {
  cfg.validate();
  World world;
  world.config = cfg;
  Rng city_rng(component_seed(cfg.seed, "city"));

  const auto& catalog = cfg.staypoint_catalog;
  std::vector<std::string> leisure;
  for (const auto& s : catalog) {
    if (s != "home" && s != "work" && s != "restaurant" && s != "cafe") leisure.push_back(s);
  }
  const bool has_restaurant = std::count(catalog.begin(), catalog.end(), "restaurant") > 0;
  const bool has_cafe = std::count(catalog.begin(), catalog.end(), "cafe") > 0;
  std::vector<std::string> lunch_labels;
  if (has_restaurant) lunch_labels.push_back("restaurant");
  if (has_cafe) lunch_labels.push_back("cafe");
  if (lunch_labels.empty()) lunch_labels.push_back(leisure.front());

  // Shared venue pools.
  std::map<std::string, std::vector<grid::CellId>> pools;
  const auto pool_size = static_cast<std::size_t>(std::max<std::int64_t>(4, cfg.n_agents / 5));
  for (const auto& label : catalog) {
    if (label == "home") continue;
    auto& pool = pools[label];
    for (std::size_t i = 0; i < pool_size; ++i) pool.push_back(detail::random_cell(city_rng, cfg.venue_grid));
  }

  for (std::int64_t a = 0; a < cfg.n_agents; ++a) {
    Rng rng(unit_seed(component_seed(cfg.seed, "agents"), static_cast<std::uint64_t>(a)));
    AgentSchedule s;
    s.agent = std::to_string(a);
    s.home = detail::random_cell(rng, cfg.venue_grid);
    for (const auto& label : catalog) {
      if (label == "home") continue;
      const auto& pool = pools[label];
      const bool is_lunch = std::find(lunch_labels.begin(), lunch_labels.end(), label) != lunch_labels.end();
      for (std::size_t i : detail::sample_without_replacement(rng, pool.size(), is_lunch ? 3 : 1)) {
        s.venues[label].push_back(pool[i]);
      }
    }
    s.favourite_weights = {0.6, 0.25, 0.15};

    const std::size_t work_offset = uniform01(rng) < 0.2 ? 1 : 0;
    const std::string lunch = lunch_labels.size() > 1 && uniform01(rng) >= 0.7 ? lunch_labels[1] : lunch_labels[0];
    for (std::size_t wd = 0; wd < 7; ++wd) {
      const bool working = wd >= work_offset && wd < work_offset + 5;
      s.working[wd] = working;
      auto& r = s.routine[wd];
      r.push_back({"home"});
      if (working) {
        r.push_back({"work"});
        r.push_back({lunch, true});
        if (uniform01(rng) < 0.4) r.push_back({detail::pick(rng, leisure)});
      } else {
        const std::string first = detail::pick(rng, leisure);
        r.push_back({first});
        if (uniform01(rng) < 0.5) {
          std::string second = detail::pick(rng, leisure);
          if (second != first) r.push_back({second});
        }
      }
      r.push_back({"home"});
    }
    world.agents.push_back(std::move(s));
  }

  {
    Rng pick_rng(component_seed(cfg.seed, "anomalous-agents"));
    world.anomalous_agents = detail::sample_without_replacement(
        pick_rng, static_cast<std::size_t>(cfg.n_agents), static_cast<std::size_t>(cfg.n_anomalous_agents));
    std::sort(world.anomalous_agents.begin(), world.anomalous_agents.end());
  }

  for (std::size_t a = 0; a < world.agents.size(); ++a) {
    const auto& s = world.agents[a];
    const bool anomalous_agent =
        std::binary_search(world.anomalous_agents.begin(), world.anomalous_agents.end(), a);
    Rng rng(unit_seed(component_seed(cfg.seed, "days"), a));
    for (std::int64_t d = 0; d < cfg.n_days; ++d) {
      const std::size_t wd = static_cast<std::size_t>(d % 7);
      DayRecord rec;
      rec.id = "a" + s.agent + "_d" + std::to_string(d);
      rec.agent = s.agent;
      rec.day = d;
      rec.weekday = std::string(kWeekdays[wd]);
      const auto& routine = s.routine[wd];
      for (const auto& slot : routine) {
        std::string label = slot.label;
        if (slot.lunch && lunch_labels.size() > 1 && uniform01(rng) < cfg.substitution_prob) {
          label = label == lunch_labels[0] ? lunch_labels[1] : lunch_labels[0];
        }
        Stay stay;
        stay.label = label;
        if (label == "home") {
          stay.cell = s.home;
        } else {
          const auto& favs = s.venues.at(label);
          stay.cell = favs.size() > 1 ? favs[detail::weighted_index(rng, s.favourite_weights)] : favs.front();
        }
        stay.duration_s = detail::sample_dwell_seconds(rng, label);
        rec.stays.push_back(std::move(stay));
      }
      if (anomalous_agent && d >= cfg.n_days - cfg.anomalous_days) {
        // Skip the anchor of the day in favour of a place not on today's
        // routine. Work is never the replacement: these agents abstain.
        std::vector<std::string> off;
        for (const auto& label : catalog) {
          if (label == "home" || label == "work") continue;
          const bool on_routine = std::any_of(routine.begin(), routine.end(),
                                              [&](const RoutineSlot& r) { return r.label == label; });
          if (!on_routine) off.push_back(label);
        }
        const std::string replacement = detail::pick(rng, off);
        auto& stay = rec.stays[1];
        stay.label = replacement;
        stay.cell = s.venues.at(replacement).front();
        stay.duration_s = detail::sample_dwell_seconds(rng, replacement);
        rec.label = Label::kAnomalous;
        rec.planted_stay = 1;
      }
      world.days.push_back(std::move(rec));
    }
  }
  return world;
}

/// How a stay is tokenized.
enum class LocationConfig { kStaypoint, kGps, kDuration, kStaypointDuration, kActivity };

inline std::string_view location_config_name(LocationConfig c) {
  switch (c) {
    case LocationConfig::kStaypoint: return "staypoint";
    case LocationConfig::kGps: return "gps";
    case LocationConfig::kDuration: return "duration";
    case LocationConfig::kStaypointDuration: return "staypoint_duration";
    case LocationConfig::kActivity: return "activity";
  }
  return "?";
}

inline LocationConfig parse_location_config(std::string_view s) {
  for (auto c : {LocationConfig::kStaypoint, LocationConfig::kGps, LocationConfig::kDuration,
                 LocationConfig::kStaypointDuration, LocationConfig::kActivity}) {
    if (location_config_name(c) == s) return c;
  }
  throw ConfigError("unknown location configuration '" + std::string(s) + "'");
}

inline std::size_t tokens_per_stay(LocationConfig c) { return c == LocationConfig::kStaypointDuration ? 2 : 1; }

/// Index in the encoded id sequence ([agent, weekday, ...]) of the first
/// token describing the planted stay.
inline std::optional<std::size_t> planted_token_position(const DayRecord& d, LocationConfig c) {
  if (!d.planted_stay) return std::nullopt;
  return 2 + *d.planted_stay * tokens_per_stay(c);
}

inline Corpus render(const World& world, LocationConfig config) {
  Corpus out;
  out.records.reserve(world.days.size());
  for (const auto& d : world.days) {
    CorpusRecord r;
    r.id = d.id;
    r.agent = d.agent;
    r.weekday = d.weekday;
    r.label = d.label;
    for (const auto& s : d.stays) {
      switch (config) {
        case LocationConfig::kStaypoint:
          r.tokens.push_back({TokenKind::kStaypoint, s.label});
          break;
        case LocationConfig::kGps:
          r.tokens.push_back({TokenKind::kCell, grid::cell_token_value(s.cell)});
          break;
        case LocationConfig::kDuration:
          r.tokens.push_back(bucket_duration(s.duration_s, world.config.max_duration_bucket));
          break;
        case LocationConfig::kStaypointDuration:
          r.tokens.push_back({TokenKind::kStaypoint, s.label});
          r.tokens.push_back(bucket_duration(s.duration_s, world.config.max_duration_bucket));
          break;
        case LocationConfig::kActivity:
          r.tokens.push_back({TokenKind::kActivity, activity_for(s.label)});
          break;
      }
    }
    TruthRecord t;
    t.id = d.id;
    t.label = d.label;
    if (d.label == Label::kAnomalous) {
      t.kind = "skip_routine";
      t.ratio = 1.0 / static_cast<double>(d.stays.size());
    }
    out.records.push_back(std::move(r));
    out.truth.push_back(std::move(t));
  }
  return out;
}

inline Corpus gen_pol_corpus(const WorldConfig& cfg, LocationConfig config = LocationConfig::kStaypoint) {
  return render(generate_world(cfg), config);
}

// ---------------------------------------------------------------------------
// Route corpus and anomaly injection
// ---------------------------------------------------------------------------

enum class AnomalyKind { kRandomShift, kDetour, kSkipRoutine };

inline std::string_view anomaly_kind_name(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::kRandomShift: return "random_shift";
    case AnomalyKind::kDetour: return "detour";
    case AnomalyKind::kSkipRoutine: return "skip_routine";
  }
  return "?";
}

inline AnomalyKind parse_anomaly_kind(std::string_view s) {
  for (auto k : {AnomalyKind::kRandomShift, AnomalyKind::kDetour, AnomalyKind::kSkipRoutine}) {
    if (anomaly_kind_name(k) == s) return k;
  }
  throw ConfigError("unknown anomaly kind '" + std::string(s) + "'");
}

struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::kRandomShift;
  double ratio = 0.3;     // fraction of the trajectory
  std::int64_t dist = 3;  // grid cells

  void validate() const {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw DomainError("anomaly ratio must be in (0, 1]");
    if (kind != AnomalyKind::kSkipRoutine && dist < 1) throw DomainError("anomaly dist must be >= 1");
  }
};

using CellPath = std::vector<grid::CellId>;

struct OdPair {
  grid::CellId origin;
  grid::CellId destination;
};

struct Route {
  std::string id;
  std::size_t od_index = 0;
  CellPath cells;
};

/// Monotone lattice path from a to b. Each step follows the axis that keeps
/// the path closest to the straight line; with probability `noise` it takes
/// the other axis instead.
inline CellPath lattice_path(const grid::CellId& a, const grid::CellId& b, double noise, Rng& rng) {
  const std::int64_t nx = std::abs(b.col - a.col);
  const std::int64_t ny = std::abs(b.row - a.row);
  const std::int64_t sx = b.col >= a.col ? 1 : -1;
  const std::int64_t sy = b.row >= a.row ? 1 : -1;
  CellPath path{a};
  std::int64_t tx = 0, ty = 0;
  grid::CellId cur = a;
  while (tx < nx || ty < ny) {
    bool step_x;
    if (tx == nx) {
      step_x = false;
    } else if (ty == ny) {
      step_x = true;
    } else {
      step_x = (2 * tx + 1) * ny <= (2 * ty + 1) * nx;
      if (noise > 0.0 && uniform01(rng) < noise) step_x = !step_x;
    }
    if (step_x) {
      cur.col += sx;
      ++tx;
    } else {
      cur.row += sy;
      ++ty;
    }
    path.push_back(cur);
  }
  return path;
}

inline std::vector<Route> gen_routes_between(const grid::GridSpec& g, const std::vector<OdPair>& pairs,
                                             std::size_t routes_per_pair, double noise, std::uint64_t seed) {
  g.validate();
  if (!(noise >= 0.0 && noise < 1.0)) throw DomainError("route noise must be in [0, 1)");
  std::vector<Route> out;
  out.reserve(pairs.size() * routes_per_pair);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& od = pairs[p];
    if (!g.contains(od.origin) || !g.contains(od.destination)) {
      throw DomainError("OD pair " + std::to_string(p) + " endpoint outside grid: " + grid::describe(od.origin) +
                        " -> " + grid::describe(od.destination));
    }
    Rng rng(unit_seed(seed, p));
    for (std::size_t k = 0; k < routes_per_pair; ++k) {
      out.push_back({"r" + std::to_string(p) + "_" + std::to_string(k), p,
                     lattice_path(od.origin, od.destination, noise, rng)});
    }
  }
  return out;
}

/// Samples n_od_pairs distinct OD pairs at least a third of the grid
/// perimeter apart (Manhattan), then generates routes between them.
inline std::vector<Route> gen_route_corpus(const grid::GridSpec& g, std::size_t n_od_pairs,
                                           std::size_t routes_per_pair, double noise, std::uint64_t seed) {
  g.validate();
  Rng rng(component_seed(seed, "od-pairs"));
  const std::int64_t min_span = std::max<std::int64_t>(2, (g.n_cols + g.n_rows) / 3);
  std::vector<OdPair> pairs;
  std::set<std::pair<grid::CellId, grid::CellId>> seen;
  std::size_t attempts = 0;
  while (pairs.size() < n_od_pairs) {
    if (++attempts > 100000) throw DomainError("grid too small for the requested number of OD pairs");
    OdPair od{detail::random_cell(rng, g), detail::random_cell(rng, g)};
    const auto span = std::abs(od.origin.col - od.destination.col) + std::abs(od.origin.row - od.destination.row);
    if (span < min_span) continue;
    if (!seen.insert({od.origin, od.destination}).second) continue;
    pairs.push_back(od);
  }
  return gen_routes_between(g, pairs, routes_per_pair, noise, component_seed(seed, "routes"));
}

struct InjectionResult {
  CellPath cells;
  std::size_t modified = 0;  // number of positions displaced
  bool warning = false;      // nothing could be injected
};

inline InjectionResult inject_random_shift(const CellPath& t, const AnomalySpec& spec, const grid::GridSpec& g,
                                           std::uint64_t seed) {
  if (spec.kind != AnomalyKind::kRandomShift) throw DomainError("inject_random_shift: wrong anomaly kind");
  spec.validate();
  if (t.size() < 3) throw DomainError("inject_random_shift: trajectory needs at least 3 cells");
  Rng rng(seed);
  const std::size_t interior = t.size() - 2;
  const std::size_t k = round_half_up(spec.ratio * static_cast<double>(interior));
  InjectionResult out{t, 0, k == 0};
  for (std::size_t i : detail::sample_without_replacement(rng, interior, k)) {
    const std::size_t pos = i + 1;
    // Random direction, preferring one that does not run into the border.
    std::vector<grid::Direction> dirs(std::begin(grid::kAllDirections), std::end(grid::kAllDirections));
    for (std::size_t a = 0; a < dirs.size(); ++a) {
      std::swap(dirs[a], dirs[a + uniform_index(rng, dirs.size() - a)]);
    }
    grid::ShiftResult chosen = grid::shift_cell(t[pos], spec.dist, dirs[0], g);
    for (auto d : dirs) {
      auto r = grid::shift_cell(t[pos], spec.dist, d, g);
      if (!r.clamped) {
        chosen = r;
        break;
      }
    }
    out.cells[pos] = chosen.cell;
    ++out.modified;
  }
  return out;
}

inline InjectionResult inject_detour(const CellPath& t, const AnomalySpec& spec, const grid::GridSpec& g,
                                     std::uint64_t seed) {
  if (spec.kind != AnomalyKind::kDetour) throw DomainError("inject_detour: wrong anomaly kind");
  spec.validate();
  if (t.size() < 5) throw DomainError("inject_detour: trajectory needs at least 5 cells");
  Rng rng(seed);
  const std::size_t interior = t.size() - 2;
  const std::size_t w = std::min(interior, round_half_up(spec.ratio * static_cast<double>(interior)));
  if (w == 0) return {t, 0, true};
  // Window [start, start + w) lies inside [1, n - 2].
  const std::size_t start = 1 + static_cast<std::size_t>(uniform_index(rng, interior - w + 1));
  const auto& before = t[start - 1];
  const auto& after = t[start + w];
  const bool along_x = std::abs(after.col - before.col) >= std::abs(after.row - before.row);
  grid::Direction first = along_x ? grid::Direction::kNorth : grid::Direction::kEast;
  grid::Direction second = along_x ? grid::Direction::kSouth : grid::Direction::kWest;
  if (uniform_index(rng, 2) == 1) std::swap(first, second);

  auto fits = [&](grid::Direction d) {
    for (std::size_t i = start; i < start + w; ++i) {
      if (grid::shift_cell(t[i], spec.dist, d, g).clamped) return false;
    }
    return true;
  };
  const grid::Direction dir = fits(first) || !fits(second) ? first : second;
  InjectionResult out{t, 0, false};
  for (std::size_t i = start; i < start + w; ++i) {
    out.cells[i] = grid::shift_cell(t[i], spec.dist, dir, g).cell;
    ++out.modified;
  }
  return out;
}

inline CorpusRecord route_record(const Route& r) {
  CorpusRecord rec;
  rec.id = r.id;
  for (const auto& c : r.cells) rec.tokens.push_back({TokenKind::kCell, grid::cell_token_value(c)});
  return rec;
}

inline CellPath record_cells(const CorpusRecord& r) {
  CellPath out;
  out.reserve(r.tokens.size());
  for (const auto& t : r.tokens) {
    if (t.kind != TokenKind::kCell) throw DataError("record '" + r.id + "' holds a non-cell token");
    out.push_back(grid::parse_cell_token_value(t.value));
  }
  return out;
}

/// Replaces round(fraction * N) uniformly chosen routes by injected copies and
/// labels them anomalous. Returns the corpus and its ground truth.
inline Corpus inject_anomalies(const std::vector<Route>& routes, const AnomalySpec& spec, double fraction,
                               const grid::GridSpec& g, std::uint64_t seed) {
  spec.validate();
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw DomainError("anomaly fraction must be in [0, 1]");
  if (spec.kind == AnomalyKind::kSkipRoutine) throw DomainError("skip_routine applies to pattern-of-life data only");
  Corpus out;
  for (const auto& r : routes) {
    out.records.push_back(route_record(r));
    out.truth.push_back({r.id, Label::kNormal, "none", 0.0, 0});
  }
  Rng rng(component_seed(seed, "anomaly-selection"));
  const std::size_t m = round_half_up(fraction * static_cast<double>(routes.size()));
  auto chosen = detail::sample_without_replacement(rng, routes.size(), m);
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t i : chosen) {
    const std::uint64_t s = unit_seed(component_seed(seed, "anomaly-injection"), i);
    const auto res = spec.kind == AnomalyKind::kRandomShift ? inject_random_shift(routes[i].cells, spec, g, s)
                                                            : inject_detour(routes[i].cells, spec, g, s);
    Route injected = routes[i];
    injected.cells = res.cells;
    out.records[i] = route_record(injected);
    out.records[i].label = Label::kAnomalous;
    out.truth[i] = {routes[i].id, Label::kAnomalous, std::string(anomaly_kind_name(spec.kind)), spec.ratio, spec.dist};
  }
  return out;
}

/// OD grouping and frequency filter over cell paths; returns the indices of
/// kept paths in input order.
inline std::vector<std::size_t> od_filter_indices(const std::vector<CellPath>& paths, std::size_t min_count) {
  const auto kept = grid::filter_od_groups(grid::group_by_od(paths), min_count);
  std::vector<std::size_t> idx;
  for (const auto& [key, members] : kept) idx.insert(idx.end(), members.begin(), members.end());
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace trajlm::synth
