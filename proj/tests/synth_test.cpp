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

#include <algorithm>
#include <set>
#include <sstream>

#include "trajlm/corpus.hpp"
#include "trajlm/synth.hpp"

namespace trajlm::synth {
namespace {

WorldConfig small_world(std::int64_t agents, std::int64_t days, std::int64_t anomalous, std::int64_t anomalous_days) {
  WorldConfig c;
  c.n_agents = agents;
  c.n_days = days;
  c.n_anomalous_agents = anomalous;
  c.anomalous_days = anomalous_days;
  c.seed = 11;
  return c;
}

std::string corpus_bytes(const Corpus& c) {
  std::ostringstream out;
  write_corpus_jsonl(out, c.records, ArtifactMeta{"t", "h"});
  write_truth_csv(out, c.truth, ArtifactMeta{"t", "h"});
  return out.str();
}

TEST(PolCorpus, CountsWithoutAnomalies) {
  const auto c = gen_pol_corpus(small_world(2, 3, 0, 0));
  ASSERT_EQ(c.records.size(), 6u);
  for (const auto& r : c.records) EXPECT_EQ(r.label, Label::kNormal);
}

TEST(PolCorpus, AnomaliesOnLastDaysOfOneAgent) {
  const auto w = generate_world(small_world(4, 10, 1, 2));
  ASSERT_EQ(w.anomalous_agents.size(), 1u);
  const std::string agent = std::to_string(w.anomalous_agents[0]);
  std::size_t n = 0;
  for (const auto& d : w.days) {
    if (d.label != Label::kAnomalous) continue;
    ++n;
    EXPECT_EQ(d.agent, agent);
    EXPECT_GE(d.day, 8);
  }
  EXPECT_EQ(n, 2u);
}

TEST(PolCorpus, PresetScaleCounts) {
  const auto c = gen_pol_corpus(WorldConfig{});
  EXPECT_EQ(c.records.size(), 5000u);
  EXPECT_EQ(std::count_if(c.records.begin(), c.records.end(),
                          [](const CorpusRecord& r) { return r.label == Label::kAnomalous; }),
            70);
}

TEST(PolCorpus, Deterministic) {
  const auto cfg = small_world(5, 14, 2, 3);
  EXPECT_EQ(corpus_bytes(gen_pol_corpus(cfg)), corpus_bytes(gen_pol_corpus(cfg)));
  auto other = cfg;
  other.seed = 12;
  EXPECT_NE(corpus_bytes(gen_pol_corpus(cfg)), corpus_bytes(gen_pol_corpus(other)));
}

TEST(PolCorpus, PlantedStayIsOffRoutine) {
  const auto w = generate_world(small_world(6, 21, 3, 7));
  for (const auto& d : w.days) {
    if (d.label != Label::kAnomalous) {
      EXPECT_FALSE(d.planted_stay.has_value());
      continue;
    }
    ASSERT_TRUE(d.planted_stay.has_value());
    const auto& s = w.agents.at(std::stoul(d.agent));
    const auto wd = static_cast<std::size_t>(d.day % 7);
    const auto& label = d.stays.at(*d.planted_stay).label;
    EXPECT_NE(label, "home");
    EXPECT_NE(label, "work");
    for (const auto& slot : s.routine[wd]) EXPECT_NE(slot.label, label);
  }
}

TEST(PolCorpus, RoutinesWellFormed) {
  const auto w = generate_world(small_world(10, 7, 0, 0));
  for (const auto& a : w.agents) {
    for (std::size_t wd = 0; wd < 7; ++wd) {
      ASSERT_GE(a.routine[wd].size(), 3u);
      EXPECT_EQ(a.routine[wd].front().label, "home");
      EXPECT_EQ(a.routine[wd].back().label, "home");
      if (a.working[wd]) {
        EXPECT_EQ(a.routine[wd][1].label, "work");
      }
    }
  }
  for (const auto& d : w.days) {
    for (const auto& s : d.stays) EXPECT_GT(s.duration_s, 0.0);
  }
}

TEST(PolCorpus, RenderLayouts) {
  const auto w = generate_world(small_world(3, 7, 1, 2));
  for (auto cfg : {LocationConfig::kStaypoint, LocationConfig::kGps, LocationConfig::kDuration,
                   LocationConfig::kStaypointDuration, LocationConfig::kActivity}) {
    const auto c = render(w, cfg);
    ASSERT_EQ(c.records.size(), w.days.size());
    for (std::size_t i = 0; i < w.days.size(); ++i) {
      EXPECT_EQ(c.records[i].tokens.size(), w.days[i].stays.size() * tokens_per_stay(cfg));
      EXPECT_EQ(c.records[i].agent, w.days[i].agent);
      EXPECT_EQ(c.records[i].weekday, w.days[i].weekday);
    }
  }
  const auto sp = render(w, LocationConfig::kStaypoint);
  for (std::size_t i = 0; i < w.days.size(); ++i) {
    if (!w.days[i].planted_stay) continue;
    const auto pos = *planted_token_position(w.days[i], LocationConfig::kStaypoint);
    const auto tokens = layout_tokens(sp.records[i]);
    EXPECT_EQ(tokens.at(pos).value, w.days[i].stays[*w.days[i].planted_stay].label);
  }
}

TEST(WorldConfig, Validation) {
  auto c = small_world(2, 3, 3, 0);
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_world(2, 3, 1, 4);
  EXPECT_THROW(c.validate(), ConfigError);
}

const grid::GridSpec kGrid{0.0, 0.0, 100.0, 30, 30};

TEST(Routes, SharedEndpoints) {
  const std::vector<OdPair> pairs{{{2, 3}, {20, 15}}};
  const auto routes = gen_routes_between(kGrid, pairs, 30, 0.2, 4);
  ASSERT_EQ(routes.size(), 30u);
  for (const auto& r : routes) {
    EXPECT_EQ(r.cells.front(), (grid::CellId{2, 3}));
    EXPECT_EQ(r.cells.back(), (grid::CellId{20, 15}));
    for (std::size_t i = 1; i < r.cells.size(); ++i) {
      EXPECT_EQ(std::abs(r.cells[i].col - r.cells[i - 1].col) + std::abs(r.cells[i].row - r.cells[i - 1].row), 1);
    }
  }
}

TEST(Routes, ZeroNoiseIsOneStaircase) {
  const std::vector<OdPair> pairs{{{2, 3}, {20, 15}}};
  const auto routes = gen_routes_between(kGrid, pairs, 10, 0.0, 4);
  for (const auto& r : routes) EXPECT_EQ(r.cells, routes.front().cells);
  EXPECT_EQ(routes.front().cells.size(), 18u + 12u + 1u);
}

TEST(Routes, OutOfBoundsEndpoint) {
  const std::vector<OdPair> pairs{{{2, 3}, {40, 15}}};
  EXPECT_THROW(gen_routes_between(kGrid, pairs, 3, 0.1, 1), DomainError);
}

TEST(Routes, CorpusSurvivesOdFilter) {
  const auto routes = gen_route_corpus(kGrid, 8, 30, 0.1, 9);
  std::vector<CellPath> paths;
  for (const auto& r : routes) paths.push_back(r.cells);
  EXPECT_EQ(od_filter_indices(paths, 25).size(), routes.size());
  for (const auto& [key, members] : grid::group_by_od(paths)) EXPECT_GE(members.size(), 25u);
}

CellPath straight_east(std::size_t n, std::int64_t row = 10) {
  CellPath p;
  for (std::size_t i = 0; i < n; ++i) p.push_back({static_cast<std::int64_t>(i) + 5, row});
  return p;
}

TEST(RandomShift, ExactCountAndDistance) {
  const auto path = straight_east(12);
  AnomalySpec spec{AnomalyKind::kRandomShift, 0.3, 3};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = inject_random_shift(path, spec, kGrid, seed);
    ASSERT_EQ(r.cells.size(), path.size());
    std::size_t changed = 0;
    for (std::size_t i = 0; i < path.size(); ++i) {
      if (r.cells[i] == path[i]) continue;
      ++changed;
      EXPECT_EQ(grid::chebyshev(r.cells[i], path[i]), 3);
    }
    EXPECT_EQ(changed, 3u);
    EXPECT_EQ(r.cells.front(), path.front());
    EXPECT_EQ(r.cells.back(), path.back());
  }
}

TEST(RandomShift, ZeroSelectionIsIdentity) {
  const auto path = straight_east(5);
  const auto r = inject_random_shift(path, {AnomalyKind::kRandomShift, 0.1, 3}, kGrid, 1);
  EXPECT_EQ(r.cells, path);
  EXPECT_EQ(r.modified, 0u);
}

TEST(RandomShift, DeterministicAndDegenerate) {
  const auto path = straight_east(12);
  AnomalySpec spec{AnomalyKind::kRandomShift, 0.3, 3};
  EXPECT_EQ(inject_random_shift(path, spec, kGrid, 7).cells, inject_random_shift(path, spec, kGrid, 7).cells);
  EXPECT_THROW(inject_random_shift(straight_east(2), spec, kGrid, 7), DomainError);
}

TEST(Detour, WindowTranslatedPerpendicular) {
  const auto path = straight_east(12);
  AnomalySpec spec{AnomalyKind::kDetour, 0.4, 3};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = inject_detour(path, spec, kGrid, seed);
    ASSERT_EQ(r.cells.size(), path.size());
    EXPECT_EQ(r.cells.front(), path.front());
    EXPECT_EQ(r.cells.back(), path.back());
    std::vector<std::size_t> moved;
    for (std::size_t i = 0; i < path.size(); ++i) {
      if (r.cells[i] != path[i]) moved.push_back(i);
    }
    ASSERT_EQ(moved.size(), 4u);
    EXPECT_EQ(moved.back() - moved.front(), 3u);
    const auto dy = r.cells[moved[0]].row - path[moved[0]].row;
    EXPECT_EQ(std::abs(dy), 3);
    for (auto i : moved) {
      EXPECT_EQ(r.cells[i].col, path[i].col);
      EXPECT_EQ(r.cells[i].row - path[i].row, dy);
    }
  }
}

TEST(Detour, EmptyWindowWarns) {
  const auto path = straight_east(6);
  const auto r = inject_detour(path, {AnomalyKind::kDetour, 0.1, 3}, kGrid, 1);
  EXPECT_EQ(r.cells, path);
  EXPECT_TRUE(r.warning);
  EXPECT_THROW(inject_detour(straight_east(4), {AnomalyKind::kDetour, 0.5, 3}, kGrid, 1), DomainError);
}

TEST(Detour, Deterministic) {
  const auto path = straight_east(15);
  AnomalySpec spec{AnomalyKind::kDetour, 0.3, 3};
  EXPECT_EQ(inject_detour(path, spec, kGrid, 3).cells, inject_detour(path, spec, kGrid, 3).cells);
}

TEST(InjectAnomalies, LabelBookkeeping) {
  const auto routes = gen_route_corpus(kGrid, 6, 30, 0.1, 2);
  for (auto kind : {AnomalyKind::kRandomShift, AnomalyKind::kDetour}) {
    const auto c = inject_anomalies(routes, {kind, 0.3, 3}, 0.05, kGrid, 5);
    ASSERT_EQ(c.records.size(), routes.size());
    ASSERT_EQ(c.truth.size(), routes.size());
    std::size_t n = 0;
    for (std::size_t i = 0; i < routes.size(); ++i) {
      EXPECT_EQ(c.records[i].id, c.truth[i].id);
      EXPECT_EQ(c.records[i].label, c.truth[i].label);
      const auto cells = record_cells(c.records[i]);
      EXPECT_EQ(cells.size(), routes[i].cells.size());
      EXPECT_EQ(cells.front(), routes[i].cells.front());
      EXPECT_EQ(cells.back(), routes[i].cells.back());
      if (c.records[i].label == Label::kAnomalous) {
        ++n;
        EXPECT_NE(cells, routes[i].cells);
        EXPECT_EQ(c.truth[i].kind, anomaly_kind_name(kind));
      } else {
        EXPECT_EQ(cells, routes[i].cells);
      }
    }
    EXPECT_EQ(n, round_half_up(0.05 * static_cast<double>(routes.size())));
  }
}

TEST(AnomalySpec, Validation) {
  EXPECT_THROW((AnomalySpec{AnomalyKind::kRandomShift, 0.0, 3}.validate()), DomainError);
  EXPECT_THROW((AnomalySpec{AnomalyKind::kDetour, 0.3, 0}.validate()), DomainError);
  EXPECT_NO_THROW((AnomalySpec{AnomalyKind::kSkipRoutine, 0.3, 0}.validate()));
}

}  // namespace
}  // namespace trajlm::synth
