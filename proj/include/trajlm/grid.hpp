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
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajlm/common.hpp"

namespace trajlm::grid {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct CellId {
  std::int64_t col = 0;
  std::int64_t row = 0;

  friend auto operator<=>(const CellId&, const CellId&) = default;
};

/// Regular square grid over a projected plane (meters).
struct GridSpec {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 100.0;
  std::int64_t n_cols = 1;
  std::int64_t n_rows = 1;

  void validate() const {
    if (!(cell_size > 0.0)) throw DomainError("grid cell_size must be > 0");
    if (n_cols < 1 || n_rows < 1) throw DomainError("grid must have at least one column and row");
  }

  bool contains(const CellId& c) const {
    return c.col >= 0 && c.col < n_cols && c.row >= 0 && c.row < n_rows;
  }

  double max_x() const { return origin_x + cell_size * static_cast<double>(n_cols); }
  double max_y() const { return origin_y + cell_size * static_cast<double>(n_rows); }
};

struct TimedPoint {
  double x = 0.0;
  double y = 0.0;
  double t = 0.0;
};

struct RawTrajectory {
  std::string id;
  std::optional<std::string> agent_id;
  std::vector<TimedPoint> points;

  /// Timestamps must be strictly increasing.
  void validate() const {
    for (std::size_t i = 1; i < points.size(); ++i) {
      if (!(points[i].t > points[i - 1].t)) {
        throw DomainError("trajectory '" + id + "': timestamps not strictly increasing at point " +
                          std::to_string(i));
      }
    }
  }
};

inline std::string describe(const Point& p) {
  return "(" + format_double(p.x) + ", " + format_double(p.y) + ")";
}

inline std::string describe(const GridSpec& g) {
  return "[" + format_double(g.origin_x) + ", " + format_double(g.max_x()) + ") x [" +
         format_double(g.origin_y) + ", " + format_double(g.max_y()) + ")";
}

inline std::string describe(const CellId& c) {
  return "(" + std::to_string(c.col) + ", " + std::to_string(c.row) + ")";
}

/// Cell containing p. Edges belong to the cell above/right of them (floor).
inline CellId to_cell(const Point& p, const GridSpec& g) {
  const double fx = std::floor((p.x - g.origin_x) / g.cell_size);
  const double fy = std::floor((p.y - g.origin_y) / g.cell_size);
  if (!(fx >= 0.0 && fy >= 0.0 && fx < static_cast<double>(g.n_cols) &&
        fy < static_cast<double>(g.n_rows))) {
    throw DomainError("point " + describe(p) + " outside grid bounds " + describe(g));
  }
  return {static_cast<std::int64_t>(fx), static_cast<std::int64_t>(fy)};
}

inline Point cell_center(const CellId& c, const GridSpec& g) {
  if (!g.contains(c)) {
    throw DomainError("cell " + describe(c) + " outside grid of " + std::to_string(g.n_cols) +
                      "x" + std::to_string(g.n_rows) + " cells");
  }
  return {g.origin_x + (static_cast<double>(c.col) + 0.5) * g.cell_size,
          g.origin_y + (static_cast<double>(c.row) + 0.5) * g.cell_size};
}

inline std::vector<CellId> discretize(const RawTrajectory& t, const GridSpec& g, bool dedup = false) {
  std::vector<CellId> cells;
  cells.reserve(t.points.size());
  for (std::size_t i = 0; i < t.points.size(); ++i) {
    CellId c;
    try {
      c = to_cell({t.points[i].x, t.points[i].y}, g);
    } catch (const DomainError& e) {
      throw DomainError("trajectory '" + t.id + "' point " + std::to_string(i) + ": " + e.what());
    }
    if (dedup && !cells.empty() && cells.back() == c) continue;
    cells.push_back(c);
  }
  return cells;
}

using OdKey = std::pair<CellId, CellId>;
/// OD key -> indices into the grouped input, in input order.
using OdGroups = std::map<OdKey, std::vector<std::size_t>>;

inline OdGroups group_by_od(std::span<const std::vector<CellId>> trajectories) {
  OdGroups groups;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& t = trajectories[i];
    if (t.empty()) throw DomainError("group_by_od: trajectory " + std::to_string(i) + " is empty");
    groups[{t.front(), t.back()}].push_back(i);
  }
  return groups;
}

inline OdGroups filter_od_groups(const OdGroups& groups, std::size_t min_count) {
  if (min_count < 1) throw DomainError("filter_od_groups: min_count must be >= 1");
  OdGroups kept;
  for (const auto& [key, members] : groups) {
    if (members.size() >= min_count) kept.emplace(key, members);
  }
  return kept;
}

enum class Direction { kEast, kWest, kNorth, kSouth };

inline constexpr Direction kAllDirections[] = {Direction::kEast, Direction::kWest,
                                                Direction::kNorth, Direction::kSouth};

inline std::pair<int, int> unit_vector(Direction d) {
  switch (d) {
    case Direction::kEast: return {1, 0};
    case Direction::kWest: return {-1, 0};
    case Direction::kNorth: return {0, 1};
    case Direction::kSouth: return {0, -1};
  }
  return {0, 0};
}

struct ShiftResult {
  CellId cell;
  bool clamped = false;
};

inline std::int64_t chebyshev(const CellId& a, const CellId& b) {
  return std::max(std::abs(a.col - b.col), std::abs(a.row - b.row));
}

/// Moves c by dist cells along dir, clamping to the grid.
inline ShiftResult shift_cell(const CellId& c, std::int64_t dist, Direction dir, const GridSpec& g) {
  if (dist < 0) throw DomainError("shift_cell: negative distance");
  const auto [dx, dy] = unit_vector(dir);
  const std::int64_t col = c.col + dx * dist;
  const std::int64_t row = c.row + dy * dist;
  ShiftResult r;
  r.cell.col = std::clamp<std::int64_t>(col, 0, g.n_cols - 1);
  r.cell.row = std::clamp<std::int64_t>(row, 0, g.n_rows - 1);
  r.clamped = r.cell.col != col || r.cell.row != row;
  return r;
}

/// Token value for a cell, "col_row".
inline std::string cell_token_value(const CellId& c) {
  return std::to_string(c.col) + "_" + std::to_string(c.row);
}

inline CellId parse_cell_token_value(const std::string& v) {
  const auto sep = v.find('_');
  if (sep == std::string::npos) throw DataError("malformed cell token '" + v + "'");
  try {
    return {std::stoll(v.substr(0, sep)), std::stoll(v.substr(sep + 1))};
  } catch (const std::exception&) {
    throw DataError("malformed cell token '" + v + "'");
  }
}

}  // namespace trajlm::grid
