// Copyright 2026 The dualrec Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Synthesized users: cliques of users with overlapping behaviors, item
// values, and representative-subset selection as weighted maximum coverage.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "dualrec/data.hpp"

namespace dualrec {

enum class OverlapMetric { kIntersection, kJaccard };

OverlapMetric parse_overlap_metric(const std::string& name);

// The `clique_size` users (anchor first and counted) with the largest
// behavior overlap with `anchor`; ties go to the smaller user index. Users
// with zero overlap are never added, so the list may be shorter.
std::vector<int> neighbor_users(const InteractionLog& log, int anchor,
                                int clique_size,
                                OverlapMetric metric = OverlapMetric::kIntersection);

struct Clique {
  int anchor = 0;
  std::vector<int> members;
  // Distinct items of all members, ordered by earliest timestamp among
  // members (ties: member order, then position).
  std::vector<int> items;
  // How many members engaged with items[i].
  std::vector<int> member_count;
};

// One clique per user of `log`.
std::vector<Clique> build_cliques(const InteractionLog& log, int clique_size,
                                  OverlapMetric metric = OverlapMetric::kIntersection);

// w_j = 1 + (users whose sequence contains j) / (total interactions).
std::vector<double> item_values(const InteractionLog& log);

struct CoverageInstance {
  int num_columns = 0;
  std::vector<std::vector<int>> rows;  // sorted, distinct column indices
  std::vector<double> values;          // one per column
  int budget = 1;

  int num_rows() const { return static_cast<int>(rows.size()); }
  // Throws FormatError on broken invariants.
  void validate() const;
};

CoverageInstance make_coverage_instance(const std::vector<Clique>& cliques,
                                        std::vector<double> values, int budget);

struct Selection {
  std::vector<bool> indicator;
  std::vector<int> chosen;  // in selection order
  double covered_value = 0.0;
};

// Lazy greedy with a max-heap of stale marginal gains. Stops after `budget`
// rows or when no row adds value. Ties go to the smaller row index.
Selection solve_mcp_greedy(const CoverageInstance& instance);

// Plain greedy that rescans every row each round. Reference for the lazy
// variant.
Selection solve_mcp_naive_greedy(const CoverageInstance& instance);

inline constexpr int kExactSolverMaxRows = 24;
inline constexpr double kExactSolverMaxSubsets = 16777216.0;

// Branch and bound over row subsets. Accepts up to kExactSolverMaxRows rows,
// or larger instances whose C(P, Z) stays within kExactSolverMaxSubsets;
// anything else raises ConfigError.
Selection solve_mcp_exact(const CoverageInstance& instance);

// Sum of values of columns j with sum_i x_i * A_ij >= 1, evaluated column by
// column from the indicator vector.
double coverage_value(const std::vector<bool>& indicator,
                      const CoverageInstance& instance);

// Same quantity computed as the value of the set union of chosen rows.
double union_coverage_value(const std::vector<int>& chosen,
                            const CoverageInstance& instance);

void write_coverage_instance(std::ostream& out, const CoverageInstance& instance);
CoverageInstance read_coverage_instance(std::istream& in);
void write_selection(std::ostream& out, const Selection& selection);
Selection read_selection(std::istream& in, int num_rows);
void write_cliques(std::ostream& out, const std::vector<Clique>& cliques);
std::vector<Clique> read_cliques(std::istream& in);

}  // namespace dualrec
