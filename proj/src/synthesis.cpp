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


#include "dualrec/synthesis.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include <json.hpp>

#include "dualrec/common.hpp"

namespace dualrec {
namespace {

constexpr std::string_view kInstanceMagic = "# dualrec coverage instance v1";
constexpr std::string_view kSelectionMagic = "# dualrec selection v1";

std::vector<std::vector<int>> distinct_items(const InteractionLog& log) {
  std::vector<std::vector<int>> out(log.num_users());
  for (size_t u = 0; u < log.num_users(); ++u) {
    out[u] = log.sequences[u];
    std::sort(out[u].begin(), out[u].end());
    out[u].erase(std::unique(out[u].begin(), out[u].end()), out[u].end());
  }
  return out;
}

std::vector<std::vector<int>> item_to_users(
    const std::vector<std::vector<int>>& distinct, size_t num_items) {
  std::vector<std::vector<int>> out(num_items);
  for (size_t u = 0; u < distinct.size(); ++u) {
    for (int item : distinct[u]) out[item].push_back(static_cast<int>(u));
  }
  return out;
}

std::vector<int> neighbors_from_index(
    const std::vector<std::vector<int>>& distinct,
    const std::vector<std::vector<int>>& inverted, int anchor, int clique_size,
    OverlapMetric metric, std::vector<int>& scratch) {
  std::vector<int> touched;
  for (int item : distinct[anchor]) {
    for (int u : inverted[item]) {
      if (u == anchor) continue;
      if (scratch[u]++ == 0) touched.push_back(u);
    }
  }
  std::vector<std::pair<double, int>> ranked;
  ranked.reserve(touched.size());
  for (int u : touched) {
    const int inter = scratch[u];
    scratch[u] = 0;
    double score = inter;
    if (metric == OverlapMetric::kJaccard) {
      const auto uni = distinct[anchor].size() + distinct[u].size() - inter;
      score = static_cast<double>(inter) / static_cast<double>(uni);
    }
    ranked.emplace_back(score, u);
  }
  const size_t keep =
      std::min(ranked.size(), static_cast<size_t>(std::max(clique_size - 1, 0)));
  std::partial_sort(ranked.begin(), ranked.begin() + keep, ranked.end(),
                    [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                    });
  std::vector<int> out{anchor};
  for (size_t i = 0; i < keep; ++i) out.push_back(ranked[i].second);
  return out;
}

Clique make_clique(const InteractionLog& log, int anchor,
                   std::vector<int> members) {
  struct Event {
    int64_t ts;
    int member_rank;
    int position;
    int item;
  };
  std::vector<Event> events;
  for (int r = 0; r < static_cast<int>(members.size()); ++r) {
    const auto& seq = log.sequences[members[r]];
    for (int p = 0; p < static_cast<int>(seq.size()); ++p) {
      events.push_back({log.timestamps[members[r]][p], r, p, seq[p]});
    }
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return std::tie(a.ts, a.member_rank, a.position) <
           std::tie(b.ts, b.member_rank, b.position);
  });
  Clique c;
  c.anchor = anchor;
  c.members = std::move(members);
  std::unordered_map<int, size_t> slot;
  for (const auto& e : events) {
    if (slot.try_emplace(e.item, c.items.size()).second) c.items.push_back(e.item);
  }
  c.member_count.assign(c.items.size(), 0);
  for (int m : c.members) {
    std::vector<int> distinct = log.sequences[m];
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (int item : distinct) ++c.member_count[slot.at(item)];
  }
  return c;
}

double marginal_gain(const std::vector<int>& row,
                     const std::vector<char>& covered,
                     const std::vector<double>& values) {
  double gain = 0.0;
  for (int col : row) {
    if (!covered[col]) gain += values[col];
  }
  return gain;
}

Selection finish_selection(const CoverageInstance& instance,
                           std::vector<int> chosen) {
  Selection s;
  s.indicator.assign(instance.rows.size(), false);
  for (int r : chosen) s.indicator[r] = true;
  s.chosen = std::move(chosen);
  s.covered_value = coverage_value(s.indicator, instance);
  return s;
}

int effective_budget(const CoverageInstance& instance) {
  return std::min(instance.budget, instance.num_rows());
}

}  // namespace

OverlapMetric parse_overlap_metric(const std::string& name) {
  if (name == "intersection") return OverlapMetric::kIntersection;
  if (name == "jaccard") return OverlapMetric::kJaccard;
  throw ConfigError("unknown overlap metric '" + name + "'");
}

std::vector<int> neighbor_users(const InteractionLog& log, int anchor,
                                int clique_size, OverlapMetric metric) {
  if (clique_size < 1) throw ConfigError("clique size must be >= 1");
  if (anchor < 0 || anchor >= static_cast<int>(log.num_users())) {
    throw ConfigError("anchor user out of range");
  }
  const auto distinct = distinct_items(log);
  const auto inverted = item_to_users(distinct, log.num_items());
  std::vector<int> scratch(log.num_users(), 0);
  return neighbors_from_index(distinct, inverted, anchor, clique_size, metric,
                              scratch);
}

std::vector<Clique> build_cliques(const InteractionLog& log, int clique_size,
                                  OverlapMetric metric) {
  if (clique_size < 1) throw ConfigError("clique size must be >= 1");
  if (log.num_users() == 0) throw ConfigError("cannot build cliques of an empty log");
  const auto distinct = distinct_items(log);
  const auto inverted = item_to_users(distinct, log.num_items());
  std::vector<int> scratch(log.num_users(), 0);
  std::vector<Clique> cliques;
  cliques.reserve(log.num_users());
  for (int u = 0; u < static_cast<int>(log.num_users()); ++u) {
    auto members =
        neighbors_from_index(distinct, inverted, u, clique_size, metric, scratch);
    cliques.push_back(make_clique(log, u, std::move(members)));
  }
  return cliques;
}

std::vector<double> item_values(const InteractionLog& log) {
  if (log.num_interactions == 0) {
    throw ConfigError("item values need at least one interaction");
  }
  std::vector<int> users_with(log.num_items(), 0);
  for (const auto& items : distinct_items(log)) {
    for (int item : items) ++users_with[item];
  }
  std::vector<double> values(log.num_items());
  const double total = static_cast<double>(log.num_interactions);
  for (size_t j = 0; j < values.size(); ++j) {
    values[j] = 1.0 + static_cast<double>(users_with[j]) / total;
  }
  return values;
}

void CoverageInstance::validate() const {
  if (budget < 1) throw FormatError("coverage budget must be >= 1");
  if (static_cast<int>(values.size()) != num_columns) {
    throw FormatError("one value per column required");
  }
  for (double v : values) {
    if (!(v >= 1.0)) throw FormatError("column values must be >= 1");
  }
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (row[i] < 0 || row[i] >= num_columns ||
          (i > 0 && row[i] <= row[i - 1])) {
        throw FormatError("rows must list sorted distinct in-range columns");
      }
    }
  }
}

CoverageInstance make_coverage_instance(const std::vector<Clique>& cliques,
                                        std::vector<double> values, int budget) {
  CoverageInstance inst;
  inst.num_columns = static_cast<int>(values.size());
  inst.values = std::move(values);
  inst.budget = std::max(1, std::min(budget, static_cast<int>(cliques.size())));
  inst.rows.reserve(cliques.size());
  for (const auto& c : cliques) {
    std::vector<int> row = c.items;
    std::sort(row.begin(), row.end());
    inst.rows.push_back(std::move(row));
  }
  inst.validate();
  return inst;
}

Selection solve_mcp_greedy(const CoverageInstance& instance) {
  instance.validate();
  const int budget = effective_budget(instance);
  std::vector<char> covered(instance.num_columns, 0);
  // Heap entries order by gain, then prefer the smaller row index.
  using Entry = std::pair<double, int>;
  auto less = [](const Entry& a, const Entry& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second > b.second;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(less)> heap(less);
  for (int r = 0; r < instance.num_rows(); ++r) {
    heap.emplace(marginal_gain(instance.rows[r], covered, instance.values), r);
  }
  std::vector<int> chosen;
  while (static_cast<int>(chosen.size()) < budget && !heap.empty()) {
    const auto [stale, row] = heap.top();
    heap.pop();
    const double gain = marginal_gain(instance.rows[row], covered, instance.values);
    // Stored gains are upper bounds, so a fresh gain that still beats the
    // next entry is the true maximum.
    if (!heap.empty() && less(Entry{gain, row}, heap.top())) {
      heap.emplace(gain, row);
      continue;
    }
    if (gain <= 0.0) break;
    chosen.push_back(row);
    for (int col : instance.rows[row]) covered[col] = 1;
  }
  return finish_selection(instance, std::move(chosen));
}

Selection solve_mcp_naive_greedy(const CoverageInstance& instance) {
  instance.validate();
  const int budget = effective_budget(instance);
  std::vector<char> covered(instance.num_columns, 0);
  std::vector<bool> taken(instance.rows.size(), false);
  std::vector<int> chosen;
  while (static_cast<int>(chosen.size()) < budget) {
    int best = -1;
    double best_gain = 0.0;
    for (int r = 0; r < instance.num_rows(); ++r) {
      if (taken[r]) continue;
      const double gain = marginal_gain(instance.rows[r], covered, instance.values);
      if (gain > best_gain) {
        best_gain = gain;
        best = r;
      }
    }
    if (best < 0) break;
    taken[best] = true;
    chosen.push_back(best);
    for (int col : instance.rows[best]) covered[col] = 1;
  }
  return finish_selection(instance, std::move(chosen));
}

Selection solve_mcp_exact(const CoverageInstance& instance) {
  instance.validate();
  const int budget = effective_budget(instance);
  double subsets = 1.0;
  for (int i = 0; i < budget; ++i) {
    subsets = subsets * (instance.num_rows() - i) / (i + 1);
  }
  if (instance.num_rows() > kExactSolverMaxRows && subsets > kExactSolverMaxSubsets) {
    throw ConfigError("exact MCP solver refuses " +
                      std::to_string(instance.num_rows()) + " rows with budget " +
                      std::to_string(budget));
  }
  const int rows = instance.num_rows();
  std::vector<int> cover_count(instance.num_columns, 0);
  std::vector<int> current, best;
  double best_value = -1.0;

  auto gain_of = [&](int r) {
    double g = 0.0;
    for (int col : instance.rows[r]) {
      if (cover_count[col] == 0) g += instance.values[col];
    }
    return g;
  };

  auto search = [&](auto&& self, int start, double value) -> void {
    if (value > best_value) {
      best_value = value;
      best = current;
    }
    const int slots = budget - static_cast<int>(current.size());
    if (slots == 0 || start >= rows) return;
    std::vector<double> gains;
    gains.reserve(rows - start);
    for (int r = start; r < rows; ++r) gains.push_back(gain_of(r));
    std::vector<double> top = gains;
    const int k = std::min(slots, static_cast<int>(top.size()));
    std::partial_sort(top.begin(), top.begin() + k, top.end(), std::greater<>());
    const double bound = std::accumulate(top.begin(), top.begin() + k, 0.0);
    if (value + bound <= best_value) return;
    for (int r = start; r < rows; ++r) {
      if (gains[r - start] <= 0.0) continue;
      current.push_back(r);
      for (int col : instance.rows[r]) ++cover_count[col];
      self(self, r + 1, value + gains[r - start]);
      for (int col : instance.rows[r]) --cover_count[col];
      current.pop_back();
    }
  };
  search(search, 0, 0.0);
  return finish_selection(instance, std::move(best));
}

double coverage_value(const std::vector<bool>& indicator,
                      const CoverageInstance& instance) {
  if (indicator.size() != instance.rows.size()) {
    throw ConfigError("indicator length must equal the number of rows");
  }
  std::vector<int> column_sum(instance.num_columns, 0);
  for (size_t i = 0; i < instance.rows.size(); ++i) {
    if (!indicator[i]) continue;
    for (int col : instance.rows[i]) ++column_sum[col];
  }
  double total = 0.0;
  for (int j = 0; j < instance.num_columns; ++j) {
    if (column_sum[j] >= 1) total += instance.values[j];
  }
  return total;
}

double union_coverage_value(const std::vector<int>& chosen,
                            const CoverageInstance& instance) {
  std::set<int> covered;
  for (int r : chosen) covered.insert(instance.rows[r].begin(), instance.rows[r].end());
  double total = 0.0;
  for (int col : covered) total += instance.values[col];
  return total;
}

void write_coverage_instance(std::ostream& out, const CoverageInstance& instance) {
  out << kInstanceMagic << '\n';
  out << instance.num_rows() << ' ' << instance.num_columns << ' '
      << instance.budget << '\n';
  for (const auto& row : instance.rows) {
    for (size_t i = 0; i < row.size(); ++i) out << (i ? " " : "") << row[i];
    out << '\n';
  }
  char buf[32];
  for (int j = 0; j < instance.num_columns; ++j) {
    std::snprintf(buf, sizeof(buf), "%.17g", instance.values[j]);
    out << (j ? " " : "") << buf;
  }
  out << '\n';
}

CoverageInstance read_coverage_instance(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kInstanceMagic) {
    throw FormatError("not a coverage instance file");
  }
  CoverageInstance inst;
  int rows = 0;
  if (!std::getline(in, line)) throw FormatError("missing instance header");
  std::istringstream header(line);
  if (!(header >> rows >> inst.num_columns >> inst.budget) || rows < 0) {
    throw FormatError("malformed instance header");
  }
  inst.rows.resize(rows);
  for (int r = 0; r < rows; ++r) {
    if (!std::getline(in, line)) throw FormatError("instance truncated");
    std::istringstream fields(line);
    int col = 0;
    while (fields >> col) inst.rows[r].push_back(col);
  }
  if (!std::getline(in, line)) throw FormatError("instance values missing");
  std::istringstream fields(line);
  double v = 0.0;
  while (fields >> v) inst.values.push_back(v);
  inst.validate();
  return inst;
}

void write_selection(std::ostream& out, const Selection& selection) {
  out << kSelectionMagic << '\n';
  out << "chosen " << selection.chosen.size();
  for (int r : selection.chosen) out << ' ' << r;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", selection.covered_value);
  out << "\ncovered_value " << buf << '\n';
}

Selection read_selection(std::istream& in, int num_rows) {
  std::string line;
  if (!std::getline(in, line) || line != kSelectionMagic) {
    throw FormatError("not a selection file");
  }
  Selection s;
  std::string tag;
  size_t count = 0;
  if (!(in >> tag >> count) || tag != "chosen") {
    throw FormatError("malformed selection file");
  }
  s.indicator.assign(num_rows, false);
  for (size_t i = 0; i < count; ++i) {
    int r = -1;
    if (!(in >> r) || r < 0 || r >= num_rows) {
      throw FormatError("selection row out of range");
    }
    s.chosen.push_back(r);
    s.indicator[r] = true;
  }
  if (!(in >> tag >> s.covered_value) || tag != "covered_value") {
    throw FormatError("selection missing covered_value");
  }
  return s;
}

void write_cliques(std::ostream& out, const std::vector<Clique>& cliques) {
  for (const auto& c : cliques) {
    nlohmann::ordered_json j;
    j["anchor"] = c.anchor;
    j["members"] = c.members;
    j["items"] = c.items;
    j["member_count"] = c.member_count;
    out << j.dump() << '\n';
  }
}

std::vector<Clique> read_cliques(std::istream& in) {
  std::vector<Clique> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Clique c;
      c.anchor = j.at("anchor").get<int>();
      c.members = j.at("members").get<std::vector<int>>();
      c.items = j.at("items").get<std::vector<int>>();
      c.member_count = j.at("member_count").get<std::vector<int>>();
      out.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed clique record: ") + e.what());
    }
  }
  return out;
}

}  // namespace dualrec
