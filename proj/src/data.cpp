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


#include "dualrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dualrec/common.hpp"

namespace dualrec {
namespace {

constexpr std::string_view kCanonicalMagic = "# dualrec canonical log v1";
constexpr std::string_view kManifestMagic = "# dualrec split manifest v1";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' ||
                        s.front() == '\r' || s.front() == '\n')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' ||
                        s.back() == '\r' || s.back() == '\n')) {
    s.remove_suffix(1);
  }
  return s;
}

// Titles and keys are written into tab-separated files.
std::string sanitize_field(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  }
  return out;
}

std::optional<std::string> json_key(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<int64_t>());
  return std::nullopt;
}

std::optional<int64_t> json_timestamp(const nlohmann::json& v) {
  if (v.is_number_integer()) return v.get<int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::isfinite(d) && d == std::floor(d)) return static_cast<int64_t>(d);
    return std::nullopt;
  }
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    try {
      size_t used = 0;
      const int64_t ts = std::stoll(s, &used);
      if (used == s.size()) return ts;
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

bool valid_event(const RawEvent& e) {
  return !e.user_key.empty() && !e.item_key.empty() && e.timestamp >= 0;
}

std::optional<RawEvent> parse_json_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (!j.is_object()) return std::nullopt;
  if (!j.contains("user") || !j.contains("item") || !j.contains("ts")) {
    return std::nullopt;
  }
  RawEvent e;
  auto user = json_key(j["user"]);
  auto item = json_key(j["item"]);
  auto ts = json_timestamp(j["ts"]);
  if (!user || !item || !ts) return std::nullopt;
  e.user_key = std::move(*user);
  e.item_key = std::move(*item);
  e.timestamp = *ts;
  if (j.contains("title")) {
    if (j["title"].is_string()) {
      e.title = j["title"].get<std::string>();
    } else if (!j["title"].is_null()) {
      return std::nullopt;
    }
  }
  if (j.contains("rating") && j["rating"].is_number()) {
    e.rating = j["rating"].get<double>();
  }
  if (!valid_event(e)) return std::nullopt;
  return e;
}

// RFC 4180 style field splitting; quoted fields may contain commas and
// doubled quotes but not line breaks.
std::optional<std::vector<std::string>> split_csv(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  bool at_start = true;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"' && at_start) {
      quoted = true;
      at_start = false;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
      at_start = true;
    } else if (c != '\r') {
      cur.push_back(c);
      at_start = false;
    }
  }
  if (quoted) return std::nullopt;
  fields.push_back(std::move(cur));
  return fields;
}

struct CsvColumns {
  int user = -1, item = -1, ts = -1, title = -1, rating = -1;
};

std::optional<CsvColumns> csv_header(std::string_view line) {
  auto fields = split_csv(line);
  if (!fields) return std::nullopt;
  CsvColumns cols;
  for (int i = 0; i < static_cast<int>(fields->size()); ++i) {
    const std::string name(trim((*fields)[i]));
    if (name == "user") cols.user = i;
    else if (name == "item") cols.item = i;
    else if (name == "ts" || name == "timestamp") cols.ts = i;
    else if (name == "title") cols.title = i;
    else if (name == "rating") cols.rating = i;
  }
  if (cols.user < 0 || cols.item < 0 || cols.ts < 0) return std::nullopt;
  return cols;
}

std::optional<RawEvent> parse_csv_line(std::string_view line,
                                       const CsvColumns& cols) {
  auto fields = split_csv(line);
  if (!fields) return std::nullopt;
  const int n = static_cast<int>(fields->size());
  const int needed = std::max({cols.user, cols.item, cols.ts, cols.title,
                               cols.rating});
  if (n <= needed) return std::nullopt;
  RawEvent e;
  e.user_key = std::string(trim((*fields)[cols.user]));
  e.item_key = std::string(trim((*fields)[cols.item]));
  try {
    size_t used = 0;
    const std::string ts(trim((*fields)[cols.ts]));
    e.timestamp = std::stoll(ts, &used);
    if (used != ts.size()) return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
  if (cols.title >= 0) e.title = (*fields)[cols.title];
  if (cols.rating >= 0) {
    const std::string r(trim((*fields)[cols.rating]));
    if (!r.empty()) {
      try {
        e.rating = std::stod(r);
      } catch (const std::exception&) {
        return std::nullopt;
      }
    }
  }
  if (!valid_event(e)) return std::nullopt;
  return e;
}

std::optional<RawEvent> parse_canonical_line(std::string_view line) {
  std::vector<std::string_view> parts;
  size_t start = 0;
  for (int i = 0; i < 3; ++i) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) return std::nullopt;
    parts.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  parts.push_back(line.substr(start));
  RawEvent e;
  e.user_key = std::string(parts[0]);
  e.item_key = std::string(parts[1]);
  try {
    size_t used = 0;
    const std::string ts(parts[2]);
    e.timestamp = std::stoll(ts, &used);
    if (used != ts.size()) return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
  e.title = std::string(parts[3]);
  if (!e.title.empty() && e.title.back() == '\r') e.title.pop_back();
  if (!valid_event(e)) return std::nullopt;
  return e;
}

InputFormat sniff(std::string_view first_line) {
  const auto t = trim(first_line);
  if (t.starts_with(kCanonicalMagic)) return InputFormat::kCanonical;
  if (t.starts_with("{")) return InputFormat::kJsonLines;
  return InputFormat::kCsv;
}

}  // namespace

InputFormat parse_input_format(const std::string& name) {
  if (name == "auto") return InputFormat::kAuto;
  if (name == "jsonl" || name == "json") return InputFormat::kJsonLines;
  if (name == "csv") return InputFormat::kCsv;
  if (name == "canonical") return InputFormat::kCanonical;
  throw ConfigError("unknown input format '" + name + "'");
}

KCoreMode parse_k_core_mode(const std::string& name) {
  if (name == "alternating") return KCoreMode::kAlternating;
  if (name == "user" || name == "user_only") return KCoreMode::kUserOnly;
  if (name == "item" || name == "item_only") return KCoreMode::kItemOnly;
  throw ConfigError("unknown k-core mode '" + name + "'");
}

ParseResult parse_interactions(std::istream& in, InputFormat format) {
  ParseResult result;
  std::string line;
  std::optional<CsvColumns> csv_cols;
  bool header_pending = true;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (header_pending) {
      header_pending = false;
      if (format == InputFormat::kAuto) format = sniff(line);
      if (format == InputFormat::kCsv) {
        csv_cols = csv_header(line);
        if (!csv_cols) {
          throw FormatError("CSV header must name user, item and ts columns");
        }
        continue;
      }
    }
    if (format == InputFormat::kCanonical && line.starts_with("#")) continue;
    std::optional<RawEvent> event;
    switch (format) {
      case InputFormat::kJsonLines:
        event = parse_json_line(line);
        break;
      case InputFormat::kCsv:
        event = parse_csv_line(line, *csv_cols);
        break;
      case InputFormat::kCanonical:
        // Header block lines have only two fields and are skipped here.
        if (std::count(line.begin(), line.end(), '\t') < 3) continue;
        if (line.starts_with("user\titem\t")) continue;
        event = parse_canonical_line(line);
        break;
      case InputFormat::kAuto:
        break;
    }
    if (event) {
      result.events.push_back(std::move(*event));
    } else {
      ++result.malformed;
      spdlog::debug("skipping malformed record on line {}", line_no);
    }
  }
  if (in.bad()) throw Error("failed while reading interaction stream");
  if (result.malformed > 0) {
    spdlog::warn("skipped {} malformed interaction record(s)", result.malformed);
  }
  return result;
}

ParseResult read_interactions(const std::filesystem::path& path,
                              InputFormat format) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open input '" + path.string() + "'");
  if (format == InputFormat::kAuto && path.extension() == ".csv") {
    format = InputFormat::kCsv;
  }
  return parse_interactions(in, format);
}

std::vector<RawEvent> apply_k_core(std::vector<RawEvent> events, int k_core,
                                   KCoreMode mode) {
  if (k_core < 1) throw ConfigError("k_core must be >= 1");
  const bool filter_users = mode != KCoreMode::kItemOnly;
  const bool filter_items = mode != KCoreMode::kUserOnly;
  while (true) {
    std::unordered_map<std::string, int> user_deg, item_deg;
    for (const auto& e : events) {
      ++user_deg[e.user_key];
      ++item_deg[e.item_key];
    }
    const auto before = events.size();
    std::erase_if(events, [&](const RawEvent& e) {
      return (filter_users && user_deg[e.user_key] < k_core) ||
             (filter_items && item_deg[e.item_key] < k_core);
    });
    if (events.size() == before) break;
    // One-sided filtering has no cascade.
    if (mode != KCoreMode::kAlternating) break;
  }
  return events;
}

double InteractionLog::average_length() const {
  if (sequences.empty()) return 0.0;
  return static_cast<double>(num_interactions) /
         static_cast<double>(sequences.size());
}

InteractionLog build_log(const std::vector<RawEvent>& events) {
  InteractionLog log;
  std::unordered_map<std::string, int> user_index;
  std::vector<std::vector<size_t>> per_user;
  std::unordered_map<std::string, std::string> latest_title;
  for (size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    auto [it, inserted] =
        user_index.try_emplace(e.user_key, static_cast<int>(log.user_keys.size()));
    if (inserted) {
      log.user_keys.push_back(e.user_key);
      per_user.emplace_back();
    }
    per_user[it->second].push_back(i);
    auto& title = latest_title[e.item_key];
    if (!e.title.empty() || title.empty()) title = e.title;
  }

  std::unordered_map<std::string, int> item_index;
  log.sequences.resize(per_user.size());
  log.timestamps.resize(per_user.size());
  for (size_t u = 0; u < per_user.size(); ++u) {
    auto& order = per_user[u];
    // Input order already ascending, so a stable sort breaks ties by it.
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return events[a].timestamp < events[b].timestamp;
    });
    for (size_t idx : order) {
      const auto& e = events[idx];
      auto [it, inserted] = item_index.try_emplace(
          e.item_key, static_cast<int>(log.item_keys.size()));
      if (inserted) {
        log.item_keys.push_back(e.item_key);
        log.titles.push_back(latest_title[e.item_key]);
      }
      log.sequences[u].push_back(it->second);
      log.timestamps[u].push_back(e.timestamp);
    }
  }
  log.num_interactions = events.size();
  return log;
}

std::span<const int> SplitSequences::train(size_t user) const {
  return std::span<const int>(truncated[user]).first(bounds[user].train_end);
}

std::span<const int> SplitSequences::valid(size_t user) const {
  const auto& b = bounds[user];
  return std::span<const int>(truncated[user])
      .subspan(b.train_end, b.valid_end - b.train_end);
}

std::span<const int> SplitSequences::test(size_t user) const {
  const auto& b = bounds[user];
  return std::span<const int>(truncated[user]).subspan(b.valid_end);
}

std::span<const int> SplitSequences::history(size_t user) const {
  return std::span<const int>(truncated[user]).first(bounds[user].valid_end);
}

SplitSequences split_chronological(const InteractionLog& log, int max_len,
                                   SplitRatios ratios) {
  if (max_len < 5) throw ConfigError("max_len must be >= 5");
  if (ratios.train < 0 || ratios.valid < 0 || ratios.train + ratios.valid > 1) {
    throw ConfigError("split ratios must be non-negative and sum to <= 1");
  }
  SplitSequences out;
  out.truncated.reserve(log.num_users());
  out.truncated_times.reserve(log.num_users());
  out.bounds.reserve(log.num_users());
  for (size_t u = 0; u < log.num_users(); ++u) {
    const auto& seq = log.sequences[u];
    const int full = static_cast<int>(seq.size());
    const int len = std::min(full, max_len);
    UserSplit b;
    b.offset = full - len;
    b.length = len;
    b.train_end = static_cast<int>(std::floor(ratios.train * len + 1e-9));
    b.valid_end =
        b.train_end + static_cast<int>(std::floor(ratios.valid * len + 1e-9));
    out.truncated.emplace_back(seq.begin() + b.offset, seq.end());
    out.truncated_times.emplace_back(log.timestamps[u].begin() + b.offset,
                                     log.timestamps[u].end());
    out.bounds.push_back(b);
  }
  return out;
}

InteractionLog training_view(const InteractionLog& log,
                             const SplitSequences& splits) {
  InteractionLog view;
  view.user_keys = log.user_keys;
  view.item_keys = log.item_keys;
  view.titles = log.titles;
  view.sequences.resize(log.num_users());
  view.timestamps.resize(log.num_users());
  for (size_t u = 0; u < log.num_users(); ++u) {
    const auto train = splits.train(u);
    view.sequences[u].assign(train.begin(), train.end());
    const auto& times = splits.truncated_times[u];
    view.timestamps[u].assign(times.begin(), times.begin() + train.size());
    view.num_interactions += train.size();
  }
  return view;
}

void write_canonical_log(std::ostream& out, const InteractionLog& log) {
  out << kCanonicalMagic << '\n';
  out << "users\t" << log.num_users() << '\n';
  out << "items\t" << log.num_items() << '\n';
  out << "interactions\t" << log.num_interactions << '\n';
  out << "user\titem\tts\ttitle\n";
  for (size_t u = 0; u < log.num_users(); ++u) {
    for (size_t p = 0; p < log.sequences[u].size(); ++p) {
      const int item = log.sequences[u][p];
      out << u << '\t' << item << '\t' << log.timestamps[u][p] << '\t'
          << sanitize_field(log.titles[item]) << '\n';
    }
  }
}

InteractionLog read_canonical_log(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kCanonicalMagic) {
    throw FormatError("not a canonical log");
  }
  size_t users = 0;
  size_t items = 0;
  size_t interactions = 0;
  for (auto [name, target] : {std::pair<const char*, size_t*>{"users", &users},
                              {"items", &items},
                              {"interactions", &interactions}}) {
    std::string key;
    if (!std::getline(in, line) || !(std::istringstream(line) >> key >> *target) ||
        key != name) {
      throw FormatError(std::string("canonical log: expected '") + name + "' line");
    }
  }
  std::getline(in, line);  // column header
  InteractionLog log;
  log.sequences.resize(users);
  log.timestamps.resize(users);
  log.titles.resize(items);
  std::vector<bool> seen(items, false);
  size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    const auto t3 = line.find('\t', t2 + 1);
    if (t3 == std::string::npos) throw FormatError("malformed canonical log line: " + line);
    size_t user = 0;
    size_t item = 0;
    int64_t ts = 0;
    try {
      user = std::stoul(line.substr(0, t1));
      item = std::stoul(line.substr(t1 + 1, t2 - t1 - 1));
      ts = std::stoll(line.substr(t2 + 1, t3 - t2 - 1));
    } catch (const std::exception&) {
      throw FormatError("malformed canonical log line: " + line);
    }
    if (user >= users || item >= items) {
      throw FormatError("canonical log id out of range: " + line);
    }
    log.sequences[user].push_back(static_cast<int>(item));
    log.timestamps[user].push_back(ts);
    log.titles[item] = line.substr(t3 + 1);
    seen[item] = true;
    ++rows;
  }
  if (rows != interactions) throw FormatError("canonical log interaction count mismatch");
  log.num_interactions = rows;
  for (size_t u = 0; u < users; ++u) log.user_keys.push_back(std::to_string(u));
  for (size_t i = 0; i < items; ++i) log.item_keys.push_back(std::to_string(i));
  return log;
}

void read_item_keys(std::istream& in, InteractionLog& log) {
  std::string line;
  std::getline(in, line);  // column header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    size_t item = 0;
    try {
      item = std::stoul(line.substr(0, tab));
    } catch (const std::exception&) {
      throw FormatError("malformed item key line: " + line);
    }
    if (tab == std::string::npos || item >= log.item_keys.size()) {
      throw FormatError("malformed item key line: " + line);
    }
    log.item_keys[item] = line.substr(tab + 1);
  }
}

void write_item_keys(std::ostream& out, const InteractionLog& log) {
  out << "item\tkey\n";
  for (size_t i = 0; i < log.num_items(); ++i) {
    out << i << '\t' << sanitize_field(log.item_keys[i]) << '\n';
  }
}

void write_split_manifest(std::ostream& out, const SplitSequences& splits) {
  out << kManifestMagic << '\n';
  out << "user\toffset\ttrain_end\tvalid_end\tlength\n";
  for (size_t u = 0; u < splits.num_users(); ++u) {
    const auto& b = splits.bounds[u];
    out << u << '\t' << b.offset << '\t' << b.train_end << '\t' << b.valid_end
        << '\t' << b.length << '\n';
  }
}

SplitSequences read_split_manifest(std::istream& in, const InteractionLog& log) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kManifestMagic) {
    throw FormatError("not a split manifest");
  }
  std::getline(in, line);  // column header
  SplitSequences out;
  size_t expected_user = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::istringstream fields(line);
    size_t user = 0;
    UserSplit b;
    if (!(fields >> user >> b.offset >> b.train_end >> b.valid_end >> b.length)) {
      throw FormatError("malformed split manifest line: " + line);
    }
    if (user != expected_user || user >= log.num_users()) {
      throw FormatError("split manifest does not match the log");
    }
    const auto& seq = log.sequences[user];
    if (b.offset < 0 || b.offset + b.length != static_cast<int>(seq.size()) ||
        b.train_end < 0 || b.train_end > b.valid_end || b.valid_end > b.length) {
      throw FormatError("split manifest bounds invalid for user " +
                        std::to_string(user));
    }
    out.truncated.emplace_back(seq.begin() + b.offset, seq.end());
    out.truncated_times.emplace_back(log.timestamps[user].begin() + b.offset,
                                     log.timestamps[user].end());
    out.bounds.push_back(b);
    ++expected_user;
  }
  if (expected_user != log.num_users()) {
    throw FormatError("split manifest does not cover every user");
  }
  return out;
}

}  // namespace dualrec
