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


// Interaction ingest: parsing raw records, k-core filtering, dense indexing
// and the per-user chronological train/validation/test split.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dualrec {

struct RawEvent {
  std::string user_key;
  std::string item_key;
  int64_t timestamp = 0;
  std::string title;
  std::optional<double> rating;

  bool operator==(const RawEvent&) const = default;
};

enum class InputFormat { kAuto, kJsonLines, kCsv, kCanonical };

struct ParseResult {
  std::vector<RawEvent> events;
  size_t malformed = 0;
};

// Reads line-delimited JSON records ({"user","item","ts","title"[,"rating"]}),
// a CSV file with a header naming those five columns, or a canonical log
// previously written by write_canonical_log. kAuto sniffs the first
// non-empty line. Malformed records are skipped and counted.
ParseResult parse_interactions(std::istream& in,
                               InputFormat format = InputFormat::kAuto);
ParseResult read_interactions(const std::filesystem::path& path,
                              InputFormat format = InputFormat::kAuto);

InputFormat parse_input_format(const std::string& name);

enum class KCoreMode { kAlternating, kUserOnly, kItemOnly };

KCoreMode parse_k_core_mode(const std::string& name);

// Removes users and items with fewer than `k_core` events until no more
// removals happen. Surviving events keep their input order.
std::vector<RawEvent> apply_k_core(std::vector<RawEvent> events, int k_core,
                                   KCoreMode mode = KCoreMode::kAlternating);

// Dense, timestamp-ordered view of a filtered event list.
//
// Users are numbered by first appearance in the input. Items are numbered by
// first appearance when walking users in index order and each user's
// sequence chronologically; this makes re-ingesting the canonical log a
// fixed point.
struct InteractionLog {
  std::vector<std::string> user_keys;
  std::vector<std::string> item_keys;
  std::vector<std::string> titles;
  std::vector<std::vector<int>> sequences;
  std::vector<std::vector<int64_t>> timestamps;
  size_t num_interactions = 0;

  size_t num_users() const { return user_keys.size(); }
  size_t num_items() const { return item_keys.size(); }
  double average_length() const;
};

InteractionLog build_log(const std::vector<RawEvent>& events);

// Slice boundaries into one user's truncated sequence. `offset` is the
// number of older events dropped by truncation.
struct UserSplit {
  int offset = 0;
  int train_end = 0;
  int valid_end = 0;
  int length = 0;

  int train_size() const { return train_end; }
  int valid_size() const { return valid_end - train_end; }
  int test_size() const { return length - valid_end; }

  bool operator==(const UserSplit&) const = default;
};

struct SplitRatios {
  double train = 0.6;
  double valid = 0.2;
};

struct SplitSequences {
  std::vector<std::vector<int>> truncated;
  std::vector<std::vector<int64_t>> truncated_times;
  std::vector<UserSplit> bounds;

  size_t num_users() const { return bounds.size(); }
  std::span<const int> train(size_t user) const;
  std::span<const int> valid(size_t user) const;
  std::span<const int> test(size_t user) const;
  // Train and validation slices together: the history seen at test time.
  std::span<const int> history(size_t user) const;
};

// Keeps each user's most recent `max_len` events, then gives the first
// floor(train*len) to training, the next floor(valid*len) to validation and
// the remainder to test.
SplitSequences split_chronological(const InteractionLog& log, int max_len = 20,
                                   SplitRatios ratios = {});

// Restricts every user's sequence to its training slice. Synthesis and
// popularity statistics are computed on this view so that nothing from the
// held-out slices leaks into training signals.
InteractionLog training_view(const InteractionLog& log,
                             const SplitSequences& splits);

void write_canonical_log(std::ostream& out, const InteractionLog& log);
void write_item_keys(std::ostream& out, const InteractionLog& log);
// User keys become the dense ids; item keys can be restored with read_item_keys.
InteractionLog read_canonical_log(std::istream& in);
void read_item_keys(std::istream& in, InteractionLog& log);
void write_split_manifest(std::ostream& out, const SplitSequences& splits);

// Rebuilds splits from a manifest; sequences come from `log`.
SplitSequences read_split_manifest(std::istream& in, const InteractionLog& log);

}  // namespace dualrec
