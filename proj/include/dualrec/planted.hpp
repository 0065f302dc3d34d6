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


// Synthetic interaction logs with planted topics. Items are split into
// contiguous topic blocks; each user follows a few topics and, inside each,
// drifts around a personal center. Titles carry the topic noun so that
// title-based clustering recovers the topics.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "dualrec/data.hpp"

namespace dualrec {

struct PlantedConfig {
  int num_users = 500;
  int num_items = 200;
  int num_topics = 4;
  int topics_per_user = 2;
  int min_length = 14;
  int max_length = 24;
  // Width of the per-user window inside a topic, as a fraction of topic size.
  double window = 0.125;
  uint64_t seed = 7;

  void validate() const;
};

struct PlantedData {
  std::vector<RawEvent> events;
  std::vector<int> item_topic;               // by generated item index
  std::vector<std::vector<int>> user_topics;
};

PlantedData generate_planted(const PlantedConfig& config);

// Topic noun used in titles of topic t.
std::string planted_topic_noun(int topic);

void write_events_jsonl(std::ostream& out, const std::vector<RawEvent>& events);

}  // namespace dualrec
