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


#include "dualrec/planted.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <ostream>
#include <numeric>
#include <random>
#include <string>

#include <json.hpp>

#include "dualrec/common.hpp"

namespace dualrec {
namespace {

constexpr const char* kNouns[] = {
    "Shampoo", "Puzzle",  "Guitar", "Kettle", "Lantern", "Sneaker",
    "Easel",   "Compass", "Teapot", "Backpack", "Telescope", "Harmonica",
};

constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                                   "p", "r", "s", "t", "v", "z"};
constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};

// Distinct pronounceable word per index (bijective base-70 syllables).
std::string pseudo_word(int index) {
  constexpr int kOnsetCount = std::size(kOnsets);
  constexpr int kVowelCount = std::size(kVowels);
  constexpr int kSyllables = kOnsetCount * kVowelCount;
  std::string word;
  int n = index;
  for (int i = 0; i < 2 || n > 0; ++i) {
    const int s = n % kSyllables;
    n /= kSyllables;
    word += kOnsets[s / kVowelCount];
    word += kVowels[s % kVowelCount];
  }
  word += "x";
  word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
  return word;
}

}  // namespace

void PlantedConfig::validate() const {
  if (num_topics < 1) throw ConfigError("num_topics must be >= 1");
  if (num_items < num_topics) throw ConfigError("need at least one item per topic");
  if (topics_per_user < 1 || topics_per_user > num_topics) {
    throw ConfigError("topics_per_user must be in [1, num_topics]");
  }
  if (min_length < 1 || max_length < min_length) {
    throw ConfigError("invalid sequence length range");
  }
  if (max_length > (num_items / num_topics) * topics_per_user) {
    throw ConfigError("sequences longer than the items of a user's topics");
  }
  if (!(window > 0.0)) throw ConfigError("window must be > 0");
}

std::string planted_topic_noun(int topic) {
  const int n = static_cast<int>(std::size(kNouns));
  std::string noun = kNouns[topic % n];
  if (topic >= n) noun += std::to_string(topic / n);
  return noun;
}

PlantedData generate_planted(const PlantedConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  PlantedData out;
  const int per_topic = config.num_items / config.num_topics;
  auto topic_begin = [&](int t) { return t * per_topic; };
  auto topic_size = [&](int t) {
    return t == config.num_topics - 1 ? config.num_items - t * per_topic : per_topic;
  };
  out.item_topic.resize(config.num_items);
  for (int t = 0; t < config.num_topics; ++t) {
    for (int i = 0; i < topic_size(t); ++i) out.item_topic[topic_begin(t) + i] = t;
  }
  auto title_of = [&](int item) {
    return planted_topic_noun(out.item_topic[item]) + " " + pseudo_word(item);
  };

  std::vector<int> topics(config.num_topics);
  std::iota(topics.begin(), topics.end(), 0);
  const int64_t base_ts = 1'600'000'000;
  for (int u = 0; u < config.num_users; ++u) {
    std::shuffle(topics.begin(), topics.end(), rng);
    std::vector<int> mine(topics.begin(), topics.begin() + config.topics_per_user);
    std::sort(mine.begin(), mine.end());
    std::vector<double> center(mine.size());
    for (size_t k = 0; k < mine.size(); ++k) {
      std::uniform_real_distribution<double> c(0.0, topic_size(mine[k]));
      center[k] = c(rng);
    }
    std::uniform_int_distribution<int> len_dist(config.min_length, config.max_length);
    const int length = len_dist(rng);
    std::vector<bool> used(config.num_items, false);
    std::uniform_int_distribution<size_t> pick_topic(0, mine.size() - 1);
    int64_t ts = base_ts + static_cast<int64_t>(u) * 100'000;
    for (int p = 0; p < length; ++p) {
      size_t k = pick_topic(rng);
      const int t = mine[k];
      const int size = topic_size(t);
      if (std::count(used.begin() + topic_begin(t), used.begin() + topic_begin(t) + size,
                     true) == size) {
        k = (k + 1) % mine.size();
      }
      const int tt = mine[k];
      const int sz = topic_size(tt);
      std::normal_distribution<double> offset(0.0, std::max(0.5, config.window * sz));
      int local = -1;
      for (int attempt = 0; attempt < 64 && local < 0; ++attempt) {
        int cand = static_cast<int>(std::floor(center[k] + offset(rng)));
        cand = ((cand % sz) + sz) % sz;
        if (!used[topic_begin(tt) + cand]) local = cand;
      }
      if (local < 0) {
        // Nearest unused item to the center, wrapping inside the topic.
        int best = -1;
        double best_d = 1e18;
        for (int i = 0; i < sz; ++i) {
          if (used[topic_begin(tt) + i]) continue;
          double d = std::abs(i + 0.5 - center[k]);
          d = std::min(d, sz - d);
          if (d < best_d) {
            best_d = d;
            best = i;
          }
        }
        local = best;
      }
      const int item = topic_begin(tt) + local;
      used[item] = true;
      // Interests drift slowly.
      center[k] = std::fmod(center[k] + 0.5 + sz, static_cast<double>(sz));
      ts += 60 + static_cast<int64_t>(rng() % 600);
      RawEvent e;
      e.user_key = "u" + std::to_string(u);
      e.item_key = "i" + std::to_string(item);
      e.timestamp = ts;
      e.title = title_of(item);
      out.events.push_back(std::move(e));
    }
    out.user_topics.push_back(std::move(mine));
  }
  return out;
}

void write_events_jsonl(std::ostream& out, const std::vector<RawEvent>& events) {
  for (const auto& e : events) {
    nlohmann::ordered_json j;
    j["user"] = e.user_key;
    j["item"] = e.item_key;
    j["ts"] = e.timestamp;
    j["title"] = e.title;
    if (e.rating) j["rating"] = *e.rating;
    out << j.dump() << '\n';
  }
}

}  // namespace dualrec
