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


// Semantic interest clusters for a titled behavior list: prompt
// construction, the chat-completions client with an on-disk response cache,
// response parsing, and a deterministic offline clusterer.

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dualrec/common.hpp"

namespace dualrec {

struct PromptText {
  std::string system_text;
  std::string user_text;
};

// Numbers the titles 1..n in sequence order and asks for a JSON object
// mapping cluster label to item numbers. Blank titles become
// "item <position>". Throws ConfigError when `titles` is empty.
PromptText build_prompt(std::span<const std::string> titles);

// Rough token estimate: whitespace-separated words times 1.5.
size_t estimate_tokens(const PromptText& prompt);

struct InterestCluster {
  std::string label;
  std::vector<int> members;  // sorted positions into the owner's list

  bool operator==(const InterestCluster&) const = default;
};

enum class ClusterSource { kLlm, kMock, kFallback };

std::string_view to_string(ClusterSource source);

// Clusters over one owner's behavior list. `items` holds the item index at
// each position. Positions may appear in several clusters.
struct SemanticClustering {
  int owner = 0;
  std::vector<int> items;
  std::vector<InterestCluster> clusters;
  std::vector<int> unassigned;
  ClusterSource source = ClusterSource::kLlm;
  int dropped_references = 0;

  size_t num_clusters() const { return clusters.size(); }
  bool operator==(const SemanticClustering&) const = default;
};

// Extracts the first JSON object in `raw` whose values are lists of item
// numbers. Out-of-range numbers are dropped, empty clusters removed. If no
// usable block exists, returns a single cluster over every position with
// source kFallback. Never throws for any input.
SemanticClustering parse_clusters(std::string_view raw, int n_items);

// Offline stand-in for the LLM: positions whose titles share a content
// token are linked, clusters are the connected components, and each label
// is the component's most frequent token.
SemanticClustering mock_cluster(std::span<const std::string> titles);

void write_clustering(std::ostream& out, const SemanticClustering& c);
// One record per line, owners in ascending order.
void write_clusterings(std::ostream& out, std::span<const SemanticClustering> all);
std::vector<SemanticClustering> read_clusterings(std::istream& in);

// Content-addressed store of raw LLM responses: one file per key, named by
// the hex SHA-256 key. Writes go to a temporary file and are renamed into
// place, so concurrent readers see either nothing or the full response.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  static std::string key_for(std::string_view model, double temperature,
                             const PromptText& prompt);

  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, std::string_view raw) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

std::string sha256_hex(std::string_view data);

struct LlmClientConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4o";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  bool offline = false;
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds max_backoff{16000};
  std::chrono::seconds timeout{120};
};

class LlmError : public Error {
 public:
  LlmError(const std::string& what, int status = 0)
      : Error(what), status_(status) {}
  // HTTP status of the last attempt, 0 for transport failures.
  int status() const { return status_; }

 private:
  int status_;
};

// Caps the number of network calls across a batch of requests.
class CallBudget {
 public:
  // limit <= 0 means unlimited.
  explicit CallBudget(int64_t limit) : limit_(limit) {}
  bool try_acquire();
  int64_t used() const { return used_.load(); }

 private:
  int64_t limit_;
  std::atomic<int64_t> used_{0};
};

class ChatClient {
 public:
  // Reads the credential eagerly; throws ConfigError if it is missing and
  // the client is not offline.
  ChatClient(LlmClientConfig config, ResponseCache cache);

  // Returns the assistant message text for `prompt`, from the cache when
  // possible. Cache misses call the endpoint with exponential backoff on
  // transport errors, 429 and 5xx responses. With a budget, a miss that
  // cannot acquire a call returns nullopt without touching the network.
  std::optional<std::string> request(const PromptText& prompt,
                                     CallBudget* budget = nullptr);

  // Same as request() without a budget; never returns nullopt.
  std::string request_clusters(const PromptText& prompt);

  int64_t network_calls() const { return network_calls_.load(); }
  int64_t cache_hits() const { return cache_hits_.load(); }
  int64_t http_attempts() const { return http_attempts_.load(); }
  const LlmClientConfig& config() const { return config_; }

 private:
  std::string call_endpoint(const PromptText& prompt);

  LlmClientConfig config_;
  ResponseCache cache_;
  std::string api_key_;
  std::atomic<int64_t> network_calls_{0};
  std::atomic<int64_t> cache_hits_{0};
  std::atomic<int64_t> http_attempts_{0};
};

}  // namespace dualrec
