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


#include "dualrec/llm_interest.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

namespace dualrec {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::string_view kSystemPrompt =
    "You are an expert analyst of user preferences for a recommender system. "
    "You read the items a user engaged with and identify the distinct "
    "interests behind them.";

std::string normalize_title(std::string_view title, size_t position) {
  std::string out;
  bool pending_space = false;
  for (char c : title) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  if (out.empty()) out = "item " + std::to_string(position);
  return out;
}

const std::unordered_set<std::string>& stop_words() {
  static const std::unordered_set<std::string> words = {
      "a",    "an",   "and",  "are",  "as",   "at",   "be",  "by",   "for",
      "from", "in",   "into", "is",   "it",   "its",  "of",  "on",   "or",
      "the",  "to",   "with", "without", "your", "you", "our", "this", "that",
      "new",  "pack", "pcs",  "oz",   "ml",   "inch", "x"};
  return words;
}

std::vector<std::string> content_tokens(std::string_view title) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && !stop_words().contains(cur)) tokens.push_back(cur);
    cur.clear();
  };
  for (char c : title) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc) || uc >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

class DisjointSets {
 public:
  explicit DisjointSets(size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), size_t{0});
  }
  size_t find(size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(size_t a, size_t b) {
    a = find(a);
    b = find(b);
    // Smaller root wins so component roots are their minimum position.
    if (a < b) parent_[b] = a;
    else if (b < a) parent_[a] = b;
  }

 private:
  std::vector<size_t> parent_;
};

// Position of the '}' matching the '{' at `open`, respecting JSON strings.
std::optional<size_t> matching_brace(std::string_view s, size_t open) {
  int depth = 0;
  bool in_string = false;
  for (size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i;
  }
  return std::nullopt;
}

std::optional<int64_t> item_number(const ordered_json& v) {
  if (v.is_number_integer()) return v.get<int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == std::floor(d) && std::abs(d) < 1e15) return static_cast<int64_t>(d);
    return std::nullopt;
  }
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s.empty() || s.size() > 15) return std::nullopt;
    int64_t value = 0;
    for (char c : s) {
      if (c < '0' || c > '9') return std::nullopt;
      value = value * 10 + (c - '0');
    }
    return value;
  }
  return std::nullopt;
}

struct LabeledRefs {
  std::string label;
  const ordered_json* refs;
};

// Accepts {"label": [1, 2], ...} or {"clusters": [{"label": .., "items": [..]}]}.
std::vector<LabeledRefs> cluster_entries(const ordered_json& obj) {
  std::vector<LabeledRefs> entries;
  if (obj.contains("clusters") && obj["clusters"].is_array()) {
    for (const auto& c : obj["clusters"]) {
      if (!c.is_object()) continue;
      std::string label;
      for (const char* key : {"label", "name", "interest"}) {
        if (c.contains(key) && c[key].is_string()) {
          label = c[key].get<std::string>();
          break;
        }
      }
      for (const char* key : {"items", "members", "item_numbers"}) {
        if (c.contains(key) && c[key].is_array()) {
          entries.push_back({label, &c[key]});
          break;
        }
      }
    }
    return entries;
  }
  for (const auto& [key, value] : obj.items()) {
    if (value.is_array()) entries.push_back({key, &value});
  }
  return entries;
}

SemanticClustering fallback_clustering(int n_items) {
  SemanticClustering c;
  c.source = ClusterSource::kFallback;
  InterestCluster all{"all", {}};
  all.members.resize(static_cast<size_t>(std::max(n_items, 0)));
  std::iota(all.members.begin(), all.members.end(), 0);
  if (!all.members.empty()) c.clusters.push_back(std::move(all));
  return c;
}

void fill_unassigned(SemanticClustering& c, int n_items) {
  std::vector<char> seen(static_cast<size_t>(n_items), 0);
  for (const auto& cl : c.clusters) {
    for (int m : cl.members) seen[m] = 1;
  }
  c.unassigned.clear();
  for (int p = 0; p < n_items; ++p) {
    if (!seen[p]) c.unassigned.push_back(p);
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct EndpointUrl {
  std::string scheme_host_port;
  std::string path_prefix;
};

EndpointUrl split_base_url(const std::string& base) {
  const auto scheme_end = base.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("LLM base_url must include a scheme: " + base);
  }
  const auto path_start = base.find('/', scheme_end + 3);
  EndpointUrl url;
  if (path_start == std::string::npos) {
    url.scheme_host_port = base;
  } else {
    url.scheme_host_port = base.substr(0, path_start);
    url.path_prefix = base.substr(path_start);
  }
  while (!url.path_prefix.empty() && url.path_prefix.back() == '/') {
    url.path_prefix.pop_back();
  }
  return url;
}

bool is_retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

std::string_view to_string(ClusterSource source) {
  switch (source) {
    case ClusterSource::kLlm:
      return "llm";
    case ClusterSource::kMock:
      return "mock";
    case ClusterSource::kFallback:
      return "fallback";
  }
  return "llm";
}

PromptText build_prompt(std::span<const std::string> titles) {
  if (titles.empty()) throw ConfigError("nothing to analyze");
  std::ostringstream user;
  user << "Here are the items a user engaged with, in chronological order:\n";
  for (size_t i = 0; i < titles.size(); ++i) {
    user << (i + 1) << ". " << normalize_title(titles[i], i + 1) << '\n';
  }
  user << "\nAnalyze the user's interests and group the numbered items into "
          "distinct interest clusters. Each cluster should reflect a different "
          "interest of the user and contain items that share characteristics "
          "such as functionality, style or purpose. Decide the number of "
          "clusters from the items themselves. An item may belong to more "
          "than one cluster when it serves several interests.\n\n"
          "Return only a JSON object that maps a short interest label to the "
          "list of item numbers in that cluster, for example:\n"
          "{\"Hair Care\": [1, 3], \"Board Games\": [2]}\n"
          "Use only item numbers from 1 to "
       << titles.size() << ". Do not add any other text.\n";
  return PromptText{std::string(kSystemPrompt), user.str()};
}

size_t estimate_tokens(const PromptText& prompt) {
  size_t words = 0;
  for (const std::string* text : {&prompt.system_text, &prompt.user_text}) {
    std::istringstream in(*text);
    std::string w;
    while (in >> w) ++words;
  }
  return static_cast<size_t>(std::ceil(static_cast<double>(words) * 1.5));
}

SemanticClustering parse_clusters(std::string_view raw, int n_items) {
  if (n_items < 1) return fallback_clustering(0);
  constexpr int kMaxCandidates = 64;
  int candidates = 0;
  for (size_t open = raw.find('{'); open != std::string_view::npos &&
                                    candidates < kMaxCandidates;
       open = raw.find('{', open + 1)) {
    ++candidates;
    const auto close = matching_brace(raw, open);
    if (!close) break;
    const auto parsed = ordered_json::parse(raw.substr(open, *close - open + 1),
                                            nullptr, /*allow_exceptions=*/false);
    if (!parsed.is_object()) continue;
    const auto entries = cluster_entries(parsed);
    if (entries.empty()) continue;

    SemanticClustering result;
    result.source = ClusterSource::kLlm;
    for (const auto& entry : entries) {
      std::set<int> members;
      for (const auto& ref : *entry.refs) {
        const auto number = item_number(ref);
        if (!number || *number < 1 || *number > n_items) {
          ++result.dropped_references;
          continue;
        }
        members.insert(static_cast<int>(*number - 1));
      }
      if (members.empty()) continue;
      result.clusters.push_back(
          {entry.label, std::vector<int>(members.begin(), members.end())});
    }
    if (result.dropped_references > 0) {
      spdlog::warn("dropped {} out-of-range item reference(s) from LLM output",
                   result.dropped_references);
    }
    if (result.clusters.empty()) {
      auto fallback = fallback_clustering(n_items);
      fallback.dropped_references = result.dropped_references;
      return fallback;
    }
    fill_unassigned(result, n_items);
    return result;
  }
  return fallback_clustering(n_items);
}

SemanticClustering mock_cluster(std::span<const std::string> titles) {
  if (titles.empty()) throw ConfigError("nothing to analyze");
  const size_t n = titles.size();
  std::vector<std::vector<std::string>> tokens(n);
  DisjointSets sets(n);
  std::unordered_map<std::string, size_t> first_seen;
  for (size_t p = 0; p < n; ++p) {
    tokens[p] = content_tokens(titles[p]);
    for (const auto& tok : tokens[p]) {
      auto [it, inserted] = first_seen.try_emplace(tok, p);
      if (!inserted) sets.unite(it->second, p);
    }
  }

  std::map<size_t, std::vector<int>> components;
  for (size_t p = 0; p < n; ++p) {
    components[sets.find(p)].push_back(static_cast<int>(p));
  }

  SemanticClustering result;
  result.source = ClusterSource::kMock;
  for (const auto& [root, members] : components) {
    // Count each token once per title; ties go to the earliest occurrence.
    std::vector<std::string> order;
    std::unordered_map<std::string, int> freq;
    for (int p : members) {
      std::unordered_set<std::string> in_title;
      for (const auto& tok : tokens[p]) {
        if (!in_title.insert(tok).second) continue;
        if (freq[tok]++ == 0) order.push_back(tok);
      }
    }
    std::string label = "misc";
    int best = 0;
    for (const auto& tok : order) {
      if (freq[tok] > best) {
        best = freq[tok];
        label = tok;
      }
    }
    result.clusters.push_back({label, members});
  }
  return result;
}

void write_clustering(std::ostream& out, const SemanticClustering& c) {
  ordered_json j;
  j["owner"] = c.owner;
  j["items"] = c.items;
  auto clusters = ordered_json::array();
  for (const auto& cl : c.clusters) {
    ordered_json e;
    e["label"] = cl.label;
    e["members"] = cl.members;
    clusters.push_back(std::move(e));
  }
  j["clusters"] = std::move(clusters);
  j["unassigned"] = c.unassigned;
  j["source"] = std::string(to_string(c.source));
  j["dropped"] = c.dropped_references;
  out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace)
      << '\n';
}

void write_clusterings(std::ostream& out,
                       std::span<const SemanticClustering> all) {
  std::vector<const SemanticClustering*> sorted;
  for (const auto& c : all) sorted.push_back(&c);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](auto* a, auto* b) { return a->owner < b->owner; });
  for (const auto* c : sorted) write_clustering(out, *c);
}

std::vector<SemanticClustering> read_clusterings(std::istream& in) {
  std::vector<SemanticClustering> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = ordered_json::parse(line);
      SemanticClustering c;
      c.owner = j.at("owner").get<int>();
      c.items = j.at("items").get<std::vector<int>>();
      for (const auto& e : j.at("clusters")) {
        InterestCluster cl;
        cl.label = e.at("label").get<std::string>();
        cl.members = e.at("members").get<std::vector<int>>();
        for (int m : cl.members) {
          if (m < 0 || m >= static_cast<int>(c.items.size())) {
            throw FormatError("member position out of range");
          }
        }
        c.clusters.push_back(std::move(cl));
      }
      c.unassigned = j.at("unassigned").get<std::vector<int>>();
      const auto source = j.at("source").get<std::string>();
      if (source == "mock") c.source = ClusterSource::kMock;
      else if (source == "fallback") c.source = ClusterSource::kFallback;
      else c.source = ClusterSource::kLlm;
      c.dropped_references = j.value("dropped", 0);
      out.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("clustering record " + std::to_string(line_no) + ": " +
                        e.what());
    } catch (const FormatError& e) {
      throw FormatError("clustering record " + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
  return out;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xf]);
  }
  return hex;
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::string ResponseCache::key_for(std::string_view model, double temperature,
                                   const PromptText& prompt) {
  std::string material;
  material.append(model).push_back('\0');
  material.append(format_double(temperature)).push_back('\0');
  material.append(prompt.system_text).push_back('\0');
  material.append(prompt.user_text);
  return sha256_hex(material);
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
  std::ifstream in(dir_ / key, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void ResponseCache::put(const std::string& key, std::string_view raw) const {
  std::filesystem::create_directories(dir_);
  std::ostringstream tmp_name;
  tmp_name << key << ".tmp." << std::this_thread::get_id();
  const auto tmp = dir_ / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write cache file " + tmp.string());
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!out) throw Error("cannot write cache file " + tmp.string());
  }
  std::filesystem::rename(tmp, dir_ / key);
}

bool CallBudget::try_acquire() {
  if (limit_ <= 0) {
    used_.fetch_add(1);
    return true;
  }
  int64_t cur = used_.load();
  while (cur < limit_) {
    if (used_.compare_exchange_weak(cur, cur + 1)) return true;
  }
  return false;
}

ChatClient::ChatClient(LlmClientConfig config, ResponseCache cache)
    : config_(std::move(config)), cache_(std::move(cache)) {
  if (config_.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  if (!config_.offline) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw ConfigError("LLM credential missing: set environment variable " +
                        config_.api_key_env);
    }
    api_key_ = key;
    split_base_url(config_.base_url);  // validates early
  }
}

std::optional<std::string> ChatClient::request(const PromptText& prompt,
                                               CallBudget* budget) {
  const auto key =
      ResponseCache::key_for(config_.model, config_.temperature, prompt);
  if (auto hit = cache_.get(key)) {
    cache_hits_.fetch_add(1);
    return hit;
  }
  if (config_.offline) throw LlmError("cache miss in offline mode");
  if (budget != nullptr && !budget->try_acquire()) return std::nullopt;
  network_calls_.fetch_add(1);
  std::string raw = call_endpoint(prompt);
  cache_.put(key, raw);
  return raw;
}

std::string ChatClient::request_clusters(const PromptText& prompt) {
  return *request(prompt, nullptr);
}

std::string ChatClient::call_endpoint(const PromptText& prompt) {
  const auto url = split_base_url(config_.base_url);
  httplib::Client client(url.scheme_host_port);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  const httplib::Headers headers = {
      {"Authorization", "Bearer " + api_key_}};

  ordered_json body;
  body["model"] = config_.model;
  body["temperature"] = config_.temperature;
  body["messages"] = ordered_json::array(
      {ordered_json{{"role", "system"}, {"content", prompt.system_text}},
       ordered_json{{"role", "user"}, {"content", prompt.user_text}}});
  const std::string payload = body.dump();
  const std::string path = url.path_prefix + "/chat/completions";

  int last_status = 0;
  std::string last_error;
  auto delay = config_.initial_backoff;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    http_attempts_.fetch_add(1);
    auto res = client.Post(path, headers, payload, "application/json");
    if (res && res->status == 200) {
      const auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded() || !j.contains("choices") || j["choices"].empty() ||
          !j["choices"][0].contains("message") ||
          !j["choices"][0]["message"].contains("content") ||
          !j["choices"][0]["message"]["content"].is_string()) {
        throw LlmError("unexpected chat-completions response body", 200);
      }
      return j["choices"][0]["message"]["content"].get<std::string>();
    }
    if (res) {
      last_status = res->status;
      last_error = "HTTP " + std::to_string(res->status);
      if (!is_retryable_status(res->status)) {
        throw LlmError("LLM request failed with " + last_error, last_status);
      }
    } else {
      last_status = 0;
      last_error = httplib::to_string(res.error());
    }
    if (attempt == config_.max_attempts) break;
    spdlog::warn("LLM request attempt {}/{} failed ({}), retrying in {} ms",
                 attempt, config_.max_attempts, last_error, delay.count());
    std::this_thread::sleep_for(delay);
    delay = std::min(delay * 2, config_.max_backoff);
  }
  throw LlmError("LLM request failed after " +
                     std::to_string(config_.max_attempts) +
                     " attempts, last error: " + last_error,
                 last_status);
}

}  // namespace dualrec
