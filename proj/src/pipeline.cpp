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


#include "dualrec/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dualrec/common.hpp"
#include "dualrec/model.hpp"

namespace dualrec {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------- config

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown config key '" + where + "." + key + "'");
    }
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& target, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void read_train_section(const json& j, TrainConfig& t) {
  check_keys(j,
             {"lr", "weight_decay", "batch_size", "epochs", "lambda", "tau",
              "num_interests", "dim", "routing_iters", "negatives", "seed",
              "ablation", "patience", "max_iterations", "routing_grad", "cst_batch"},
             "train");
  read_opt(j, "lr", t.lr, "train");
  read_opt(j, "weight_decay", t.weight_decay, "train");
  read_opt(j, "batch_size", t.batch_size, "train");
  read_opt(j, "epochs", t.epochs, "train");
  read_opt(j, "lambda", t.lambda, "train");
  read_opt(j, "tau", t.tau, "train");
  read_opt(j, "num_interests", t.num_interests, "train");
  read_opt(j, "dim", t.dim, "train");
  read_opt(j, "routing_iters", t.routing_iters, "train");
  read_opt(j, "negatives", t.negatives, "train");
  read_opt(j, "seed", t.seed, "train");
  read_opt(j, "patience", t.patience, "train");
  read_opt(j, "max_iterations", t.max_iterations, "train");
  read_opt(j, "routing_grad", t.routing_grad, "train");
  read_opt(j, "cst_batch", t.cst_batch, "train");
  std::string ablation;
  read_opt(j, "ablation", ablation, "train");
  if (!ablation.empty()) t.ablation = AblationFlags::parse(ablation);
}

void read_llm_section(const json& j, const fs::path& base, LlmStageConfig& l) {
  check_keys(j,
             {"mode", "base_url", "model", "api_key_env", "temperature", "offline",
              "cache_dir", "concurrency", "call_budget", "max_prompt_tokens",
              "max_attempts", "timeout_s"},
             "llm");
  std::string mode = "llm";
  read_opt(j, "mode", mode, "llm");
  if (mode == "llm") {
    l.mode = ClusterMode::kLlm;
  } else if (mode == "mock") {
    l.mode = ClusterMode::kMock;
  } else {
    throw ConfigError("llm.mode must be 'llm' or 'mock'");
  }
  read_opt(j, "base_url", l.client.base_url, "llm");
  read_opt(j, "model", l.client.model, "llm");
  read_opt(j, "api_key_env", l.client.api_key_env, "llm");
  read_opt(j, "temperature", l.client.temperature, "llm");
  read_opt(j, "offline", l.client.offline, "llm");
  read_opt(j, "max_attempts", l.client.max_attempts, "llm");
  int timeout = static_cast<int>(l.client.timeout.count());
  read_opt(j, "timeout_s", timeout, "llm");
  l.client.timeout = std::chrono::seconds(timeout);
  std::string cache = l.cache_dir.string();
  read_opt(j, "cache_dir", cache, "llm");
  l.cache_dir = resolve(base, cache);
  read_opt(j, "concurrency", l.concurrency, "llm");
  read_opt(j, "call_budget", l.call_budget, "llm");
  read_opt(j, "max_prompt_tokens", l.max_prompt_tokens, "llm");
  if (l.concurrency < 1) throw ConfigError("llm.concurrency must be >= 1");
  if (l.client.max_attempts < 1) throw ConfigError("llm.max_attempts must be >= 1");
}

// ------------------------------------------------------------------ files

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

template <typename Fn>
void write_with(const fs::path& path, Fn&& fn) {
  std::ostringstream out;
  fn(out);
  write_file(path, out.str());
}

void require(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) {
    throw MissingArtifactError(stage, "missing " + path.string() + "; run `dualrec " +
                                          stage + "` first");
  }
}

struct Dataset {
  InteractionLog log;
  SplitSequences splits;
};

Dataset load_dataset(const Paths& paths) {
  require(paths.log(), "ingest");
  require(paths.splits(), "ingest");
  Dataset d;
  {
    std::ifstream in(paths.log());
    d.log = read_canonical_log(in);
  }
  if (fs::exists(paths.item_keys())) {
    std::ifstream in(paths.item_keys());
    read_item_keys(in, d.log);
  }
  std::ifstream in(paths.splits());
  d.splits = read_split_manifest(in, d.log);
  return d;
}

std::vector<SemanticClustering> load_clusterings(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return read_clusterings(in);
}

std::vector<Clique> load_cliques(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return read_cliques(in);
}

int synth_budget(const TrainConfig& t, size_t num_users) {
  if (t.synth_budget > 0) return t.synth_budget;
  return std::max(1, static_cast<int>(std::ceil(0.05 * static_cast<double>(num_users) - 1e-9)));
}

std::vector<std::string> titles_of(const InteractionLog& log, std::span<const int> items) {
  std::vector<std::string> out;
  out.reserve(items.size());
  for (int i : items) out.push_back(log.titles[i]);
  return out;
}

// ---------------------------------------------------------------- analyze

struct ClusterJob {
  int owner = 0;
  std::vector<int> items;
};

bool reusable(const SemanticClustering& rec, const ClusterJob& job, ClusterMode mode) {
  if (rec.items != job.items) return false;
  return mode == ClusterMode::kMock ? rec.source == ClusterSource::kMock
                                    : rec.source != ClusterSource::kMock;
}

AnalyzeSummary run_clustering(const PipelineConfig& config, const AnalyzeOptions& options,
                              const InteractionLog& log, const std::vector<ClusterJob>& jobs,
                              const fs::path& out_path) {
  const ClusterMode mode = options.mode.value_or(config.llm.mode);
  AnalyzeSummary summary;
  summary.owners = jobs.size();
  std::map<int, SemanticClustering> existing;
  if (fs::exists(out_path)) {
    try {
      for (auto& rec : load_clusterings(out_path)) existing[rec.owner] = std::move(rec);
    } catch (const FormatError& e) {
      spdlog::warn("ignoring unreadable {}: {}", out_path.string(), e.what());
    }
  }
  std::vector<std::optional<SemanticClustering>> results(jobs.size());
  std::vector<size_t> pending;
  for (size_t i = 0; i < jobs.size(); ++i) {
    auto it = existing.find(jobs[i].owner);
    if (it != existing.end() && reusable(it->second, jobs[i], mode)) {
      results[i] = it->second;
      ++summary.reused;
    } else {
      pending.push_back(i);
    }
  }

  std::atomic<size_t> refused{0};
  std::exception_ptr failure;
  if (mode == ClusterMode::kMock) {
    for (size_t i : pending) {
      auto rec = mock_cluster(titles_of(log, jobs[i].items));
      rec.owner = jobs[i].owner;
      rec.items = jobs[i].items;
      results[i] = std::move(rec);
    }
  } else if (!pending.empty()) {
    LlmClientConfig client_config = config.llm.client;
    client_config.offline = client_config.offline || options.offline;
    ChatClient client(client_config, ResponseCache(config.llm.cache_dir));
    CallBudget budget(options.budget.value_or(config.llm.call_budget));
    std::atomic<size_t> next{0};
    std::mutex failure_mutex;
    auto worker = [&] {
      for (;;) {
        const size_t k = next.fetch_add(1);
        if (k >= pending.size()) return;
        const size_t i = pending[k];
        try {
          const auto prompt = build_prompt(titles_of(log, jobs[i].items));
          if (estimate_tokens(prompt) > config.llm.max_prompt_tokens) {
            spdlog::warn("prompt for owner {} is about {} tokens (limit {})",
                         jobs[i].owner, estimate_tokens(prompt),
                         config.llm.max_prompt_tokens);
          }
          const auto raw = client.request(prompt, &budget);
          if (!raw) {
            ++refused;
            continue;
          }
          auto rec = parse_clusters(*raw, static_cast<int>(jobs[i].items.size()));
          rec.owner = jobs[i].owner;
          rec.items = jobs[i].items;
          results[i] = std::move(rec);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next.store(pending.size());
        }
      }
    };
    const size_t threads =
        std::min<size_t>(static_cast<size_t>(config.llm.concurrency), pending.size());
    std::vector<std::thread> pool;
    for (size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    summary.network_calls = client.network_calls();
    summary.cache_hits = client.cache_hits();
  }

  std::vector<SemanticClustering> done;
  for (size_t i = 0; i < jobs.size(); ++i) {
    if (!results[i]) continue;
    if (results[i]->source == ClusterSource::kFallback) ++summary.fallbacks;
    done.push_back(std::move(*results[i]));
  }
  summary.produced = done.size() - summary.reused;
  write_with(out_path, [&](std::ostream& out) { write_clusterings(out, done); });
  if (failure) std::rethrow_exception(failure);
  if (done.size() < jobs.size()) {
    throw BudgetExhaustedError(
        "call budget exhausted: " + std::to_string(done.size()) + " of " +
        std::to_string(jobs.size()) + " owners clustered (" +
        std::to_string(summary.network_calls) +
        " new calls). Re-run the same analyze command to resume.");
  }
  return summary;
}

// ------------------------------------------------------------------ report

struct RunRow {
  std::string model;
  int runs = 0;
  std::vector<int> cutoffs;
  std::vector<UserMetrics> mean;
};

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

PipelineConfig PipelineConfig::from_json_text(const std::string& text,
                                              const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"input", "input_format", "output_dir", "k_core", "k_core_mode",
              "max_len", "split", "llm", "synthesis", "train", "eval"},
             "config");
  PipelineConfig c;
  std::string input;
  read_opt(j, "input", input, "config");
  if (input.empty()) throw ConfigError("config needs an 'input' path");
  c.input = resolve(base_dir, input);
  std::string text_value = "auto";
  read_opt(j, "input_format", text_value, "config");
  c.input_format = parse_input_format(text_value);
  std::string out = "out";
  read_opt(j, "output_dir", out, "config");
  c.output_dir = resolve(base_dir, out);
  read_opt(j, "k_core", c.train.k_core, "config");
  text_value = "alternating";
  read_opt(j, "k_core_mode", text_value, "config");
  c.k_core_mode = parse_k_core_mode(text_value);
  read_opt(j, "max_len", c.train.max_len, "config");
  if (j.contains("split")) {
    check_keys(j["split"], {"train", "valid"}, "split");
    read_opt(j["split"], "train", c.ratios.train, "split");
    read_opt(j["split"], "valid", c.ratios.valid, "split");
  }
  c.llm.cache_dir = resolve(base_dir, c.llm.cache_dir.string());
  if (j.contains("llm")) read_llm_section(j["llm"], base_dir, c.llm);
  if (j.contains("synthesis")) {
    const auto& s = j["synthesis"];
    check_keys(s, {"clique_size", "budget", "overlap"}, "synthesis");
    read_opt(s, "clique_size", c.train.clique_size, "synthesis");
    read_opt(s, "budget", c.train.synth_budget, "synthesis");
    std::string overlap = "intersection";
    read_opt(s, "overlap", overlap, "synthesis");
    c.overlap = parse_overlap_metric(overlap);
  }
  if (j.contains("train")) read_train_section(j["train"], c.train);
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    check_keys(e, {"cutoffs", "heatmap_users", "workers"}, "eval");
    read_opt(e, "cutoffs", c.eval.cutoffs, "eval");
    read_opt(e, "heatmap_users", c.eval.heatmap_users, "eval");
    read_opt(e, "workers", c.eval.workers, "eval");
  }
  c.train.eval_workers = c.eval.workers;
  if (c.train.k_core < 1) throw ConfigError("k_core must be >= 1");
  if (c.train.clique_size < 1) throw ConfigError("synthesis.clique_size must be >= 1");
  if (c.train.synth_budget < 0) throw ConfigError("synthesis.budget must be >= 0");
  if (c.eval.cutoffs.empty()) throw ConfigError("eval.cutoffs must not be empty");
  for (int n : c.eval.cutoffs) {
    if (n < 1) throw ConfigError("eval.cutoffs must be >= 1");
  }
  c.train.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& file) {
  if (!fs::exists(file)) throw ConfigError("config file not found: " + file.string());
  return from_json_text(read_file(file), fs::absolute(file).parent_path());
}

std::string_view to_string(SynthVariant variant) {
  switch (variant) {
    case SynthVariant::kMcp: return "mcp";
    case SynthVariant::kNoRep: return "no_rep";
    case SynthVariant::kNoCom: return "no_com";
  }
  return "mcp";
}

SynthVariant parse_synth_variant(const std::string& name) {
  if (name == "mcp") return SynthVariant::kMcp;
  if (name == "no_rep") return SynthVariant::kNoRep;
  if (name == "no_com") return SynthVariant::kNoCom;
  throw ConfigError("unknown synthesis variant '" + name + "' (mcp, no_rep, no_com)");
}

SynthVariant variant_for(const AblationFlags& flags) {
  if (flags.no_com) return SynthVariant::kNoCom;
  if (flags.no_rep) return SynthVariant::kNoRep;
  return SynthVariant::kMcp;
}

IngestSummary cmd_ingest(const PipelineConfig& config) {
  if (!fs::exists(config.input)) {
    throw ConfigError("input not found: " + config.input.string());
  }
  const Paths paths{config.output_dir};
  auto parsed = read_interactions(config.input, config.input_format);
  IngestSummary s;
  s.raw_events = parsed.events.size();
  s.malformed = parsed.malformed;
  if (parsed.malformed > 0) {
    spdlog::warn("skipped {} malformed input records", parsed.malformed);
  }
  auto kept = apply_k_core(std::move(parsed.events), config.train.k_core, config.k_core_mode);
  s.kept_events = kept.size();
  if (kept.empty()) throw ConfigError("no interactions survive the k-core filter");
  const auto log = build_log(kept);
  const auto splits = split_chronological(log, config.train.max_len, config.ratios);
  s.users = log.num_users();
  s.items = log.num_items();
  write_with(paths.log(), [&](std::ostream& out) { write_canonical_log(out, log); });
  write_with(paths.item_keys(), [&](std::ostream& out) { write_item_keys(out, log); });
  write_with(paths.splits(), [&](std::ostream& out) { write_split_manifest(out, splits); });
  return s;
}

namespace {

std::vector<ClusterJob> cluster_jobs(const Paths& paths, const Dataset& data,
                                     AnalyzeLevel level, SynthVariant variant,
                                     fs::path* out_path) {
  std::vector<ClusterJob> jobs;
  if (level == AnalyzeLevel::kIndividual) {
    for (size_t u = 0; u < data.splits.num_users(); ++u) {
      const auto h = data.splits.history(u);
      if (h.empty()) continue;
      jobs.push_back({static_cast<int>(u), std::vector<int>(h.begin(), h.end())});
    }
    *out_path = paths.individual_clusters();
    return jobs;
  }
  const auto dir = paths.variant_dir(variant);
  require(dir / "synth_users.jsonl", "synthesize --variant " + std::string(to_string(variant)));
  const auto synth = load_cliques(dir / "synth_users.jsonl");
  for (size_t i = 0; i < synth.size(); ++i) {
    for (int item : synth[i].items) {
      if (item < 0 || static_cast<size_t>(item) >= data.log.num_items()) {
        throw FormatError("synthesized user references unknown item");
      }
    }
    if (!synth[i].items.empty()) jobs.push_back({static_cast<int>(i), synth[i].items});
  }
  *out_path = dir / "clusters.jsonl";
  return jobs;
}

}  // namespace

AnalyzeSummary cmd_analyze(const PipelineConfig& config, const AnalyzeOptions& options) {
  const Paths paths{config.output_dir};
  const auto data = load_dataset(paths);
  fs::path out_path;
  const auto jobs = cluster_jobs(paths, data, options.level, options.variant, &out_path);
  return run_clustering(config, options, data.log, jobs, out_path);
}

size_t cmd_bake_cache(const PipelineConfig& config, AnalyzeLevel level,
                      SynthVariant variant) {
  const Paths paths{config.output_dir};
  const auto data = load_dataset(paths);
  fs::path unused;
  const auto jobs = cluster_jobs(paths, data, level, variant, &unused);
  const ResponseCache cache(config.llm.cache_dir);
  size_t written = 0;
  for (const auto& job : jobs) {
    const auto titles = titles_of(data.log, job.items);
    const auto prompt = build_prompt(titles);
    const auto key = ResponseCache::key_for(config.llm.client.model,
                                            config.llm.client.temperature, prompt);
    if (cache.get(key)) continue;
    const auto rec = mock_cluster(titles);
    ordered_json clusters = ordered_json::array();
    for (const auto& c : rec.clusters) {
      std::vector<int> numbers;
      for (int p : c.members) numbers.push_back(p + 1);
      clusters.push_back({{"label", c.label}, {"items", numbers}});
    }
    cache.put(key, ordered_json{{"clusters", clusters}}.dump());
    ++written;
  }
  return written;
}

SynthesizeSummary cmd_synthesize(const PipelineConfig& config, SynthVariant variant) {
  const Paths paths{config.output_dir};
  const auto data = load_dataset(paths);
  const auto view = training_view(data.log, data.splits);
  const int budget = synth_budget(config.train, view.num_users());
  const auto values = item_values(view);
  SynthesizeSummary s;
  s.budget = budget;
  std::vector<Clique> selected;
  Selection selection;
  if (variant == SynthVariant::kNoCom) {
    std::vector<int> pool;
    std::vector<bool> present(view.num_items(), false);
    for (const auto& seq : view.sequences) {
      for (int i : seq) present[i] = true;
    }
    for (size_t i = 0; i < present.size(); ++i) {
      if (present[i]) pool.push_back(static_cast<int>(i));
    }
    if (pool.empty()) throw ConfigError("training view has no items");
    const int size = std::clamp(
        static_cast<int>(std::lround(config.train.clique_size * view.average_length())), 1,
        static_cast<int>(pool.size()));
    std::mt19937_64 rng(mix_seed(config.train.seed, 0xC0));
    std::vector<bool> covered(view.num_items(), false);
    for (int z = 0; z < budget; ++z) {
      for (int k = 0; k < size; ++k) {
        std::uniform_int_distribution<int> pick(k, static_cast<int>(pool.size()) - 1);
        std::swap(pool[k], pool[pick(rng)]);
      }
      Clique c;
      c.anchor = -1;
      c.items.assign(pool.begin(), pool.begin() + size);
      c.member_count.assign(size, 0);
      for (int i : c.items) covered[i] = true;
      selected.push_back(std::move(c));
      selection.chosen.push_back(z);
      selection.indicator.push_back(true);
    }
    for (size_t i = 0; i < covered.size(); ++i) {
      if (covered[i]) selection.covered_value += values[i];
    }
    s.rows = budget;
  } else {
    const auto cliques = build_cliques(view, config.train.clique_size, config.overlap);
    const auto instance = make_coverage_instance(cliques, values, budget);
    write_with(paths.cliques(), [&](std::ostream& out) { write_cliques(out, cliques); });
    write_with(paths.instance(),
               [&](std::ostream& out) { write_coverage_instance(out, instance); });
    s.rows = instance.num_rows();
    if (variant == SynthVariant::kMcp) {
      selection = solve_mcp_greedy(instance);
    } else {
      std::vector<int> order(instance.num_rows());
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(mix_seed(config.train.seed, 0xE9));
      std::shuffle(order.begin(), order.end(), rng);
      const int take = std::min(instance.budget, instance.num_rows());
      selection.indicator.assign(instance.num_rows(), false);
      for (int k = 0; k < take; ++k) {
        selection.chosen.push_back(order[k]);
        selection.indicator[order[k]] = true;
      }
      selection.covered_value = coverage_value(selection.indicator, instance);
    }
    for (int r : selection.chosen) selected.push_back(cliques[r]);
  }
  s.selected = static_cast<int>(selection.chosen.size());
  s.covered_value = selection.covered_value;
  const auto dir = paths.variant_dir(variant);
  write_with(dir / "selection.txt", [&](std::ostream& out) { write_selection(out, selection); });
  write_with(dir / "synth_users.jsonl", [&](std::ostream& out) { write_cliques(out, selected); });
  return s;
}

std::string run_id(const AblationFlags& flags, uint64_t seed) {
  return flags.run_name() + "-s" + std::to_string(seed);
}

namespace {

TrainingData assemble_data(const PipelineConfig& config, const Dataset& data,
                           const AblationFlags& flags, bool need_synth) {
  const Paths paths{config.output_dir};
  TrainingData td;
  td.splits = &data.splits;
  td.num_items = static_cast<int>(data.log.num_items());
  if (fs::exists(paths.individual_clusters())) {
    const auto clusterings = load_clusterings(paths.individual_clusters());
    td.user_clusters = clusters_by_user(clusterings, data.splits);
  } else if (!flags.no_sem || flags.no_col) {
    require(paths.individual_clusters(), "analyze --level individual");
  }
  if (need_synth) {
    const auto variant = variant_for(flags);
    const auto dir = paths.variant_dir(variant);
    const std::string v(to_string(variant));
    require(dir / "synth_users.jsonl", "synthesize --variant " + v);
    require(dir / "clusters.jsonl", "analyze --level crowd --variant " + v);
    const auto synth = load_cliques(dir / "synth_users.jsonl");
    const auto clusterings = load_clusterings(dir / "clusters.jsonl");
    for (const auto& c : clusterings) {
      if (c.owner < 0 || static_cast<size_t>(c.owner) >= synth.size() ||
          synth[c.owner].items != c.items) {
        throw FormatError("crowd clusterings do not match synthesized users; re-run "
                          "`dualrec analyze --level crowd`");
      }
    }
    td.synth_users = make_synth_users(clusterings);
  }
  return td;
}

uint64_t eval_seed(uint64_t seed) { return mix_seed(seed, 0xE7A1); }

}  // namespace

TrainSummary cmd_train(const PipelineConfig& config, const AblationFlags& flags) {
  const Paths paths{config.output_dir};
  const auto data = load_dataset(paths);
  TrainConfig tc = config.train;
  tc.ablation = flags;
  auto td = assemble_data(config, data, flags, tc.lambda > 0.0);
  TrainSummary s;
  s.run = run_id(flags, tc.seed);
  s.result = train(tc, td);
  const auto dir = paths.run_dir(s.run);
  fs::create_directories(dir);
  write_with(dir / "checkpoint.bin",
             [&](std::ostream& out) { save_checkpoint(out, s.result.params); });
  write_with(dir / "loss_trace.tsv",
             [&](std::ostream& out) { write_loss_trace(out, s.result.trace); });
  ordered_json j;
  j["run"] = s.run;
  j["model"] = flags.run_name();
  j["seed"] = tc.seed;
  j["iterations"] = s.result.iterations;
  j["contrastive_updates"] = s.result.contrastive_updates;
  j["epochs_run"] = s.result.epochs_run;
  j["best_epoch"] = s.result.best_epoch;
  j["valid_recall_at_20"] = s.result.valid_recall;
  write_file(dir / "train.json", j.dump(2) + "\n");
  return s;
}

namespace {

ordered_json metrics_json(const MetricsReport& report, const std::string& run,
                          const std::string& model) {
  ordered_json j;
  j["run"] = run;
  j["model"] = model;
  j["split"] = "test";
  j["users"] = report.users.size();
  j["cutoffs"] = report.cutoffs;
  ordered_json mean;
  for (size_t c = 0; c < report.cutoffs.size(); ++c) {
    const auto n = std::to_string(report.cutoffs[c]);
    mean["recall@" + n] = report.mean[c].recall;
    mean["ndcg@" + n] = report.mean[c].ndcg;
    mean["hit@" + n] = report.mean[c].hit;
  }
  j["mean"] = mean;
  return j;
}

}  // namespace

MetricsReport cmd_evaluate(const PipelineConfig& config, const std::string& run) {
  const Paths paths{config.output_dir};
  const auto dir = paths.run_dir(run);
  require(dir / "checkpoint.bin", "train");
  const auto data = load_dataset(paths);
  std::ifstream in(dir / "checkpoint.bin", std::ios::binary);
  const auto params = load_checkpoint(in);
  if (params.item_embeddings.rows() != static_cast<Eigen::Index>(data.log.num_items())) {
    throw FormatError("checkpoint item count does not match the ingested log");
  }
  std::string model = run;
  uint64_t seed = config.train.seed;
  if (fs::exists(dir / "train.json")) {
    const auto t = json::parse(read_file(dir / "train.json"));
    model = t.value("model", model);
    seed = t.value("seed", seed);
  }
  const auto flags = AblationFlags::parse(model);
  const auto td = assemble_data(config, data, flags, false);
  auto report = evaluate(params, td, config.eval.cutoffs, EvalSplit::kTest,
                         eval_seed(seed), config.eval.workers);
  report.name = model;
  auto j = metrics_json(report, run, model);
  ordered_json heat;
  for (int u : config.eval.heatmap_users) {
    if (u < 0 || static_cast<size_t>(u) >= data.splits.num_users() ||
        data.splits.history(u).empty()) {
      spdlog::warn("skipping heatmap for user {}", u);
      continue;
    }
    const auto grid = interest_heatmap(params, td, u, eval_seed(seed));
    write_with(dir / ("heatmap_u" + std::to_string(u) + ".tsv"),
               [&](std::ostream& out) { write_heatmap(out, grid); });
    heat[std::to_string(u)] = mean_row_correlation(grid);
  }
  j["heatmap_row_correlation"] = heat;
  write_with(dir / "metrics_users.tsv",
             [&](std::ostream& out) { write_metric_records(out, report); });
  write_file(dir / "metrics.json", j.dump(2) + "\n");
  return report;
}

MetricsReport cmd_evaluate_popularity(const PipelineConfig& config) {
  const Paths paths{config.output_dir};
  const auto data = load_dataset(paths);
  auto report = popularity_baseline(data.splits, static_cast<int>(data.log.num_items()),
                                    config.eval.cutoffs, EvalSplit::kTest);
  const auto dir = paths.run_dir("pop");
  write_with(dir / "metrics_users.tsv",
             [&](std::ostream& out) { write_metric_records(out, report); });
  write_file(dir / "metrics.json", metrics_json(report, "pop", "pop").dump(2) + "\n");
  return report;
}

std::string cmd_report(const PipelineConfig& config) {
  const Paths paths{config.output_dir};
  if (!fs::exists(paths.runs())) {
    throw MissingArtifactError("evaluate", "no evaluated runs under " +
                                               paths.runs().string() +
                                               "; run `dualrec evaluate` first");
  }
  std::vector<fs::path> run_dirs;
  for (const auto& entry : fs::directory_iterator(paths.runs())) {
    if (entry.is_directory() && fs::exists(entry.path() / "metrics.json")) {
      run_dirs.push_back(entry.path());
    }
  }
  std::sort(run_dirs.begin(), run_dirs.end());
  if (run_dirs.empty()) {
    throw MissingArtifactError("evaluate", "no metrics.json under " + paths.runs().string() +
                                               "; run `dualrec evaluate` first");
  }
  std::map<std::string, RunRow> rows;
  std::vector<std::string> heat_lines;
  for (const auto& dir : run_dirs) {
    const auto j = json::parse(read_file(dir / "metrics.json"));
    const auto model = j.at("model").get<std::string>();
    const auto cutoffs = j.at("cutoffs").get<std::vector<int>>();
    auto& row = rows[model];
    if (row.runs == 0) {
      row.model = model;
      row.cutoffs = cutoffs;
      row.mean.assign(cutoffs.size(), {});
    } else if (row.cutoffs != cutoffs) {
      throw FormatError("runs of " + model + " were evaluated at different cutoffs");
    }
    ++row.runs;
    for (size_t c = 0; c < cutoffs.size(); ++c) {
      const auto n = std::to_string(cutoffs[c]);
      row.mean[c].recall += j["mean"].at("recall@" + n).get<double>();
      row.mean[c].ndcg += j["mean"].at("ndcg@" + n).get<double>();
      row.mean[c].hit += j["mean"].at("hit@" + n).get<double>();
    }
    if (j.contains("heatmap_row_correlation")) {
      for (const auto& [user, corr] : j["heatmap_row_correlation"].items()) {
        heat_lines.push_back("| " + dir.filename().string() + " | " + user + " | heatmap_u" +
                             user + ".tsv | " + fmt4(corr.get<double>()) + " |");
      }
    }
  }
  std::vector<RunRow> ordered;
  auto take = [&](const std::string& name) {
    auto it = rows.find(name);
    if (it == rows.end()) return;
    ordered.push_back(it->second);
    rows.erase(it);
  };
  take("pop");
  take("full");
  for (auto& [name, row] : rows) ordered.push_back(row);
  for (auto& row : ordered) {
    for (auto& m : row.mean) {
      m.recall /= row.runs;
      m.ndcg /= row.runs;
      m.hit /= row.runs;
    }
  }

  const auto& cutoffs = ordered.front().cutoffs;
  const bool compare = ordered.size() > 1;
  const RunRow* pop = nullptr;
  const RunRow* full = nullptr;
  for (const auto& row : ordered) {
    if (row.model == "pop") pop = &row;
    if (row.model == "full") full = &row;
  }
  std::ostringstream md;
  md << "# dualrec results\n\n";
  md << "Test split, means over users; models with several seeds are averaged.\n\n";
  md << "| Model | Runs |";
  std::string rule = "|---|---:|";
  for (int n : cutoffs) {
    md << " Recall@" << n << " | NDCG@" << n << " | HitRate@" << n << " |";
    rule += "---:|---:|---:|";
  }
  const int lead = cutoffs.front();
  if (compare && pop) {
    md << " R@" << lead << " vs pop |";
    rule += "---:|";
  }
  if (compare && full) {
    md << " R@" << lead << " vs full |";
    rule += "---:|";
  }
  md << '\n' << rule << '\n';
  auto rel = [](double a, double b) {
    if (b == 0.0) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.1f%%", 100.0 * (a - b) / b);
    return std::string(buf);
  };
  for (const auto& row : ordered) {
    if (row.cutoffs != cutoffs) {
      throw FormatError("runs were evaluated at different cutoffs; re-run evaluate");
    }
    md << "| " << row.model << " | " << row.runs << " |";
    for (const auto& m : row.mean) {
      md << ' ' << fmt4(m.recall) << " | " << fmt4(m.ndcg) << " | " << fmt4(m.hit) << " |";
    }
    if (compare && pop) md << ' ' << rel(row.mean[0].recall, pop->mean[0].recall) << " |";
    if (compare && full) md << ' ' << rel(row.mean[0].recall, full->mean[0].recall) << " |";
    md << '\n';
  }
  if (!heat_lines.empty()) {
    md << "\n## Interest heatmaps\n\n";
    md << "Cosine similarity between each interest and each history item. Lower mean "
          "row correlation means the interests are more distinct.\n\n";
    md << "| Run | User | Grid | Mean row correlation |\n|---|---:|---|---:|\n";
    for (const auto& line : heat_lines) md << line << '\n';
  }
  const auto text = md.str();
  write_file(paths.report(), text);
  return text;
}

}  // namespace dualrec
