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


// dualrec command-line tool.
//
//   dualrec ingest     -c config.json
//   dualrec analyze    -c config.json --level individual|crowd [--mock|--offline]
//   dualrec synthesize -c config.json [--variant mcp|no_rep|no_com]
//   dualrec train      -c config.json [--ablation no_sem] [--seed 7]
//   dualrec evaluate   -c config.json (--run full-s42 | --baseline pop)
//   dualrec report     -c config.json
//
// Exit codes: 0 success, 2 usage error or missing input, 3 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "dualrec/pipeline.hpp"
#include "dualrec/planted.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

void print_metrics(const dualrec::MetricsReport& r) {
  std::cout << r.name << " (" << r.users.size() << " users)\n";
  for (size_t c = 0; c < r.cutoffs.size(); ++c) {
    std::printf("  @%-3d recall %.4f  ndcg %.4f  hit %.4f\n", r.cutoffs[c],
                r.mean[c].recall, r.mean[c].ndcg, r.mean[c].hit);
  }
}

}  // namespace

int main(int argc, char** argv) {
  using namespace dualrec;
  CLI::App app{"Multi-interest sequential recommendation with LLM interest clusters"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path = "config.json";
  std::string log_level = "info";
  app.add_option("-c,--config", config_path, "Pipeline config (JSON)");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));

  auto* ingest = app.add_subcommand("ingest", "Filter, index and split the interaction log");

  auto* analyze = app.add_subcommand("analyze", "Cluster behaviors into interests");
  std::string level = "individual";
  bool mock = false;
  bool offline = false;
  std::optional<int64_t> budget;
  std::string analyze_variant = "mcp";
  analyze->add_option("--level", level, "individual or crowd")
      ->check(CLI::IsMember({"individual", "crowd"}));
  analyze->add_flag("--mock", mock, "Use the offline title clusterer instead of the LLM");
  analyze->add_flag("--offline", offline, "Serve only from the response cache");
  analyze->add_option("--budget", budget, "Maximum new LLM calls for this invocation");
  analyze->add_option("--variant", analyze_variant, "Synthesized users to cluster (crowd)")
      ->check(CLI::IsMember({"mcp", "no_rep", "no_com"}));

  auto* synthesize = app.add_subcommand("synthesize", "Build and select synthesized users");
  std::string synth_variant = "mcp";
  synthesize->add_option("--variant", synth_variant, "mcp, no_rep or no_com")
      ->check(CLI::IsMember({"mcp", "no_rep", "no_com"}));

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::optional<std::string> ablation;
  std::optional<uint64_t> seed;
  train_cmd->add_option("--ablation", ablation, "full, or flags joined by '+'");
  train_cmd->add_option("--seed", seed, "Override train.seed");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a run on the test split");
  std::string run;
  std::string baseline;
  auto* run_opt = evaluate_cmd->add_option("--run", run, "Run directory name");
  auto* base_opt = evaluate_cmd->add_option("--baseline", baseline, "Baseline to evaluate")
                       ->check(CLI::IsMember({"pop"}));
  run_opt->excludes(base_opt);
  evaluate_cmd->require_option(1);

  auto* report = app.add_subcommand("report", "Render the comparison table");

  auto* fixture = app.add_subcommand("generate-fixture", "Write a planted-topic dataset");
  fixture->group("");
  PlantedConfig planted;
  std::string fixture_out;
  fixture->add_option("--out", fixture_out, "Output JSONL path")->required();
  fixture->add_option("--users", planted.num_users);
  fixture->add_option("--items", planted.num_items);
  fixture->add_option("--topics", planted.num_topics);
  fixture->add_option("--topics-per-user", planted.topics_per_user);
  fixture->add_option("--min-length", planted.min_length);
  fixture->add_option("--max-length", planted.max_length);
  fixture->add_option("--seed", planted.seed);

  auto* bake = app.add_subcommand("bake-cache", "Seed the LLM cache with title clusters");
  bake->group("");
  std::string bake_level = "individual";
  std::string bake_variant = "mcp";
  bake->add_option("--level", bake_level)->check(CLI::IsMember({"individual", "crowd"}));
  bake->add_option("--variant", bake_variant)
      ->check(CLI::IsMember({"mcp", "no_rep", "no_com"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*fixture) {
      const auto data = generate_planted(planted);
      std::ofstream out(fixture_out);
      if (!out) throw ConfigError("cannot write " + fixture_out);
      write_events_jsonl(out, data.events);
      std::cout << "wrote " << data.events.size() << " events to " << fixture_out << '\n';
      return kExitOk;
    }
    auto config = PipelineConfig::load(config_path);
    if (*ingest) {
      const auto s = cmd_ingest(config);
      std::cout << "ingested " << s.kept_events << " of " << s.raw_events << " events ("
                << s.malformed << " malformed): " << s.users << " users, " << s.items
                << " items\n";
    } else if (*analyze) {
      AnalyzeOptions options;
      options.level = level == "crowd" ? AnalyzeLevel::kCrowd : AnalyzeLevel::kIndividual;
      if (mock) options.mode = ClusterMode::kMock;
      options.offline = offline;
      options.budget = budget;
      options.variant = parse_synth_variant(analyze_variant);
      const auto s = cmd_analyze(config, options);
      std::cout << "clustered " << s.owners << " owners: " << s.reused << " reused, "
                << s.produced << " new, " << s.network_calls << " network calls, "
                << s.cache_hits << " cache hits, " << s.fallbacks << " fallbacks\n";
    } else if (*synthesize) {
      const auto s = cmd_synthesize(config, parse_synth_variant(synth_variant));
      std::printf("selected %d of %d synthesized users (Z=%d), covered value %.6f\n",
                  s.selected, s.rows, s.budget, s.covered_value);
    } else if (*train_cmd) {
      if (seed) config.train.seed = *seed;
      const auto flags = ablation ? AblationFlags::parse(*ablation) : config.train.ablation;
      const auto s = cmd_train(config, flags);
      std::printf("%s: %lld iterations, %lld contrastive updates, best epoch %d of %d\n",
                  s.run.c_str(), static_cast<long long>(s.result.iterations),
                  static_cast<long long>(s.result.contrastive_updates), s.result.best_epoch,
                  s.result.epochs_run);
    } else if (*evaluate_cmd) {
      print_metrics(baseline.empty() ? cmd_evaluate(config, run)
                                     : cmd_evaluate_popularity(config));
    } else if (*bake) {
      const auto n = cmd_bake_cache(
          config, bake_level == "crowd" ? AnalyzeLevel::kCrowd : AnalyzeLevel::kIndividual,
          parse_synth_variant(bake_variant));
      std::cout << "cached " << n << " responses\n";
    } else if (*report) {
      std::cout << cmd_report(config);
    }
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << " (missing stage: " << e.stage() << ")\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
