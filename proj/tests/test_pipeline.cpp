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


#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dualrec/common.hpp"
#include "dualrec/pipeline.hpp"
#include "test_support.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines _res.
#include <httplib.h>
#include <json.hpp>

using namespace dualrec;
using dualrec::testing::read_file;
using dualrec::testing::TempDir;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = DUALREC_FIXTURE_DIR;

// Copies the bundled fixture into `dir` and returns its config with
// `patch` merged on top.
PipelineConfig workspace(const fs::path& dir, const nlohmann::json& patch = nlohmann::json::object()) {
  fs::copy_file(kFixture / "interactions.jsonl", dir / "interactions.jsonl",
                fs::copy_options::overwrite_existing);
  if (!fs::exists(dir / "llm_cache")) {
    fs::copy(kFixture / "llm_cache", dir / "llm_cache", fs::copy_options::recursive);
  }
  auto j = nlohmann::json::parse(read_file(kFixture / "config.json"));
  j.merge_patch(patch);
  return PipelineConfig::from_json_text(j.dump(), dir);
}

size_t count_lines(const fs::path& path) {
  std::ifstream in(path);
  size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n;
}

// Runs every stage of the default configuration.
void run_all(const PipelineConfig& config) {
  cmd_ingest(config);
  cmd_analyze(config, {});
  cmd_synthesize(config, SynthVariant::kMcp);
  AnalyzeOptions crowd;
  crowd.level = AnalyzeLevel::kCrowd;
  cmd_analyze(config, crowd);
  const auto trained = cmd_train(config, config.train.ablation);
  cmd_evaluate(config, trained.run);
}

class CountingEndpoint {
 public:
  CountingEndpoint() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request&, httplib::Response& res) {
      hits_.fetch_add(1);
      nlohmann::json body = {
          {"choices", {{{"message", {{"role", "assistant"}, {"content", R"({"all":[1]})"}}}}}}};
      res.set_content(body.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~CountingEndpoint() {
    server_.stop();
    thread_.join();
  }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  int hits() const { return hits_.load(); }

 private:
  httplib::Server server_;
  std::atomic<int> hits_{0};
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("config rejects unknown keys and resolves paths") {
  TempDir tmp;
  const auto config = workspace(tmp.path());
  CHECK(config.input == tmp.path() / "interactions.jsonl");
  CHECK(config.output_dir == tmp.path() / "out");
  CHECK(config.llm.cache_dir == tmp.path() / "llm_cache");
  CHECK(config.train.dim == 32);
  CHECK(config.eval.cutoffs == std::vector<int>{20, 50});
  CHECK_THROWS_AS(PipelineConfig::from_json_text(R"({"input":"x","bogus":1})", tmp.path()),
                  ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json_text(R"({"input":"x","train":{"lr":"fast"}})", tmp.path()),
                  ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json_text("{not json", tmp.path()), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::load(tmp.path() / "absent.json"), ConfigError);
}

TEST_CASE("ingest is idempotent and sees the 50-user fixture") {
  TempDir tmp;
  const auto config = workspace(tmp.path());
  const Paths paths{config.output_dir};
  const auto summary = cmd_ingest(config);
  CHECK(summary.users == 50);
  const auto log = read_file(paths.log());
  const auto items = read_file(paths.item_keys());
  const auto splits = read_file(paths.splits());
  cmd_ingest(config);
  CHECK(read_file(paths.log()) == log);
  CHECK(read_file(paths.item_keys()) == items);
  CHECK(read_file(paths.splits()) == splits);

  std::ifstream log_in(paths.log());
  const auto parsed = read_canonical_log(log_in);
  std::ifstream split_in(paths.splits());
  CHECK(read_split_manifest(split_in, parsed).num_users() == 50);
}

TEST_CASE("ingest with a missing input") {
  TempDir tmp;
  auto config = workspace(tmp.path());
  config.input = tmp.path() / "nowhere.jsonl";
  CHECK_THROWS_AS(cmd_ingest(config), ConfigError);
}

TEST_CASE("command line exit codes") {
  TempDir tmp;
  workspace(tmp.path());
  auto j = nlohmann::json::parse(read_file(kFixture / "config.json"));
  j["input"] = "nowhere.jsonl";
  dualrec::testing::write_file(tmp.path() / "bad.json", j.dump());
  const std::string cli = DUALREC_CLI_PATH;
  auto status = [&](const std::string& args) {
    const int raw = std::system((cli + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status("-c " + (tmp.path() / "bad.json").string() + " ingest") == 2);
  CHECK(status("-c " + (tmp.path() / "absent.json").string() + " ingest") == 2);
  dualrec::testing::write_file(tmp.path() / "good.json", read_file(kFixture / "config.json"));
  CHECK(status("-c " + (tmp.path() / "good.json").string() + " train") == 2);
  CHECK(status("-c " + (tmp.path() / "good.json").string() + " ingest") == 0);
  CHECK(fs::exists(tmp.path() / "out" / "log.tsv"));
}

TEST_CASE("offline analyze with a warm cache makes no calls") {
  TempDir tmp;
  const auto config = workspace(tmp.path());
  cmd_ingest(config);
  const auto s = cmd_analyze(config, {});
  CHECK(s.owners == 50);
  CHECK(s.network_calls == 0);
  CHECK(s.cache_hits == 50);
  CHECK(count_lines(Paths{config.output_dir}.individual_clusters()) == 50);
  // A second run reuses every record.
  const auto again = cmd_analyze(config, {});
  CHECK(again.reused == 50);
  CHECK(again.produced == 0);
}

TEST_CASE("mock analyze uses the title clusterer") {
  TempDir tmp;
  const auto config = workspace(tmp.path(), {{"llm", {{"mode", "mock"}, {"offline", false}}}});
  cmd_ingest(config);
  const auto s = cmd_analyze(config, {});
  CHECK(s.network_calls == 0);
  std::ifstream in(Paths{config.output_dir}.individual_clusters());
  for (const auto& c : read_clusterings(in)) CHECK(c.source == ClusterSource::kMock);
}

TEST_CASE("call budget stops analyze after ten calls") {
  CountingEndpoint endpoint;
  TempDir tmp;
  ::setenv("DUALREC_TEST_KEY", "secret", 1);
  const auto config = workspace(
      tmp.path(), {{"llm",
                    {{"offline", false},
                     {"base_url", endpoint.base_url()},
                     {"api_key_env", "DUALREC_TEST_KEY"},
                     {"cache_dir", "cold_cache"}}}});
  cmd_ingest(config);
  AnalyzeOptions limited;
  limited.budget = 10;
  CHECK_THROWS_AS(cmd_analyze(config, limited), BudgetExhaustedError);
  CHECK(endpoint.hits() == 10);
  CHECK(count_lines(Paths{config.output_dir}.individual_clusters()) == 10);

  const auto rest = cmd_analyze(config, {});
  CHECK(rest.reused == 10);
  CHECK(rest.produced == 40);
  CHECK(rest.network_calls == 40);
  CHECK(endpoint.hits() == 50);
  CHECK(count_lines(Paths{config.output_dir}.individual_clusters()) == 50);
}

TEST_CASE("synthesis selection on the fixture matches the exact optimum") {
  TempDir tmp;
  const auto config = workspace(tmp.path());
  cmd_ingest(config);
  const auto s = cmd_synthesize(config, SynthVariant::kMcp);
  CHECK(s.rows == 50);
  CHECK(s.budget == 3);
  const Paths paths{config.output_dir};
  std::ifstream inst_in(paths.instance());
  const auto instance = read_coverage_instance(inst_in);
  std::ifstream sel_in(paths.variant_dir(SynthVariant::kMcp) / "selection.txt");
  const auto selection = read_selection(sel_in, instance.num_rows());
  const auto exact = solve_mcp_exact(instance);
  CHECK(selection.covered_value == doctest::Approx(exact.covered_value));
  CHECK(s.covered_value == doctest::Approx(exact.covered_value));
  CHECK(count_lines(paths.variant_dir(SynthVariant::kMcp) / "synth_users.jsonl") == 3);
}

TEST_CASE("a budget beyond the user count selects every useful row") {
  TempDir tmp;
  const auto config = workspace(tmp.path(), {{"synthesis", {{"budget", 500}}}});
  cmd_ingest(config);
  const auto s = cmd_synthesize(config, SynthVariant::kMcp);
  const Paths paths{config.output_dir};
  std::ifstream inst_in(paths.instance());
  const auto instance = read_coverage_instance(inst_in);
  std::vector<bool> reachable(instance.num_columns, false);
  for (const auto& row : instance.rows) {
    for (int c : row) reachable[c] = true;
  }
  double total = 0.0;
  for (int c = 0; c < instance.num_columns; ++c) {
    if (reachable[c]) total += instance.values[c];
  }
  CHECK(s.covered_value == doctest::Approx(total));
  CHECK(s.selected == static_cast<int>(solve_mcp_naive_greedy(instance).chosen.size()));
  CHECK(s.selected < 50);
}

TEST_CASE("random representative selection is seeded") {
  TempDir a_dir, b_dir;
  const auto a = workspace(a_dir.path());
  const auto b = workspace(b_dir.path(), {{"train", {{"seed", 7}}}});
  for (const auto* c : {&a, &b}) {
    cmd_ingest(*c);
    cmd_synthesize(*c, SynthVariant::kNoRep);
  }
  const auto file = [](const PipelineConfig& c) {
    return read_file(Paths{c.output_dir}.variant_dir(SynthVariant::kNoRep) / "selection.txt");
  };
  const auto first = file(a);
  cmd_synthesize(a, SynthVariant::kNoRep);
  CHECK(file(a) == first);
  CHECK(file(b) != first);
  std::istringstream in(first);
  CHECK(read_selection(in, 50).chosen.size() == 3);
}

TEST_CASE("stages report missing upstream artifacts") {
  TempDir tmp;
  const auto config = workspace(tmp.path());
  auto stage_of = [](auto&& fn) {
    try {
      fn();
    } catch (const MissingArtifactError& e) {
      return e.stage();
    }
    return std::string("none");
  };
  CHECK(stage_of([&] { cmd_analyze(config, {}); }) == "ingest");
  CHECK(stage_of([&] { cmd_synthesize(config, SynthVariant::kMcp); }) == "ingest");
  CHECK(stage_of([&] { cmd_train(config, {}); }) == "ingest");
  CHECK(stage_of([&] { cmd_report(config); }) == "evaluate");
  cmd_ingest(config);
  CHECK(stage_of([&] { cmd_train(config, {}); }) == "analyze --level individual");
  CHECK(stage_of([&] { cmd_evaluate(config, "full-s42"); }) == "train");
  AnalyzeOptions crowd;
  crowd.level = AnalyzeLevel::kCrowd;
  CHECK(stage_of([&] { cmd_analyze(config, crowd); }) == "synthesize --variant mcp");
}

TEST_CASE("end-to-end fixture pipeline and report") {
  TempDir tmp;
  const auto config = workspace(tmp.path());
  const Paths paths{config.output_dir};
  const auto start = std::chrono::steady_clock::now();
  run_all(config);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(seconds < 300.0);
  CHECK(run_id({}, 42) == "full-s42");
  const auto run = paths.run_dir("full-s42");
  CHECK(fs::exists(run / "checkpoint.bin"));
  CHECK(fs::exists(run / "loss_trace.tsv"));
  CHECK(fs::exists(run / "metrics_users.tsv"));
  CHECK(fs::exists(run / "heatmap_u0.tsv"));

  const auto metrics = nlohmann::json::parse(read_file(run / "metrics.json"));
  int metric_columns = 0;
  for (const auto& [key, _] : metrics["mean"].items()) {
    if (key.find('@') != std::string::npos) ++metric_columns;
  }
  CHECK(metric_columns == 6);

  SUBCASE("single run report has no comparison columns") {
    const auto text = cmd_report(config);
    CHECK(text.find("| full |") != std::string::npos);
    CHECK(text.find(" vs ") == std::string::npos);
    for (const char* col : {"Recall@20", "NDCG@20", "HitRate@20", "Recall@50", "NDCG@50",
                            "HitRate@50"}) {
      CHECK(text.find(col) != std::string::npos);
    }
    CHECK(read_file(paths.report()) == text);
  }
  SUBCASE("report compares against the baseline") {
    cmd_evaluate_popularity(config);
    const auto text = cmd_report(config);
    CHECK(text.find("| pop |") < text.find("| full |"));
    CHECK(text.find("R@20 vs pop") != std::string::npos);
  }
  SUBCASE("deleted intermediates are rebuilt byte for byte") {
    const std::vector<fs::path> files = {
        paths.log(),
        paths.splits(),
        paths.individual_clusters(),
        paths.cliques(),
        paths.instance(),
        paths.variant_dir(SynthVariant::kMcp) / "selection.txt",
        paths.variant_dir(SynthVariant::kMcp) / "synth_users.jsonl",
        paths.variant_dir(SynthVariant::kMcp) / "clusters.jsonl",
        run / "checkpoint.bin",
        run / "loss_trace.tsv",
        run / "metrics.json",
        run / "metrics_users.tsv",
        run / "heatmap_u0.tsv",
    };
    std::vector<std::string> before;
    for (const auto& f : files) before.push_back(read_file(f));
    for (const auto& f : files) fs::remove(f);
    run_all(config);
    for (size_t i = 0; i < files.size(); ++i) {
      CAPTURE(files[i].string());
      CHECK(read_file(files[i]) == before[i]);
    }
  }
}
