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


// File-composed pipeline stages behind the command-line tool. Each stage
// reads the artifacts of the previous ones from the output directory and
// writes its own; re-running a stage with the same config reproduces its
// files byte for byte.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dualrec/data.hpp"
#include "dualrec/llm_interest.hpp"
#include "dualrec/synthesis.hpp"
#include "dualrec/train_eval.hpp"

namespace dualrec {

enum class ClusterMode { kLlm, kMock };

struct LlmStageConfig {
  LlmClientConfig client;
  ClusterMode mode = ClusterMode::kLlm;
  std::filesystem::path cache_dir = "llm_cache";
  int concurrency = 4;
  int64_t call_budget = 0;  // 0: unlimited
  size_t max_prompt_tokens = 6000;
};

struct EvalStageConfig {
  std::vector<int> cutoffs{20, 50};
  std::vector<int> heatmap_users{0};
  int workers = 1;
};

struct PipelineConfig {
  std::filesystem::path input;
  InputFormat input_format = InputFormat::kAuto;
  std::filesystem::path output_dir = "out";
  KCoreMode k_core_mode = KCoreMode::kAlternating;
  SplitRatios ratios;
  OverlapMetric overlap = OverlapMetric::kIntersection;
  LlmStageConfig llm;
  TrainConfig train;  // also carries k_core, max_len, clique size and Z
  EvalStageConfig eval;

  // Relative paths are resolved against `base_dir`. Unknown keys are errors.
  static PipelineConfig from_json_text(const std::string& text,
                                       const std::filesystem::path& base_dir);
  static PipelineConfig load(const std::filesystem::path& file);
};

// Raised when the call budget runs out before every owner is clustered.
// Finished records are already on disk.
class BudgetExhaustedError : public Error {
 public:
  using Error::Error;
};

enum class SynthVariant { kMcp, kNoRep, kNoCom };

std::string_view to_string(SynthVariant variant);
SynthVariant parse_synth_variant(const std::string& name);
// The synthesized users a training run with these flags consumes.
SynthVariant variant_for(const AblationFlags& flags);

struct Paths {
  std::filesystem::path root;

  std::filesystem::path log() const { return root / "log.tsv"; }
  std::filesystem::path item_keys() const { return root / "items.tsv"; }
  std::filesystem::path splits() const { return root / "splits.tsv"; }
  std::filesystem::path individual_clusters() const {
    return root / "clusters_individual.jsonl";
  }
  std::filesystem::path cliques() const { return root / "synth" / "cliques.jsonl"; }
  std::filesystem::path instance() const { return root / "synth" / "instance.txt"; }
  std::filesystem::path variant_dir(SynthVariant v) const {
    return root / "synth" / std::string(to_string(v));
  }
  std::filesystem::path runs() const { return root / "runs"; }
  std::filesystem::path run_dir(const std::string& run) const { return runs() / run; }
  std::filesystem::path report() const { return root / "report.md"; }
};

struct IngestSummary {
  size_t raw_events = 0;
  size_t malformed = 0;
  size_t kept_events = 0;
  size_t users = 0;
  size_t items = 0;
};

IngestSummary cmd_ingest(const PipelineConfig& config);

enum class AnalyzeLevel { kIndividual, kCrowd };

struct AnalyzeOptions {
  AnalyzeLevel level = AnalyzeLevel::kIndividual;
  std::optional<ClusterMode> mode;  // overrides the config
  bool offline = false;             // forces offline on top of the config
  std::optional<int64_t> budget;
  SynthVariant variant = SynthVariant::kMcp;
};

struct AnalyzeSummary {
  size_t owners = 0;
  size_t reused = 0;
  size_t produced = 0;
  int64_t network_calls = 0;
  int64_t cache_hits = 0;
  size_t fallbacks = 0;
};

AnalyzeSummary cmd_analyze(const PipelineConfig& config, const AnalyzeOptions& options);

// Fills the response cache with title-clusterer answers in the LLM reply
// format, so `analyze --offline` can run without a network. Existing
// entries are kept. Returns the number of entries written.
size_t cmd_bake_cache(const PipelineConfig& config, AnalyzeLevel level,
                      SynthVariant variant);

struct SynthesizeSummary {
  int rows = 0;
  int budget = 0;
  int selected = 0;
  double covered_value = 0.0;
};

SynthesizeSummary cmd_synthesize(const PipelineConfig& config, SynthVariant variant);

struct TrainSummary {
  std::string run;
  TrainResult result;
};

// Run directory name: ablation name and seed, e.g. "no_sem-s42".
std::string run_id(const AblationFlags& flags, uint64_t seed);

TrainSummary cmd_train(const PipelineConfig& config, const AblationFlags& flags);

MetricsReport cmd_evaluate(const PipelineConfig& config, const std::string& run);
MetricsReport cmd_evaluate_popularity(const PipelineConfig& config);

// Renders report.md from every evaluated run and returns its text.
std::string cmd_report(const PipelineConfig& config);

}  // namespace dualrec
