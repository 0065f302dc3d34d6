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


// Training loop with the scheduled contrastive objective, top-n evaluation,
// the popularity baseline and interest heatmaps.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dualrec/data.hpp"
#include "dualrec/llm_interest.hpp"
#include "dualrec/model.hpp"

namespace dualrec {

struct AblationFlags {
  bool no_sem = false;
  bool no_col = false;
  bool no_com = false;
  bool no_rep = false;

  // "full", or the set flags joined by '+', e.g. "no_sem+no_rep".
  std::string run_name() const;
  // Inverse of run_name(); also accepts comma separators.
  static AblationFlags parse(const std::string& text);
  bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-6;
  int batch_size = 128;
  int epochs = 20;
  double lambda = 0.01;
  double tau = 0.1;
  int num_interests = 4;
  int dim = 64;
  int routing_iters = 3;
  int negatives = 1280;
  uint64_t seed = 42;
  AblationFlags ablation;
  int clique_size = 5;
  int synth_budget = 0;  // 0: ceil(0.05 * M)
  int k_core = 5;
  int max_len = 20;
  int patience = 5;
  int64_t max_iterations = 0;  // 0: no cap
  bool routing_grad = false;
  int cst_batch = 0;  // synthesized users per contrastive step; 0: batch_size
  int eval_workers = 1;

  void validate() const;
  ModelHyper hyper() const;
};

using ClusterSets = std::vector<std::vector<int>>;

struct TrainingData {
  const SplitSequences* splits = nullptr;
  int num_items = 0;
  // Per user: clusters as positions into the user's history (train + valid).
  std::vector<ClusterSets> user_clusters;
  std::vector<SynthUser> synth_users;
};

// Maps individual-level clusterings onto users. A record whose item list
// does not equal the user's history raises FormatError; users without a
// record get no clusters.
std::vector<ClusterSets> clusters_by_user(
    std::span<const SemanticClustering> clusterings, const SplitSequences& splits);

// Keeps positions < limit and drops clusters left empty.
ClusterSets restrict_clusters(const ClusterSets& clusters, int limit);

std::vector<SynthUser> make_synth_users(std::span<const SemanticClustering> clusterings);

// floor(1 / lambda) for lambda > 0, else 0 (never).
int64_t contrastive_period(double lambda);

struct LossRecord {
  int64_t iteration = 0;
  int epoch = 0;
  LossReport report;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossRecord> trace;
  int64_t iterations = 0;
  int64_t contrastive_updates = 0;
  int epochs_run = 0;
  int best_epoch = 0;
  std::vector<double> valid_recall;
  double train_seconds = 0.0;  // optimization only, validation excluded
  double seconds = 0.0;
};

TrainResult train(const TrainConfig& config, const TrainingData& data);

struct UserMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
  double hit = 0.0;
};

// Metrics of one ranked list against a set of distinct targets, cut at n.
UserMetrics rank_metrics(std::span<const int> ranked, std::span<const int> targets,
                         int n);

enum class EvalSplit { kValidation, kTest };

struct MetricsReport {
  std::string name;
  std::vector<int> cutoffs;
  std::vector<int> users;                         // evaluated users
  std::vector<std::vector<UserMetrics>> per_user;  // [cutoff][user slot]
  std::vector<UserMetrics> mean;                  // [cutoff]
  double seconds = 0.0;
  int64_t contrastive_updates = 0;

  const UserMetrics& at(int cutoff) const;
};

// Targets: distinct held-out items that are not in the scoring history.
std::vector<int> evaluation_targets(const SplitSequences& splits, size_t user,
                                    EvalSplit split);

MetricsReport evaluate(const ModelParams& params, const TrainingData& data,
                       std::span<const int> cutoffs, EvalSplit split,
                       uint64_t seed, int workers = 1);

MetricsReport popularity_baseline(const SplitSequences& splits, int num_items,
                                  std::span<const int> cutoffs,
                                  EvalSplit split = EvalSplit::kTest);

// K x L cosine similarities between each interest and each history item.
Mat interest_heatmap(const ModelParams& params, const TrainingData& data,
                     int user, uint64_t seed);

// Mean Pearson correlation over all pairs of rows (0 for fewer than 2 rows;
// constant rows count as correlation 1 with each other, 0 otherwise).
double mean_row_correlation(const Mat& grid);

// Mean cosine similarity of item embeddings for item pairs that share a
// crowd-level cluster versus pairs in the same synthesized user that do not.
struct ClusterGeometry {
  double intra = 0.0;
  double inter = 0.0;
  int64_t intra_pairs = 0;
  int64_t inter_pairs = 0;
};

ClusterGeometry cluster_geometry(const ModelParams& params,
                                 std::span<const SynthUser> users);

void write_loss_trace(std::ostream& out, std::span<const LossRecord> trace);
// One record per user per metric: user, metric, cutoff, value.
void write_metric_records(std::ostream& out, const MetricsReport& report);
void write_heatmap(std::ostream& out, const Mat& grid);

}  // namespace dualrec
