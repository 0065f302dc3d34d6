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


// Differentiable core: item embeddings, capsule routing for collaborative
// interests, attention pooling of semantic clusters, the alignment between
// the two, hard-readout scoring and both training losses. Gradients are
// hand-derived and validated against central differences in tests.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace dualrec {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelHyper {
  int dim = 64;
  int num_interests = 4;
  int routing_iters = 3;
  double tau = 0.1;
  // Ablations: drop the semantic term (z = 0) or the capsule term (o = h).
  bool no_sem = false;
  bool no_col = false;
  // Backpropagate through the routing iterations instead of treating the
  // routing weights as constants.
  bool routing_grad = false;

  void validate() const;
};

struct ModelParams {
  RowMat item_embeddings;   // N x d
  Mat capsule_transform;    // W, d x d
  Mat align_projection;     // W1, d x d
  Vec cluster_attn_weight;  // w, d
  double cluster_attn_bias = 0.0;
  ModelHyper hyper;

  static ModelParams initialize(int num_items, const ModelHyper& hyper,
                                uint64_t seed);
  int num_items() const { return static_cast<int>(item_embeddings.rows()); }
  int dim() const { return hyper.dim; }
  bool all_finite() const;
  bool operator==(const ModelParams& other) const;
};

// Same shapes as ModelParams; the item block is dense.
struct Gradients {
  RowMat item_embeddings;
  Mat capsule_transform;
  Mat align_projection;
  Vec cluster_attn_weight;
  double cluster_attn_bias = 0.0;

  explicit Gradients(const ModelParams& params);
  void set_zero();
  bool all_finite() const;
};

// e = |m|^2 / (1 + |m|^2) * m / |m|, with squash(0) = 0.
Vec squash(const Vec& m);

struct RoutingResult {
  Mat capsules;  // K x d, pre-squash
  Mat weights;   // L x K, rows sum to 1
  // Per-iteration weights, capsules and squashed capsules, kept for the
  // backward pass through routing.
  std::vector<Mat> iter_weights;
  std::vector<Mat> iter_capsules;
  std::vector<Mat> iter_squashed;
};

// Dynamic routing over `item_embeds` (L x d) starting from `init_logits`
// (L x K). Each of `iters` rounds takes a softmax over interests, forms
// m_k = sum_j b_jk W v_j, and (except after the last round) adds
// v_j^T W squash(m_k) to the logits.
RoutingResult capsule_forward(const Mat& item_embeds, const Mat& transform,
                              const Mat& init_logits, int iters);

Mat sample_routing_logits(int length, int num_interests, std::mt19937_64& rng);

struct ClusterEmbedding {
  Vec embedding;  // h
  Vec weights;    // softmax over members of w^T v + b
};

ClusterEmbedding semantic_cluster_embed(const Mat& member_embeds,
                                        const Vec& attn_weight, double attn_bias);

struct Alignment {
  Mat aligned;    // z, K x d
  Mat weights;    // K x F, rows sum to 1
  Mat projected;  // tanh(W1 h_f) per row, F x d
};

// Attention of each collaborative interest over the semantic clusters with
// scores m_k . tanh(W1 h_f). With no clusters, z is all zeros.
Alignment align(const Mat& capsules, const Mat& clusters, const Mat& projection);

Mat hybrid(const Mat& capsules, const Mat& aligned);

struct Readout {
  double score = 0.0;
  int interest = 0;
};

// max_k o_k . v, ties to the smaller k.
Readout readout_score(const Mat& interests, const Vec& item);

struct UserInput {
  std::vector<int> items;
  std::vector<std::vector<int>> clusters;  // positions into items
  Mat routing_init;                        // L x K
  // When set, used as routing weights instead of running the routing.
  std::optional<Mat> pinned_routing;
};

struct InterestState {
  RoutingResult routing;
  std::vector<ClusterEmbedding> clusters;
  Mat cluster_matrix;  // F x d
  Alignment alignment;
  Mat interests;       // o, rows are interests used for readout
};

InterestState forward_user(const ModelParams& params, const UserInput& input);

// Accumulates `weight` times the gradient of sum(d_interests . o) into grads.
void backward_user(const ModelParams& params, const UserInput& input,
                   const InterestState& state, const Mat& d_interests,
                   Gradients& grads, double weight = 1.0);

struct RecExample {
  UserInput input;
  int target = 0;
  // Sampled negatives; ignored when full_softmax is set.
  std::vector<int> negatives;
  bool full_softmax = false;
};

// -log softmax of the target's readout score among {target} + negatives
// (or the whole vocabulary). Adds weight * gradient when grads is non-null.
double rec_loss_example(const ModelParams& params, const RecExample& example,
                        const InterestState& state, Gradients* grads,
                        double weight = 1.0);

// Mean of rec_loss_example over the batch.
double rec_loss(const ModelParams& params, std::span<const RecExample> batch,
                Gradients* grads, double weight = 1.0);

struct SynthUser {
  std::vector<int> items;                  // distinct behaviors
  std::vector<std::vector<int>> clusters;  // positions into items
};

// Sum over anchors j and positives j* of
//   -log( exp(v_j.v_j*/tau) / sum_{v' shares no cluster with v_j} exp(v_j.v'/tau) ).
// Users with fewer than two clusters or no valid triple return 0.
double contrastive_user_loss(const ModelParams& params, const SynthUser& user,
                             Gradients* grads, double weight = 1.0);

// Mean of contrastive_user_loss over users (degenerate users count).
double contrastive_loss(const ModelParams& params, std::span<const SynthUser> users,
                        Gradients* grads, double weight = 1.0);

struct LossReport {
  double rec_loss = 0.0;
  double cst_loss = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  bool cst_evaluated = false;
};

LossReport total_loss(double rec, double cst, double lambda, bool cst_evaluated);

using LossFn = std::function<double(const ModelParams&, Gradients*)>;

// Max over all parameters of |a - n| / max(|a|, |n|, 1e-8), where a is the
// analytic gradient from `loss_fn` and n the central difference with step
// `eps`. Throws DivergenceError on a non-finite gradient.
double numeric_gradient_check(const LossFn& loss_fn, const ModelParams& params,
                              double eps = 1e-4);

// Binary checkpoint: header (schema version, d, K, N, R, tau, flags) and
// row-major parameter blocks. Round trips bit-exactly.
void save_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams load_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace dualrec
