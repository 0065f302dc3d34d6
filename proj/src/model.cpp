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


#include "dualrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "dualrec/common.hpp"

namespace dualrec {
namespace {

constexpr char kCheckpointMagic[8] = {'D', 'R', 'C', 'K', 'P', 'T', '0', '1'};
constexpr uint32_t kCheckpointSchema = 1;

// Row-wise softmax with max subtraction.
Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

// Given y = softmax(x) per row and dy, returns dx.
Mat softmax_rows_backward(const Mat& y, const Mat& dy) {
  Mat dx = y.cwiseProduct(dy);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double dot = dx.row(r).sum();
    dx.row(r) -= dot * y.row(r);
  }
  return dx;
}

// Gradient of squash at m applied to de.
Vec squash_backward(const Vec& m, const Vec& de) {
  const double n2 = m.squaredNorm();
  const double n = std::sqrt(n2);
  if (n < 1e-12) return Vec::Zero(m.size());
  const double phi = n / (1.0 + n2);
  const double dphi = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
  return phi * de + (dphi / n) * m.dot(de) * m;
}

Mat gather_rows(const RowMat& table, std::span<const int> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), table.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(i) = table.row(rows[i]);
  return out;
}

double logsumexp(const Vec& x) {
  const double mx = x.maxCoeff();
  return mx + std::log((x.array() - mx).exp().sum());
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("checkpoint truncated");
  return v;
}

void write_block(std::ostream& out, const double* data, size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
}

void read_block(std::istream& in, double* data, size_t count) {
  in.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw FormatError("checkpoint truncated");
}

}  // namespace

void ModelHyper::validate() const {
  if (dim < 1) throw ConfigError("embedding dimension must be >= 1");
  if (num_interests < 1) throw ConfigError("number of interests must be >= 1");
  if (routing_iters < 1) throw ConfigError("routing iterations must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
}

ModelParams ModelParams::initialize(int num_items, const ModelHyper& hyper,
                                    uint64_t seed) {
  hyper.validate();
  if (num_items < 1) throw ConfigError("model needs at least one item");
  std::mt19937_64 rng(seed);
  const int d = hyper.dim;
  std::normal_distribution<double> embed(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  auto fill = [&](auto& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = embed(rng);
    }
  };
  ModelParams p;
  p.hyper = hyper;
  p.item_embeddings.resize(num_items, d);
  p.capsule_transform.resize(d, d);
  p.align_projection.resize(d, d);
  fill(p.item_embeddings);
  fill(p.capsule_transform);
  fill(p.align_projection);
  p.cluster_attn_weight = Vec::Zero(d);
  p.cluster_attn_bias = 0.0;
  return p;
}

bool ModelParams::all_finite() const {
  return item_embeddings.allFinite() && capsule_transform.allFinite() &&
         align_projection.allFinite() && cluster_attn_weight.allFinite() &&
         std::isfinite(cluster_attn_bias);
}

bool ModelParams::operator==(const ModelParams& o) const {
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
  };
  return hyper.dim == o.hyper.dim && hyper.num_interests == o.hyper.num_interests &&
         hyper.routing_iters == o.hyper.routing_iters && hyper.tau == o.hyper.tau &&
         hyper.no_sem == o.hyper.no_sem && hyper.no_col == o.hyper.no_col &&
         hyper.routing_grad == o.hyper.routing_grad &&
         same(item_embeddings, o.item_embeddings) &&
         same(capsule_transform, o.capsule_transform) &&
         same(align_projection, o.align_projection) &&
         same(cluster_attn_weight, o.cluster_attn_weight) &&
         std::memcmp(&cluster_attn_bias, &o.cluster_attn_bias, sizeof(double)) == 0;
}

Gradients::Gradients(const ModelParams& params)
    : item_embeddings(RowMat::Zero(params.item_embeddings.rows(),
                                   params.item_embeddings.cols())),
      capsule_transform(Mat::Zero(params.dim(), params.dim())),
      align_projection(Mat::Zero(params.dim(), params.dim())),
      cluster_attn_weight(Vec::Zero(params.dim())) {}

void Gradients::set_zero() {
  item_embeddings.setZero();
  capsule_transform.setZero();
  align_projection.setZero();
  cluster_attn_weight.setZero();
  cluster_attn_bias = 0.0;
}

bool Gradients::all_finite() const {
  return item_embeddings.allFinite() && capsule_transform.allFinite() &&
         align_projection.allFinite() && cluster_attn_weight.allFinite() &&
         std::isfinite(cluster_attn_bias);
}

Vec squash(const Vec& m) {
  const double n2 = m.squaredNorm();
  if (n2 == 0.0) return Vec::Zero(m.size());
  const double n = std::sqrt(n2);
  return (n2 / (1.0 + n2) / n) * m;
}

Mat sample_routing_logits(int length, int num_interests, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat g(length, num_interests);
  for (int j = 0; j < length; ++j) {
    for (int k = 0; k < num_interests; ++k) g(j, k) = normal(rng);
  }
  return g;
}

RoutingResult capsule_forward(const Mat& item_embeds, const Mat& transform,
                              const Mat& init_logits, int iters) {
  if (iters < 1) throw ConfigError("routing iterations must be >= 1");
  const Mat projected = item_embeds * transform.transpose();  // rows W v_j
  const Mat logit_basis = item_embeds * transform;            // rows v_j^T W
  Mat logits = init_logits;
  RoutingResult out;
  for (int r = 0; r < iters; ++r) {
    Mat weights = softmax_rows(logits);
    Mat capsules = weights.transpose() * projected;
    out.iter_weights.push_back(weights);
    out.iter_capsules.push_back(capsules);
    if (r + 1 < iters) {
      Mat squashed(capsules.rows(), capsules.cols());
      for (Eigen::Index k = 0; k < capsules.rows(); ++k) {
        squashed.row(k) = squash(capsules.row(k).transpose()).transpose();
      }
      logits += logit_basis * squashed.transpose();
      out.iter_squashed.push_back(std::move(squashed));
    }
  }
  out.weights = out.iter_weights.back();
  out.capsules = out.iter_capsules.back();
  return out;
}

ClusterEmbedding semantic_cluster_embed(const Mat& member_embeds,
                                        const Vec& attn_weight, double attn_bias) {
  const Vec logits = (member_embeds * attn_weight).array() + attn_bias;
  const double mx = logits.maxCoeff();
  Vec weights = (logits.array() - mx).exp();
  weights /= weights.sum();
  return ClusterEmbedding{member_embeds.transpose() * weights, weights};
}

Alignment align(const Mat& capsules, const Mat& clusters, const Mat& projection) {
  Alignment out;
  if (clusters.rows() == 0) {
    out.aligned = Mat::Zero(capsules.rows(), capsules.cols());
    out.weights = Mat(capsules.rows(), 0);
    out.projected = Mat(0, capsules.cols());
    return out;
  }
  out.projected = (clusters * projection.transpose()).array().tanh();
  out.weights = softmax_rows(capsules * out.projected.transpose());
  out.aligned = out.weights * clusters;
  return out;
}

Mat hybrid(const Mat& capsules, const Mat& aligned) { return capsules + aligned; }

Readout readout_score(const Mat& interests, const Vec& item) {
  Readout best{-std::numeric_limits<double>::infinity(), 0};
  for (Eigen::Index k = 0; k < interests.rows(); ++k) {
    const double s = interests.row(k).dot(item);
    if (s > best.score) best = {s, static_cast<int>(k)};
  }
  return best;
}

InterestState forward_user(const ModelParams& params, const UserInput& input) {
  const auto& hyper = params.hyper;
  const int d = params.dim();
  InterestState state;
  const Mat item_embeds = gather_rows(params.item_embeddings, input.items);

  const bool use_clusters = !hyper.no_sem || hyper.no_col;
  if (use_clusters) {
    state.cluster_matrix.resize(static_cast<Eigen::Index>(input.clusters.size()), d);
    for (size_t f = 0; f < input.clusters.size(); ++f) {
      const auto& members = input.clusters[f];
      Mat member_embeds(static_cast<Eigen::Index>(members.size()), d);
      for (size_t i = 0; i < members.size(); ++i) {
        member_embeds.row(i) = item_embeds.row(members[i]);
      }
      state.clusters.push_back(semantic_cluster_embed(
          member_embeds, params.cluster_attn_weight, params.cluster_attn_bias));
      state.cluster_matrix.row(f) = state.clusters.back().embedding.transpose();
    }
  } else {
    state.cluster_matrix.resize(0, d);
  }

  if (hyper.no_col) {
    // Semantic-only interests: o_k = h_k for the first min(K, F) clusters.
    const auto keep = std::min<Eigen::Index>(hyper.num_interests,
                                             state.cluster_matrix.rows());
    state.interests = keep > 0 ? Mat(state.cluster_matrix.topRows(keep))
                               : Mat(Mat::Zero(1, d));
    return state;
  }

  if (input.pinned_routing) {
    state.routing.weights = *input.pinned_routing;
    state.routing.capsules = state.routing.weights.transpose() *
                             (item_embeds * params.capsule_transform.transpose());
  } else {
    state.routing = capsule_forward(item_embeds, params.capsule_transform,
                                    input.routing_init, hyper.routing_iters);
  }

  if (hyper.no_sem) {
    state.interests = state.routing.capsules;
  } else {
    state.alignment = align(state.routing.capsules, state.cluster_matrix,
                            params.align_projection);
    state.interests = hybrid(state.routing.capsules, state.alignment.aligned);
  }
  return state;
}

void backward_user(const ModelParams& params, const UserInput& input,
                   const InterestState& state, const Mat& d_interests,
                   Gradients& grads, double weight) {
  const auto& hyper = params.hyper;
  const int d = params.dim();
  const Eigen::Index num_clusters = state.cluster_matrix.rows();
  Mat d_clusters = Mat::Zero(num_clusters, d);

  if (hyper.no_col) {
    if (num_clusters == 0) return;
    d_clusters.topRows(d_interests.rows()) += weight * d_interests;
  } else {
    Mat d_caps = weight * d_interests;
    if (!hyper.no_sem && num_clusters > 0) {
      const auto& al = state.alignment;
      const Mat d_aligned = weight * d_interests;
      const Mat d_weights = d_aligned * state.cluster_matrix.transpose();  // K x F
      d_clusters += al.weights.transpose() * d_aligned;
      const Mat d_scores = softmax_rows_backward(al.weights, d_weights);
      d_caps += d_scores * al.projected;
      const Mat d_proj = d_scores.transpose() * state.routing.capsules;  // F x d
      const Mat d_pre =
          d_proj.cwiseProduct((1.0 - al.projected.array().square()).matrix());
      d_clusters += d_pre * params.align_projection;
      grads.align_projection += d_pre.transpose() * state.cluster_matrix;
    }

    // Capsule layer.
    const Mat item_embeds = gather_rows(params.item_embeddings, input.items);
    const Mat& W = params.capsule_transform;
    const auto L = item_embeds.rows();
    Mat d_projected = Mat::Zero(L, d);   // d(W v_j)
    Mat d_logit_basis = Mat::Zero(L, d); // d(v_j^T W)
    const bool through_routing = hyper.routing_grad && !input.pinned_routing;
    if (!through_routing) {
      d_projected = state.routing.weights * d_caps;
    } else {
      const Mat projected = item_embeds * W.transpose();
      const Mat logit_basis = item_embeds * W;
      const auto& rr = state.routing;
      const int iters = static_cast<int>(rr.iter_weights.size());
      Mat d_logits = Mat::Zero(L, hyper.num_interests);
      Mat d_m = d_caps;
      for (int r = iters - 1; r >= 0; --r) {
        const Mat& b = rr.iter_weights[r];
        d_projected += b * d_m;
        const Mat d_b = projected * d_m.transpose();  // L x K
        d_logits += softmax_rows_backward(b, d_b);
        if (r == 0) break;
        // logits^r = logits^{r-1} + logit_basis * squashed^{r-1}^T
        const Mat& e = rr.iter_squashed[r - 1];
        d_logit_basis += d_logits * e;
        const Mat d_e = d_logits.transpose() * logit_basis;  // K x d
        const Mat& m_prev = rr.iter_capsules[r - 1];
        d_m.resize(m_prev.rows(), d);
        for (Eigen::Index k = 0; k < m_prev.rows(); ++k) {
          d_m.row(k) = squash_backward(m_prev.row(k).transpose(),
                                       d_e.row(k).transpose()).transpose();
        }
      }
    }
    const Mat d_items = d_projected * W + d_logit_basis * W.transpose();
    grads.capsule_transform +=
        d_projected.transpose() * item_embeds + item_embeds.transpose() * d_logit_basis;
    for (Eigen::Index j = 0; j < L; ++j) {
      grads.item_embeddings.row(input.items[j]) += d_items.row(j);
    }
  }

  // Attention pooling inside each cluster.
  for (Eigen::Index f = 0; f < num_clusters; ++f) {
    const Vec dh = d_clusters.row(f).transpose();
    if (dh.isZero(0.0)) continue;
    const auto& cl = state.clusters[f];
    const auto& members = input.clusters[f];
    Vec d_alpha(static_cast<Eigen::Index>(members.size()));
    for (size_t i = 0; i < members.size(); ++i) {
      d_alpha(i) = params.item_embeddings.row(input.items[members[i]]).dot(dh);
    }
    const Vec d_logit =
        cl.weights.cwiseProduct((d_alpha.array() - cl.weights.dot(d_alpha)).matrix());
    for (size_t i = 0; i < members.size(); ++i) {
      const int item = input.items[members[i]];
      grads.item_embeddings.row(item) +=
          cl.weights(i) * dh.transpose() +
          d_logit(i) * params.cluster_attn_weight.transpose();
      grads.cluster_attn_weight +=
          d_logit(i) * params.item_embeddings.row(item).transpose();
    }
    grads.cluster_attn_bias += d_logit.sum();
  }
}

double rec_loss_example(const ModelParams& params, const RecExample& example,
                        const InterestState& state, Gradients* grads,
                        double weight) {
  const Mat& o = state.interests;
  std::vector<int> candidates;
  int target_slot = 0;
  if (example.full_softmax) {
    target_slot = example.target;
  } else {
    candidates.reserve(example.negatives.size() + 1);
    candidates.push_back(example.target);
    candidates.insert(candidates.end(), example.negatives.begin(),
                      example.negatives.end());
  }
  const Mat scores_all =
      example.full_softmax
          ? Mat(o * params.item_embeddings.transpose())
          : Mat(o * gather_rows(params.item_embeddings, candidates).transpose());
  const auto count = scores_all.cols();
  Vec scores(count);
  std::vector<int> winner(static_cast<size_t>(count));
  for (Eigen::Index c = 0; c < count; ++c) {
    Eigen::Index k = 0;
    scores(c) = scores_all.col(c).maxCoeff(&k);
    winner[c] = static_cast<int>(k);
  }
  const double lse = logsumexp(scores);
  const double loss = lse - scores(target_slot);
  if (grads == nullptr) return loss;

  Vec d_scores = (scores.array() - lse).exp();
  d_scores(target_slot) -= 1.0;
  Mat d_o = Mat::Zero(o.rows(), o.cols());
  for (Eigen::Index c = 0; c < count; ++c) {
    const int item = example.full_softmax ? static_cast<int>(c) : candidates[c];
    const double g = d_scores(c);
    d_o.row(winner[c]) += g * params.item_embeddings.row(item);
    grads->item_embeddings.row(item) += (weight * g) * o.row(winner[c]);
  }
  backward_user(params, example.input, state, d_o, *grads, weight);
  return loss;
}

double rec_loss(const ModelParams& params, std::span<const RecExample> batch,
                Gradients* grads, double weight) {
  if (batch.empty()) return 0.0;
  const double scale = weight / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) {
    const auto state = forward_user(params, ex.input);
    total += rec_loss_example(params, ex, state, grads, scale);
  }
  return total / static_cast<double>(batch.size());
}

double contrastive_user_loss(const ModelParams& params, const SynthUser& user,
                             Gradients* grads, double weight) {
  const auto n = static_cast<Eigen::Index>(user.items.size());
  if (user.clusters.size() < 2 || n < 3) return 0.0;
  // shares(p, q): p and q are in a common cluster.
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> shares =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
  std::vector<char> assigned(static_cast<size_t>(n), 0);
  for (const auto& cl : user.clusters) {
    for (int p : cl) {
      assigned[p] = 1;
      for (int q : cl) shares(p, q) = true;
    }
  }
  const Mat embeds = gather_rows(params.item_embeddings, user.items);
  const double inv_tau = 1.0 / params.hyper.tau;
  const Mat sims = (embeds * embeds.transpose()) * inv_tau;
  Mat d_sims = Mat::Zero(n, n);
  double loss = 0.0;
  bool any_triple = false;
  std::vector<int> positives, negatives;
  for (Eigen::Index p = 0; p < n; ++p) {
    if (!assigned[p]) continue;
    positives.clear();
    negatives.clear();
    for (Eigen::Index q = 0; q < n; ++q) {
      if (q == p || !assigned[q]) continue;
      (shares(p, q) ? positives : negatives).push_back(static_cast<int>(q));
    }
    if (positives.empty() || negatives.empty()) continue;
    any_triple = true;
    Vec neg(static_cast<Eigen::Index>(negatives.size()));
    for (size_t i = 0; i < negatives.size(); ++i) neg(i) = sims(p, negatives[i]);
    const double lse = logsumexp(neg);
    const double np = static_cast<double>(positives.size());
    loss += np * lse;
    for (int q : positives) loss -= sims(p, q);
    if (grads != nullptr) {
      const Vec pi = (neg.array() - lse).exp();
      for (size_t i = 0; i < negatives.size(); ++i) d_sims(p, negatives[i]) += np * pi(i);
      for (int q : positives) d_sims(p, q) -= 1.0;
    }
  }
  if (grads != nullptr && any_triple) {
    const Mat d_embeds = (weight * inv_tau) * ((d_sims + d_sims.transpose()) * embeds);
    for (Eigen::Index i = 0; i < n; ++i) {
      grads->item_embeddings.row(user.items[i]) += d_embeds.row(i);
    }
  }
  return loss;
}

double contrastive_loss(const ModelParams& params, std::span<const SynthUser> users,
                        Gradients* grads, double weight) {
  if (users.empty()) return 0.0;
  const double scale = weight / static_cast<double>(users.size());
  double total = 0.0;
  for (const auto& u : users) total += contrastive_user_loss(params, u, grads, scale);
  return total / static_cast<double>(users.size());
}

LossReport total_loss(double rec, double cst, double lambda, bool cst_evaluated) {
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  LossReport r;
  r.rec_loss = rec;
  r.cst_loss = cst;
  r.lambda = lambda;
  r.cst_evaluated = cst_evaluated;
  r.total = cst_evaluated ? rec + lambda * cst : rec;
  return r;
}

double numeric_gradient_check(const LossFn& loss_fn, const ModelParams& params,
                              double eps) {
  Gradients analytic(params);
  loss_fn(params, &analytic);
  if (!analytic.all_finite()) throw DivergenceError("non-finite analytic gradient");

  double worst = 0.0;
  ModelParams probe = params;
  auto check = [&](double& slot, double a) {
    const double saved = slot;
    slot = saved + eps;
    const double up = loss_fn(probe, nullptr);
    slot = saved - eps;
    const double down = loss_fn(probe, nullptr);
    slot = saved;
    const double numeric = (up - down) / (2.0 * eps);
    if (!std::isfinite(numeric)) throw DivergenceError("non-finite loss in gradient check");
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  };
  for (Eigen::Index r = 0; r < probe.item_embeddings.rows(); ++r) {
    for (Eigen::Index c = 0; c < probe.item_embeddings.cols(); ++c) {
      check(probe.item_embeddings(r, c), analytic.item_embeddings(r, c));
    }
  }
  for (Eigen::Index r = 0; r < probe.capsule_transform.rows(); ++r) {
    for (Eigen::Index c = 0; c < probe.capsule_transform.cols(); ++c) {
      check(probe.capsule_transform(r, c), analytic.capsule_transform(r, c));
      check(probe.align_projection(r, c), analytic.align_projection(r, c));
    }
  }
  for (Eigen::Index i = 0; i < probe.cluster_attn_weight.size(); ++i) {
    check(probe.cluster_attn_weight(i), analytic.cluster_attn_weight(i));
  }
  check(probe.cluster_attn_bias, analytic.cluster_attn_bias);
  return worst;
}

void save_checkpoint(std::ostream& out, const ModelParams& p) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod<uint32_t>(out, kCheckpointSchema);
  write_pod<uint32_t>(out, static_cast<uint32_t>(p.hyper.dim));
  write_pod<uint32_t>(out, static_cast<uint32_t>(p.hyper.num_interests));
  write_pod<uint32_t>(out, static_cast<uint32_t>(p.num_items()));
  write_pod<uint32_t>(out, static_cast<uint32_t>(p.hyper.routing_iters));
  write_pod<double>(out, p.hyper.tau);
  const uint32_t flags = (p.hyper.no_sem ? 1u : 0u) | (p.hyper.no_col ? 2u : 0u) |
                         (p.hyper.routing_grad ? 4u : 0u);
  write_pod<uint32_t>(out, flags);
  write_block(out, p.item_embeddings.data(), p.item_embeddings.size());
  const RowMat w = p.capsule_transform;
  const RowMat w1 = p.align_projection;
  write_block(out, w.data(), w.size());
  write_block(out, w1.data(), w1.size());
  write_block(out, p.cluster_attn_weight.data(), p.cluster_attn_weight.size());
  write_pod<double>(out, p.cluster_attn_bias);
  if (!out) throw Error("failed to write checkpoint");
}

ModelParams load_checkpoint(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("not a checkpoint file");
  }
  if (read_pod<uint32_t>(in) != kCheckpointSchema) {
    throw FormatError("unsupported checkpoint schema version");
  }
  ModelParams p;
  p.hyper.dim = static_cast<int>(read_pod<uint32_t>(in));
  p.hyper.num_interests = static_cast<int>(read_pod<uint32_t>(in));
  const auto n = static_cast<int>(read_pod<uint32_t>(in));
  p.hyper.routing_iters = static_cast<int>(read_pod<uint32_t>(in));
  p.hyper.tau = read_pod<double>(in);
  const auto flags = read_pod<uint32_t>(in);
  p.hyper.no_sem = flags & 1u;
  p.hyper.no_col = flags & 2u;
  p.hyper.routing_grad = flags & 4u;
  p.hyper.validate();
  const int d = p.hyper.dim;
  p.item_embeddings.resize(n, d);
  read_block(in, p.item_embeddings.data(), p.item_embeddings.size());
  RowMat w(d, d), w1(d, d);
  read_block(in, w.data(), w.size());
  read_block(in, w1.data(), w1.size());
  p.capsule_transform = w;
  p.align_projection = w1;
  p.cluster_attn_weight.resize(d);
  read_block(in, p.cluster_attn_weight.data(), d);
  p.cluster_attn_bias = read_pod<double>(in);
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  save_checkpoint(out, params);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace dualrec
