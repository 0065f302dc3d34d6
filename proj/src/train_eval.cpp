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


#include "dualrec/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "dualrec/common.hpp"

namespace dualrec {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  Adam(const ModelParams& params, double lr, double weight_decay)
      : lr_(lr), weight_decay_(weight_decay), m_(params), v_(params) {}

  void step(ModelParams& params, Gradients& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    update(params.item_embeddings, grads.item_embeddings, m_.item_embeddings,
           v_.item_embeddings, c1, c2);
    update(params.capsule_transform, grads.capsule_transform,
           m_.capsule_transform, v_.capsule_transform, c1, c2);
    update(params.align_projection, grads.align_projection, m_.align_projection,
           v_.align_projection, c1, c2);
    update(params.cluster_attn_weight, grads.cluster_attn_weight,
           m_.cluster_attn_weight, v_.cluster_attn_weight, c1, c2);
    double g = grads.cluster_attn_bias + weight_decay_ * params.cluster_attn_bias;
    m_.cluster_attn_bias = kBeta1 * m_.cluster_attn_bias + (1 - kBeta1) * g;
    v_.cluster_attn_bias = kBeta2 * v_.cluster_attn_bias + (1 - kBeta2) * g * g;
    params.cluster_attn_bias -= lr_ * (m_.cluster_attn_bias / c1) /
                                (std::sqrt(v_.cluster_attn_bias / c2) + kEps);
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  template <typename P>
  void update(P& param, P& grad, P& m, P& v, double c1, double c2) {
    auto g = grad.array() + weight_decay_ * param.array();
    m.array() = kBeta1 * m.array() + (1 - kBeta1) * g;
    v.array() = kBeta2 * v.array() + (1 - kBeta2) * g.square();
    param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
  }

  double lr_;
  double weight_decay_;
  int64_t t_ = 0;
  Gradients m_;
  Gradients v_;
};

struct TrainingExample {
  int user;
  int length;  // history prefix length; target at position `length`
};

std::vector<TrainingExample> training_examples(const SplitSequences& splits) {
  std::vector<TrainingExample> out;
  for (size_t u = 0; u < splits.num_users(); ++u) {
    for (int t = 1; t < splits.bounds[u].train_end; ++t) {
      out.push_back({static_cast<int>(u), t});
    }
  }
  return out;
}

UserInput make_input(const TrainingData& data, int user, int length,
                     std::mt19937_64& rng, int num_interests) {
  UserInput input;
  const auto& seq = data.splits->truncated[user];
  input.items.assign(seq.begin(), seq.begin() + length);
  if (static_cast<size_t>(user) < data.user_clusters.size()) {
    input.clusters = restrict_clusters(data.user_clusters[user], length);
  }
  input.routing_init = sample_routing_logits(length, num_interests, rng);
  return input;
}

std::vector<int> top_n(const Vec& scores, int n) {
  std::vector<int> idx;
  idx.reserve(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (scores(i) != -std::numeric_limits<double>::infinity()) {
      idx.push_back(static_cast<int>(i));
    }
  }
  const auto keep = std::min<size_t>(idx.size(), static_cast<size_t>(n));
  std::partial_sort(idx.begin(), idx.begin() + keep, idx.end(), [&](int a, int b) {
    if (scores(a) != scores(b)) return scores(a) > scores(b);
    return a < b;
  });
  idx.resize(keep);
  return idx;
}

std::span<const int> scoring_history(const SplitSequences& splits, size_t user,
                                     EvalSplit split) {
  return split == EvalSplit::kTest ? splits.history(user) : splits.train(user);
}

MetricsReport finish_report(std::string name, std::span<const int> cutoffs,
                            std::vector<int> users,
                            std::vector<std::vector<UserMetrics>> per_user) {
  MetricsReport r;
  r.name = std::move(name);
  r.cutoffs.assign(cutoffs.begin(), cutoffs.end());
  r.users = std::move(users);
  r.per_user = std::move(per_user);
  for (const auto& rows : r.per_user) {
    UserMetrics mean;
    for (const auto& m : rows) {
      mean.recall += m.recall;
      mean.ndcg += m.ndcg;
      mean.hit += m.hit;
    }
    if (!rows.empty()) {
      const double n = static_cast<double>(rows.size());
      mean.recall /= n;
      mean.ndcg /= n;
      mean.hit /= n;
    }
    r.mean.push_back(mean);
  }
  return r;
}

void check_cutoffs(std::span<const int> cutoffs) {
  if (cutoffs.empty()) throw ConfigError("at least one cutoff required");
  for (int n : cutoffs) {
    if (n < 1) throw ConfigError("cutoffs must be >= 1");
  }
}

}  // namespace

std::string AblationFlags::run_name() const {
  std::string name;
  auto add = [&](bool on, const char* tag) {
    if (!on) return;
    if (!name.empty()) name += '+';
    name += tag;
  };
  add(no_sem, "no_sem");
  add(no_col, "no_col");
  add(no_com, "no_com");
  add(no_rep, "no_rep");
  return name.empty() ? "full" : name;
}

AblationFlags AblationFlags::parse(const std::string& text) {
  AblationFlags flags;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, text.find(',') != std::string::npos ? ',' : '+')) {
    if (token.empty() || token == "full" || token == "none") continue;
    if (token == "no_sem") flags.no_sem = true;
    else if (token == "no_col") flags.no_col = true;
    else if (token == "no_com") flags.no_com = true;
    else if (token == "no_rep") flags.no_rep = true;
    else throw ConfigError("unknown ablation '" + token + "'");
  }
  return flags;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (negatives < 1) throw ConfigError("negatives must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (eval_workers < 1) throw ConfigError("eval_workers must be >= 1");
  hyper().validate();
}

ModelHyper TrainConfig::hyper() const {
  ModelHyper h;
  h.dim = dim;
  h.num_interests = num_interests;
  h.routing_iters = routing_iters;
  h.tau = tau;
  h.no_sem = ablation.no_sem;
  h.no_col = ablation.no_col;
  h.routing_grad = routing_grad;
  return h;
}

std::vector<ClusterSets> clusters_by_user(
    std::span<const SemanticClustering> clusterings, const SplitSequences& splits) {
  std::vector<ClusterSets> out(splits.num_users());
  for (const auto& c : clusterings) {
    if (c.owner < 0 || static_cast<size_t>(c.owner) >= splits.num_users()) {
      throw FormatError("clustering owner " + std::to_string(c.owner) +
                        " is not a user");
    }
    const auto history = splits.history(c.owner);
    if (!std::equal(history.begin(), history.end(), c.items.begin(), c.items.end())) {
      throw FormatError("clustering for user " + std::to_string(c.owner) +
                        " does not match the user's history; re-run analyze");
    }
    auto& sets = out[c.owner];
    for (const auto& cl : c.clusters) sets.push_back(cl.members);
  }
  return out;
}

ClusterSets restrict_clusters(const ClusterSets& clusters, int limit) {
  ClusterSets out;
  for (const auto& cl : clusters) {
    std::vector<int> kept;
    for (int p : cl) {
      if (p < limit) kept.push_back(p);
    }
    if (!kept.empty()) out.push_back(std::move(kept));
  }
  return out;
}

std::vector<SynthUser> make_synth_users(std::span<const SemanticClustering> clusterings) {
  std::vector<SynthUser> out;
  out.reserve(clusterings.size());
  for (const auto& c : clusterings) {
    SynthUser u;
    u.items = c.items;
    for (const auto& cl : c.clusters) u.clusters.push_back(cl.members);
    out.push_back(std::move(u));
  }
  return out;
}

int64_t contrastive_period(double lambda) {
  if (!(lambda > 0.0)) return 0;
  return std::max<int64_t>(1, static_cast<int64_t>(std::floor(1.0 / lambda + 1e-9)));
}

TrainResult train(const TrainConfig& config, const TrainingData& data) {
  config.validate();
  if (data.splits == nullptr) throw ConfigError("training data has no splits");
  if (config.lambda == 0.0 && !data.synth_users.empty()) {
    spdlog::info("lambda is 0; synthesized users are ignored");
  }
  const auto start = Clock::now();
  const int num_items = data.num_items;
  const ModelHyper hyper = config.hyper();
  TrainResult result;
  result.params = ModelParams::initialize(num_items, hyper, mix_seed(config.seed, 1));
  ModelParams& params = result.params;
  Adam optimizer(params, config.lr, config.weight_decay);
  Gradients grads(params);
  std::mt19937_64 rng(mix_seed(config.seed, 2));

  auto examples = training_examples(*data.splits);
  if (examples.empty()) throw ConfigError("no training examples (train slices too short)");
  const bool full_softmax = config.negatives >= num_items - 1;
  const int64_t period = data.synth_users.empty() ? 0 : contrastive_period(config.lambda);
  const int cst_batch = config.cst_batch > 0 ? config.cst_batch : config.batch_size;

  const std::vector<int> valid_cutoff{20};
  double best_recall = -1.0;
  ModelParams best = params;
  int stale_epochs = 0;
  double train_seconds = 0.0;
  bool stop = false;

  for (int epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    const auto epoch_start = Clock::now();
    std::shuffle(examples.begin(), examples.end(), rng);
    for (size_t begin = 0; begin < examples.size(); begin += config.batch_size) {
      const size_t end = std::min(examples.size(), begin + config.batch_size);
      std::vector<RecExample> batch;
      batch.reserve(end - begin);
      for (size_t i = begin; i < end; ++i) {
        const auto& ex = examples[i];
        RecExample rec;
        rec.input = make_input(data, ex.user, ex.length, rng, hyper.num_interests);
        rec.target = data.splits->truncated[ex.user][ex.length];
        rec.full_softmax = full_softmax;
        if (!full_softmax) {
          std::uniform_int_distribution<int> pick(0, num_items - 2);
          rec.negatives.resize(config.negatives);
          for (auto& n : rec.negatives) {
            n = pick(rng);
            if (n >= rec.target) ++n;
          }
        }
        batch.push_back(std::move(rec));
      }

      ++result.iterations;
      grads.set_zero();
      const double rec = rec_loss(params, batch, &grads);
      double cst = 0.0;
      const bool due = period > 0 && result.iterations % period == 0;
      if (due) {
        // Uniform draws with replacement keep the batch size fixed however
        // many synthesized users were selected.
        std::vector<SynthUser> chosen;
        chosen.reserve(cst_batch);
        std::uniform_int_distribution<size_t> pick(0, data.synth_users.size() - 1);
        for (int i = 0; i < cst_batch; ++i) chosen.push_back(data.synth_users[pick(rng)]);
        cst = contrastive_loss(params, chosen, &grads, config.lambda);
        ++result.contrastive_updates;
      }
      const auto report = total_loss(rec, cst, config.lambda, due);
      if (!std::isfinite(report.total) || !grads.all_finite()) {
        throw DivergenceError("non-finite loss at iteration " +
                              std::to_string(result.iterations) + " (epoch " +
                              std::to_string(epoch) + "): rec=" + fmt_double(rec) +
                              " cst=" + fmt_double(cst));
      }
      optimizer.step(params, grads);
      result.trace.push_back({result.iterations, epoch, report});
      if (config.max_iterations > 0 && result.iterations >= config.max_iterations) {
        stop = true;
        break;
      }
    }
    train_seconds += seconds_since(epoch_start);
    result.epochs_run = epoch;

    const auto valid = evaluate(params, data, valid_cutoff, EvalSplit::kValidation,
                                mix_seed(config.seed, 3), config.eval_workers);
    const double recall = valid.users.empty() ? 0.0 : valid.mean[0].recall;
    result.valid_recall.push_back(recall);
    spdlog::debug("epoch {} valid recall@20 {:.4f}", epoch, recall);
    if (recall > best_recall) {
      best_recall = recall;
      best = params;
      result.best_epoch = epoch;
      stale_epochs = 0;
    } else if (++stale_epochs >= config.patience) {
      stop = true;
    }
  }
  result.params = std::move(best);
  result.train_seconds = train_seconds;
  result.seconds = seconds_since(start);
  return result;
}

UserMetrics rank_metrics(std::span<const int> ranked, std::span<const int> targets,
                         int n) {
  UserMetrics m;
  if (targets.empty()) return m;
  const std::unordered_set<int> target_set(targets.begin(), targets.end());
  const int depth = std::min<int>(n, static_cast<int>(ranked.size()));
  int hits = 0;
  double dcg = 0.0;
  for (int r = 0; r < depth; ++r) {
    if (target_set.contains(ranked[r])) {
      ++hits;
      dcg += 1.0 / std::log2(r + 2.0);
    }
  }
  double idcg = 0.0;
  const int ideal = std::min<int>(n, static_cast<int>(target_set.size()));
  for (int r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(r + 2.0);
  m.recall = static_cast<double>(hits) / static_cast<double>(target_set.size());
  m.hit = hits > 0 ? 1.0 : 0.0;
  m.ndcg = idcg > 0.0 ? dcg / idcg : 0.0;
  return m;
}

const UserMetrics& MetricsReport::at(int cutoff) const {
  for (size_t i = 0; i < cutoffs.size(); ++i) {
    if (cutoffs[i] == cutoff) return mean[i];
  }
  throw ConfigError("cutoff " + std::to_string(cutoff) + " was not evaluated");
}

std::vector<int> evaluation_targets(const SplitSequences& splits, size_t user,
                                    EvalSplit split) {
  const auto held_out = split == EvalSplit::kTest ? splits.test(user) : splits.valid(user);
  const auto history = scoring_history(splits, user, split);
  const std::unordered_set<int> seen(history.begin(), history.end());
  std::vector<int> targets;
  for (int item : held_out) {
    if (!seen.contains(item) &&
        std::find(targets.begin(), targets.end(), item) == targets.end()) {
      targets.push_back(item);
    }
  }
  return targets;
}

MetricsReport evaluate(const ModelParams& params, const TrainingData& data,
                       std::span<const int> cutoffs, EvalSplit split,
                       uint64_t seed, int workers) {
  check_cutoffs(cutoffs);
  const auto start = Clock::now();
  const auto& splits = *data.splits;
  std::vector<int> users;
  for (size_t u = 0; u < splits.num_users(); ++u) {
    if (!scoring_history(splits, u, split).empty() &&
        !evaluation_targets(splits, u, split).empty()) {
      users.push_back(static_cast<int>(u));
    }
  }
  const int depth = *std::max_element(cutoffs.begin(), cutoffs.end());
  std::vector<std::vector<UserMetrics>> per_user(
      cutoffs.size(), std::vector<UserMetrics>(users.size()));

  auto work = [&](size_t first, size_t stride) {
    for (size_t slot = first; slot < users.size(); slot += stride) {
      const int u = users[slot];
      const auto history = scoring_history(splits, u, split);
      std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(u)));
      const auto input = make_input(data, u, static_cast<int>(history.size()), rng,
                                    params.hyper.num_interests);
      const auto state = forward_user(params, input);
      const Mat all = state.interests * params.item_embeddings.transpose();
      Vec scores = all.colwise().maxCoeff().transpose();
      for (int item : history) scores(item) = -std::numeric_limits<double>::infinity();
      const auto ranked = top_n(scores, depth);
      const auto targets = evaluation_targets(splits, u, split);
      // Leakage guard: nothing the model was conditioned on may be a target.
      for (int t : targets) {
        if (std::find(history.begin(), history.end(), t) != history.end()) {
          throw Error("evaluation target leaked into scoring history");
        }
      }
      for (size_t c = 0; c < cutoffs.size(); ++c) {
        per_user[c][slot] = rank_metrics(ranked, targets, cutoffs[c]);
      }
    }
  };
  const size_t threads = std::max<size_t>(
      1, std::min<size_t>(static_cast<size_t>(workers), users.size()));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  auto report = finish_report("model", cutoffs, std::move(users), std::move(per_user));
  report.seconds = seconds_since(start);
  return report;
}

MetricsReport popularity_baseline(const SplitSequences& splits, int num_items,
                                  std::span<const int> cutoffs, EvalSplit split) {
  check_cutoffs(cutoffs);
  const auto start = Clock::now();
  Vec counts = Vec::Zero(num_items);
  size_t total = 0;
  for (size_t u = 0; u < splits.num_users(); ++u) {
    for (int item : splits.train(u)) {
      counts(item) += 1.0;
      ++total;
    }
  }
  if (total == 0) throw ConfigError("popularity baseline needs training interactions");
  const int depth = *std::max_element(cutoffs.begin(), cutoffs.end());
  std::vector<int> users;
  std::vector<std::vector<UserMetrics>> per_user(cutoffs.size());
  for (size_t u = 0; u < splits.num_users(); ++u) {
    const auto targets = evaluation_targets(splits, u, split);
    if (targets.empty()) continue;
    Vec scores = counts;
    for (int item : scoring_history(splits, u, split)) {
      scores(item) = -std::numeric_limits<double>::infinity();
    }
    const auto ranked = top_n(scores, depth);
    users.push_back(static_cast<int>(u));
    for (size_t c = 0; c < cutoffs.size(); ++c) {
      per_user[c].push_back(rank_metrics(ranked, targets, cutoffs[c]));
    }
  }
  auto report = finish_report("pop", cutoffs, std::move(users), std::move(per_user));
  report.seconds = seconds_since(start);
  return report;
}

Mat interest_heatmap(const ModelParams& params, const TrainingData& data,
                     int user, uint64_t seed) {
  const auto& splits = *data.splits;
  if (user < 0 || static_cast<size_t>(user) >= splits.num_users()) {
    throw ConfigError("heatmap user out of range");
  }
  const auto history = splits.history(user);
  if (history.empty()) throw ConfigError("heatmap user has no history");
  std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(user)));
  const auto input = make_input(data, user, static_cast<int>(history.size()), rng,
                                params.hyper.num_interests);
  const auto state = forward_user(params, input);
  const Mat& o = state.interests;
  Mat grid(o.rows(), static_cast<Eigen::Index>(history.size()));
  for (Eigen::Index k = 0; k < o.rows(); ++k) {
    for (size_t j = 0; j < history.size(); ++j) {
      const auto v = params.item_embeddings.row(history[j]);
      const double denom = o.row(k).norm() * v.norm();
      grid(k, static_cast<Eigen::Index>(j)) = denom > 0.0 ? o.row(k).dot(v) / denom : 0.0;
    }
  }
  return grid;
}

double mean_row_correlation(const Mat& grid) {
  const auto rows = grid.rows();
  if (rows < 2) return 0.0;
  Mat centered = grid;
  std::vector<double> norms(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    centered.row(r).array() -= grid.row(r).mean();
    norms[r] = centered.row(r).norm();
  }
  double total = 0.0;
  int pairs = 0;
  for (Eigen::Index a = 0; a < rows; ++a) {
    for (Eigen::Index b = a + 1; b < rows; ++b) {
      double corr = 0.0;
      if (norms[a] > 1e-12 && norms[b] > 1e-12) {
        corr = centered.row(a).dot(centered.row(b)) / (norms[a] * norms[b]);
      } else if (norms[a] <= 1e-12 && norms[b] <= 1e-12) {
        corr = 1.0;
      }
      total += corr;
      ++pairs;
    }
  }
  return total / pairs;
}

ClusterGeometry cluster_geometry(const ModelParams& params,
                                 std::span<const SynthUser> users) {
  ClusterGeometry g;
  const auto& e = params.item_embeddings;
  for (const auto& user : users) {
    const int n = static_cast<int>(user.items.size());
    std::vector<std::vector<int>> member_of(n);
    for (size_t c = 0; c < user.clusters.size(); ++c) {
      for (int p : user.clusters[c]) member_of[p].push_back(static_cast<int>(c));
    }
    for (int a = 0; a < n; ++a) {
      if (member_of[a].empty()) continue;
      for (int b = a + 1; b < n; ++b) {
        if (member_of[b].empty() || user.items[a] == user.items[b]) continue;
        const auto va = e.row(user.items[a]);
        const auto vb = e.row(user.items[b]);
        const double denom = va.norm() * vb.norm();
        const double cos = denom > 0.0 ? va.dot(vb) / denom : 0.0;
        bool shared = false;
        for (int c : member_of[a]) {
          shared = shared || std::find(member_of[b].begin(), member_of[b].end(), c) !=
                                 member_of[b].end();
        }
        if (shared) {
          g.intra += cos;
          ++g.intra_pairs;
        } else {
          g.inter += cos;
          ++g.inter_pairs;
        }
      }
    }
  }
  if (g.intra_pairs > 0) g.intra /= static_cast<double>(g.intra_pairs);
  if (g.inter_pairs > 0) g.inter /= static_cast<double>(g.inter_pairs);
  return g;
}

void write_loss_trace(std::ostream& out, std::span<const LossRecord> trace) {
  out << "iteration\tepoch\trec_loss\tcst_loss\ttotal\tlambda\tcst_evaluated\n";
  for (const auto& r : trace) {
    out << r.iteration << '\t' << r.epoch << '\t' << fmt_double(r.report.rec_loss)
        << '\t' << fmt_double(r.report.cst_loss) << '\t'
        << fmt_double(r.report.total) << '\t' << fmt_double(r.report.lambda) << '\t'
        << (r.report.cst_evaluated ? 1 : 0) << '\n';
  }
}

void write_metric_records(std::ostream& out, const MetricsReport& report) {
  out << "user\tmetric\tcutoff\tvalue\n";
  for (size_t slot = 0; slot < report.users.size(); ++slot) {
    for (size_t c = 0; c < report.cutoffs.size(); ++c) {
      const auto& m = report.per_user[c][slot];
      const int n = report.cutoffs[c];
      const int u = report.users[slot];
      out << u << "\trecall\t" << n << '\t' << fmt_double(m.recall) << '\n';
      out << u << "\tndcg\t" << n << '\t' << fmt_double(m.ndcg) << '\n';
      out << u << "\thit\t" << n << '\t' << fmt_double(m.hit) << '\n';
    }
  }
}

void write_heatmap(std::ostream& out, const Mat& grid) {
  for (Eigen::Index r = 0; r < grid.rows(); ++r) {
    for (Eigen::Index c = 0; c < grid.cols(); ++c) {
      out << (c ? "\t" : "") << fmt_double(grid(r, c));
    }
    out << '\n';
  }
}

}  // namespace dualrec
