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

#include <array>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "dualrec/common.hpp"
#include "dualrec/model.hpp"

using namespace dualrec;

namespace {

ModelParams tiny_params(int num_items, int dim, int k, uint64_t seed, bool no_sem = false) {
  ModelHyper hyper;
  hyper.dim = dim;
  hyper.num_interests = k;
  hyper.routing_iters = 3;
  hyper.tau = 0.5;
  hyper.no_sem = no_sem;
  auto p = ModelParams::initialize(num_items, hyper, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> g(0.0, 0.3);
  for (Eigen::Index i = 0; i < p.cluster_attn_weight.size(); ++i) p.cluster_attn_weight(i) = g(rng);
  p.cluster_attn_bias = 0.1;
  return p;
}

UserInput tiny_input(int k, uint64_t seed) {
  UserInput in;
  in.items = {0, 3, 5, 1, 7, 2};
  in.clusters = {{0, 2, 4}, {1, 3, 5}};
  std::mt19937_64 rng(seed);
  in.routing_init = sample_routing_logits(static_cast<int>(in.items.size()), k, rng);
  return in;
}

Mat rows2(std::array<double, 2> a, std::array<double, 2> b) {
  Mat m(2, 2);
  m << a[0], a[1], b[0], b[1];
  return m;
}

}  // namespace

TEST_CASE("squash values") {
  CHECK(squash(Vec::Zero(3)).norm() == 0.0);
  Vec unit(2);
  unit << 0.6, 0.8;
  CHECK((squash(unit) - 0.5 * unit).norm() < 1e-15);
  Vec three(3);
  three << 1.0, 2.0, 2.0;
  CHECK(squash(three).norm() == doctest::Approx(0.9));
  double previous = 0.0;
  for (double scale = 1e-3; scale < 1e3; scale *= 1.7) {
    const double n = squash(scale * unit).norm();
    CHECK(n < 1.0);
    CHECK(n > previous);
    previous = n;
  }
}

TEST_CASE("routing with equal logits is uniform") {
  Mat v(3, 2);
  v << 1, 0, 0, 1, 1, 1;
  const auto r = capsule_forward(v, Mat::Identity(2, 2), Mat::Zero(3, 4), 1);
  for (Eigen::Index j = 0; j < 3; ++j) {
    for (Eigen::Index k = 0; k < 4; ++k) CHECK(r.weights(j, k) == doctest::Approx(0.25));
  }
}

TEST_CASE("routing with one capsule") {
  Mat v(3, 2);
  v << 1, 0, 0, 1, 1, 1;
  Mat w(2, 2);
  w << 0.5, -1.0, 2.0, 0.3;
  Mat init(3, 1);
  init << 0.4, -2.0, 1.0;
  const auto r = capsule_forward(v, w, init, 3);
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(r.weights(j, 0) == 1.0);
  const Vec expected = w * v.colwise().sum().transpose();
  CHECK((r.capsules.row(0).transpose() - expected).norm() < 1e-12);
}

TEST_CASE("routing matches a hand trace") {
  const double v[2][2] = {{1.0, 0.5}, {-0.5, 1.0}};
  double g[2][2] = {{0.3, -0.2}, {0.1, 0.5}};
  double m[2][2] = {};
  for (int r = 0; r < 3; ++r) {
    double b[2][2];
    for (int j = 0; j < 2; ++j) {
      const double e0 = std::exp(g[j][0]), e1 = std::exp(g[j][1]);
      b[j][0] = e0 / (e0 + e1);
      b[j][1] = e1 / (e0 + e1);
    }
    for (int k = 0; k < 2; ++k) {
      for (int c = 0; c < 2; ++c) m[k][c] = b[0][k] * v[0][c] + b[1][k] * v[1][c];
    }
    if (r == 2) break;
    for (int k = 0; k < 2; ++k) {
      const double sq = m[k][0] * m[k][0] + m[k][1] * m[k][1];
      const double scale = sq / (1.0 + sq) / std::sqrt(sq);
      for (int j = 0; j < 2; ++j) {
        g[j][k] += scale * (v[j][0] * m[k][0] + v[j][1] * m[k][1]);
      }
    }
  }
  const auto result = capsule_forward(rows2({1.0, 0.5}, {-0.5, 1.0}), Mat::Identity(2, 2),
                                      rows2({0.3, -0.2}, {0.1, 0.5}), 3);
  for (int k = 0; k < 2; ++k) {
    for (int c = 0; c < 2; ++c) CHECK(result.capsules(k, c) == doctest::Approx(m[k][c]).epsilon(1e-12));
  }
}

TEST_CASE("routing weights are normalized and capsules squash below one") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Mat v(5, 4), w(4, 4);
    for (auto* m : {&v, &w}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = g(rng);
    }
    const auto r = capsule_forward(v, w, sample_routing_logits(5, 3, rng), 3);
    for (Eigen::Index j = 0; j < 5; ++j) {
      CHECK(r.weights.row(j).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(r.weights.row(j).minCoeff() > 0.0);
    }
    for (Eigen::Index k = 0; k < 3; ++k) CHECK(squash(r.capsules.row(k).transpose()).norm() < 1.0);
  }
}

TEST_CASE("cluster embedding") {
  Vec w(2);
  w << 1.0, 0.0;
  SUBCASE("singleton") {
    Mat one = rows2({2.0, 3.0}, {0, 0}).topRows(1);
    const auto c = semantic_cluster_embed(one, w, 0.4);
    CHECK(c.weights(0) == 1.0);
    CHECK(c.embedding(0) == 2.0);
    CHECK(c.embedding(1) == 3.0);
  }
  SUBCASE("equal logits") {
    const auto c = semantic_cluster_embed(rows2({0.0, 1.0}, {0.0, 3.0}), w, 0.0);
    CHECK(c.weights(0) == doctest::Approx(0.5));
    CHECK(c.embedding(1) == doctest::Approx(2.0));
  }
  SUBCASE("logits one and zero") {
    const auto c = semantic_cluster_embed(rows2({1.0, 0.0}, {0.0, 0.0}), w, 0.0);
    CHECK(c.weights(0) == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(c.weights(1) == doctest::Approx(0.2689).epsilon(1e-4));
  }
}

TEST_CASE("alignment with one cluster") {
  Mat m(3, 2);
  m << 1, 2, -1, 0, 0.5, 0.5;
  Mat h(1, 2);
  h << 0.3, -0.7;
  const auto a = align(m, h, rows2({1, 2}, {3, 4}));
  for (Eigen::Index k = 0; k < 3; ++k) {
    CHECK(a.weights(k, 0) == 1.0);
    CHECK(a.aligned.row(k) == h.row(0));
  }
}

TEST_CASE("alignment with zero projection averages clusters") {
  Mat m(2, 2);
  m << 1, 2, -1, 0;
  Mat h(3, 2);
  h << 1, 0, 0, 1, 2, 2;
  const auto a = align(m, h, Mat::Zero(2, 2));
  for (Eigen::Index k = 0; k < 2; ++k) {
    CHECK(a.weights(k, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(a.aligned(k, 0) == doctest::Approx(1.0));
    CHECK(a.aligned(k, 1) == doctest::Approx(1.0));
  }
}

TEST_CASE("alignment matches a hand evaluation") {
  const Mat m = rows2({1.0, -0.5}, {0.2, 0.8});
  const Mat h = rows2({0.5, 1.0}, {-1.0, 0.3});
  const Mat w1 = rows2({0.7, -0.2}, {0.4, 1.1});
  double p[2][2];
  for (int f = 0; f < 2; ++f) {
    for (int r = 0; r < 2; ++r) p[f][r] = std::tanh(w1(r, 0) * h(f, 0) + w1(r, 1) * h(f, 1));
  }
  const auto a = align(m, h, w1);
  for (int k = 0; k < 2; ++k) {
    const double s0 = m(k, 0) * p[0][0] + m(k, 1) * p[0][1];
    const double s1 = m(k, 0) * p[1][0] + m(k, 1) * p[1][1];
    const double a0 = 1.0 / (1.0 + std::exp(s1 - s0));
    CHECK(a.weights(k, 0) == doctest::Approx(a0).epsilon(1e-12));
    for (int c = 0; c < 2; ++c) {
      CHECK(a.aligned(k, c) == doctest::Approx(a0 * h(0, c) + (1 - a0) * h(1, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("alignment without clusters is zero") {
  const auto a = align(rows2({1, 2}, {3, 4}), Mat(0, 2), Mat::Identity(2, 2));
  CHECK(a.aligned.rows() == 2);
  CHECK(a.aligned.isZero(0.0));
}

TEST_CASE("hybrid sums") {
  const Mat m = rows2({1, 2}, {3, 4});
  const Mat z = rows2({-1, 0.5}, {0, 2});
  CHECK(hybrid(m, Mat::Zero(2, 2)) == m);
  CHECK(hybrid(Mat::Zero(2, 2), z) == z);
  CHECK(hybrid(Mat::Zero(2, 2), Mat::Zero(2, 2)).isZero(0.0));
  CHECK(hybrid(m, z) == m + z);
}

TEST_CASE("readout") {
  Vec v(2);
  v << 1.0, 2.0;
  Mat one(1, 2);
  one << 3.0, -1.0;
  CHECK(readout_score(one, v).score == 1.0);
  const Mat two = rows2({2.0, 0.0}, {1.0, 2.0});
  const auto r = readout_score(two, v);
  CHECK(r.score == 5.0);
  CHECK(r.interest == 1);
  const auto tie = readout_score(rows2({1.0, 2.0}, {1.0, 2.0}), v);
  CHECK(tie.interest == 0);
  // Shifting every score by the same constant keeps the winner.
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Mat o(4, 2);
    for (Eigen::Index i = 0; i < o.size(); ++i) o.data()[i] = g(rng);
    const auto base = readout_score(o, v);
    const double c = 3.0 * g(rng);
    Mat shifted = o;
    shifted.rowwise() += (c / v.squaredNorm()) * v.transpose();
    const auto moved = readout_score(shifted, v);
    CHECK(moved.interest == base.interest);
    CHECK(moved.score == doctest::Approx(base.score + c));
  }
}

TEST_CASE("recommendation loss values") {
  ModelHyper hyper;
  hyper.dim = 2;
  hyper.num_interests = 1;
  hyper.no_sem = true;
  auto params = ModelParams::initialize(5, hyper, 1);
  params.item_embeddings << 1, 0, 2, 0, 0, 1, 0, -1, 1, 0;
  params.capsule_transform.setIdentity();
  RecExample ex;
  ex.input.items = {0};
  ex.input.routing_init = Mat::Zero(1, 1);
  const auto state = forward_user(params, ex.input);

  ex.target = 1;
  CHECK(rec_loss_example(params, ex, state, nullptr) == doctest::Approx(0.0));
  ex.target = 0;
  ex.negatives = {4};
  CHECK(rec_loss_example(params, ex, state, nullptr) == doctest::Approx(std::log(2.0)));
  ex.target = 1;
  ex.negatives = {2, 3};
  const double expected = -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0));
  CHECK(expected == doctest::Approx(0.2395).epsilon(1e-3));
  CHECK(rec_loss_example(params, ex, state, nullptr) == doctest::Approx(expected));
  const std::vector<RecExample> batch = {ex, ex};
  CHECK(rec_loss(params, batch, nullptr) == doctest::Approx(expected));
}

TEST_CASE("contrastive loss degenerate cases") {
  ModelHyper hyper;
  hyper.dim = 2;
  hyper.tau = 0.3;
  auto params = ModelParams::initialize(3, hyper, 1);
  params.item_embeddings << 1, 0, 0, 1, 0, 0;
  SynthUser single{{0, 1, 2}, {{0, 1, 2}}};
  CHECK(contrastive_user_loss(params, single, nullptr) == 0.0);
  // Positive and negative have the same similarity to every anchor.
  SynthUser equal{{0, 1, 2}, {{0, 1}, {2}}};
  CHECK(contrastive_user_loss(params, equal, nullptr) == doctest::Approx(0.0));
  const std::vector<SynthUser> users = {single, equal};
  CHECK(contrastive_loss(params, users, nullptr) == doctest::Approx(0.0));
}

TEST_CASE("contrastive loss matches a hand evaluation") {
  ModelHyper hyper;
  hyper.dim = 2;
  hyper.tau = 0.1;
  auto params = ModelParams::initialize(4, hyper, 1);
  const double e[4][2] = {{1.0, 0.2}, {0.8, 0.5}, {-0.3, 1.0}, {0.1, -0.9}};
  for (int i = 0; i < 4; ++i) params.item_embeddings.row(i) << e[i][0], e[i][1];
  auto dot = [&](int a, int b) { return e[a][0] * e[b][0] + e[a][1] * e[b][1]; };
  const int cluster_of[4] = {0, 0, 1, 1};
  double expected = 0.0;
  for (int a = 0; a < 4; ++a) {
    double denom = 0.0;
    for (int n = 0; n < 4; ++n) {
      if (cluster_of[n] != cluster_of[a]) denom += std::exp(dot(a, n) / 0.1);
    }
    for (int p = 0; p < 4; ++p) {
      if (p != a && cluster_of[p] == cluster_of[a]) {
        expected += -std::log(std::exp(dot(a, p) / 0.1) / denom);
      }
    }
  }
  SynthUser user{{0, 1, 2, 3}, {{0, 1}, {2, 3}}};
  CHECK(contrastive_user_loss(params, user, nullptr) == doctest::Approx(expected).epsilon(1e-12));
  const std::vector<SynthUser> users = {user, SynthUser{{0}, {{0}}}};
  CHECK(contrastive_loss(params, users, nullptr) == doctest::Approx(expected / 2.0));
}

TEST_CASE("total loss") {
  auto r = total_loss(1.0, 2.0, 0.0, true);
  CHECK(r.total == 1.0);
  r = total_loss(1.0, 2.0, 0.01, true);
  CHECK(r.total == doctest::Approx(1.02));
  r = total_loss(1.0, 2.0, 0.01, false);
  CHECK(r.total == 1.0);
  CHECK(r.cst_loss == 2.0);
  CHECK_FALSE(r.cst_evaluated);
}

TEST_CASE("analytic gradients match finite differences") {
  for (bool routing_grad : {false, true}) {
    auto params = tiny_params(8, 4, 2, 3);
    params.hyper.routing_grad = routing_grad;
    RecExample ex;
    ex.input = tiny_input(2, 9);
    if (!routing_grad) ex.input.pinned_routing = forward_user(params, ex.input).routing.weights;
    ex.target = 6;
    ex.full_softmax = true;
    const LossFn rec = [&](const ModelParams& p, Gradients* g) {
      const std::vector<RecExample> batch = {ex};
      return rec_loss(p, batch, g);
    };
    CHECK(numeric_gradient_check(rec, params) < 1e-3);
  }
  auto params = tiny_params(8, 4, 2, 5);
  const std::vector<SynthUser> users = {SynthUser{{0, 1, 2, 3, 4}, {{0, 1}, {2, 3}, {1, 4}}}};
  const LossFn cst = [&](const ModelParams& p, Gradients* g) {
    return contrastive_loss(p, users, g);
  };
  CHECK(numeric_gradient_check(cst, params) < 1e-3);
}

TEST_CASE("stop-gradient routing matches frozen-weight differences") {
  auto params = tiny_params(8, 4, 2, 11);
  for (uint64_t seed : {1u, 2u}) {
    const UserInput input = tiny_input(2, seed);
    const auto state = forward_user(params, input);
    UserInput frozen = input;
    frozen.pinned_routing = state.routing.weights;
    Mat upstream(state.interests.rows(), state.interests.cols());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    for (Eigen::Index i = 0; i < upstream.size(); ++i) upstream.data()[i] = g(rng);
    const LossFn fn = [&](const ModelParams& p, Gradients* grads) {
      if (grads != nullptr) backward_user(p, input, forward_user(p, input), upstream, *grads);
      return (forward_user(p, frozen).interests.array() * upstream.array()).sum();
    };
    CHECK(numeric_gradient_check(fn, params) < 1e-4);
  }
  const auto a = forward_user(params, tiny_input(2, 1)).routing.weights;
  const auto b = forward_user(params, tiny_input(2, 2)).routing.weights;
  CHECK((a - b).norm() > 1e-6);
}

TEST_CASE("without semantics the semantic parameters get no gradient") {
  auto params = tiny_params(8, 4, 2, 13, true);
  RecExample ex;
  ex.input = tiny_input(2, 4);
  ex.target = 6;
  ex.negatives = {4, 5};
  Gradients grads(params);
  const std::vector<RecExample> batch = {ex};
  rec_loss(params, batch, &grads);
  CHECK(grads.align_projection.isZero(0.0));
  CHECK(grads.cluster_attn_weight.isZero(0.0));
  CHECK(grads.cluster_attn_bias == 0.0);
  CHECK_FALSE(grads.item_embeddings.isZero(0.0));
  // Changing the semantic parameters leaves the loss untouched.
  auto other = params;
  other.align_projection *= -3.0;
  other.cluster_attn_weight.setOnes();
  other.cluster_attn_bias = 4.0;
  CHECK(rec_loss(other, batch, nullptr) == rec_loss(params, batch, nullptr));
}

TEST_CASE("a small contrastive step descends") {
  auto params = tiny_params(6, 3, 2, 17);
  const std::vector<SynthUser> users = {SynthUser{{0, 1, 2, 3, 4, 5}, {{0, 1, 2}, {3, 4}, {5, 2}}}};
  Gradients grads(params);
  const double before = contrastive_loss(params, users, &grads);
  REQUIRE(before > 0.0);
  auto stepped = params;
  stepped.item_embeddings -= 1e-3 * grads.item_embeddings;
  CHECK(contrastive_loss(stepped, users, nullptr) < before);
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto params = tiny_params(10, 6, 3, 19);
  params.hyper.no_col = true;
  params.hyper.routing_grad = true;
  std::stringstream buf;
  save_checkpoint(buf, params);
  const auto back = load_checkpoint(buf);
  CHECK(back == params);
  CHECK(back.hyper.dim == 6);
  CHECK(back.hyper.num_interests == 3);
  CHECK(back.hyper.tau == params.hyper.tau);
  CHECK(back.hyper.no_col);
  std::stringstream again;
  save_checkpoint(again, back);
  CHECK(again.str() == [&] {
    std::stringstream s;
    save_checkpoint(s, params);
    return s.str();
  }());
  std::stringstream junk("not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(junk), FormatError);
}
