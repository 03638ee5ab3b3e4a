/*
 * Copyright 2026 The GRASP Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cmath>
#include <vector>

#include "doctest.h"
#include "grad_check.h"
#include "grasp/hae.h"
#include "test_util.h"

namespace grasp {
namespace {

using testing::make_stores;
using testing::matrix;

constexpr double kSigma1 = 0.7310585786300049;
constexpr double kSigma2 = 0.8807970779778823;
constexpr double kSigmaSqrt2 = 0.8044296825069569;

RowVec row(std::initializer_list<double> v) {
  RowVec r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r[i++] = x;
  return r;
}

HaeConfig small_cfg(std::size_t d, std::size_t hh, std::size_t h) {
  HaeConfig c;
  c.d_sem = d;
  c.h_hidden = hh;
  c.h = h;
  return c;
}

// w1 passes the self slot through, b1 keeps the rectifier open, w2 = I.
HaeParams hand_params() {
  HaeParams p = HaeParams::zeros(small_cfg(2, 2, 2));
  p.w1(0, 0) = 1.0;
  p.w1(1, 1) = 1.0;
  p.b1 << 10.0, 10.0;
  p.w2.setIdentity();
  return p;
}

SemanticBundle hand_bundle() {
  return {row({1, 0}), row({0, 1}), row({2, 0}), row({0, 3})};
}

// Users {[1,0],[0,1]} and items {[2,0],[0,3]} with k=1 give user 0 / item 0
// exactly the hand bundle above.
std::shared_ptr<const SemanticStores> hand_stores() {
  return make_stores(matrix(2, 2, {1, 0, 0, 1}), matrix(2, 2, {2, 0, 0, 3}), 1);
}

TEST_CASE("sigmoid gate closed forms") {
  CHECK(sigmoid_gate(row({1, 0}), row({0, 1}), 2) == 0.5);
  CHECK(sigmoid_gate(row({1}), row({1}), 1) == doctest::Approx(kSigma1).epsilon(1e-15));
  CHECK(sigmoid_gate(row({2, 0}), row({2, 0}), 4) == doctest::Approx(kSigma2).epsilon(1e-15));
  CHECK_THROWS_AS(sigmoid_gate(row({1, 2}), row({1}), 1), ArgumentError);
  CHECK_THROWS_AS(sigmoid_gate(row({1}), row({1}), 0), ArgumentError);
}

TEST_CASE("sigmoid gate is increasing in the dot product and stays in (0,1)") {
  double prev = 0.0;
  for (int i = -40; i <= 40; ++i) {
    const double g = sigmoid_gate(row({i * 0.5}), row({1.0}), 1);
    CHECK(g > prev);
    CHECK(g > 0.0);
    CHECK(g < 1.0);
    prev = g;
  }
}

TEST_CASE("gate is invariant under a shared coordinate permutation") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const RowVec q = testing::random_mat(1, 6, rng).row(0);
    const RowVec v = testing::random_mat(1, 6, rng).row(0);
    const std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    RowVec qp(6), vp(6);
    for (int i = 0; i < 6; ++i) {
      qp[i] = q[perm[i]];
      vp[i] = v[perm[i]];
    }
    CHECK(sigmoid_gate(q, v, 6) == doctest::Approx(sigmoid_gate(qp, vp, 6)).epsilon(1e-14));
  }
}

TEST_CASE("enhance_item with zero cross dots gates every branch at one half") {
  const SemanticBundle b{row({1, 0}), row({0, 1}), row({0, 2}), row({3, 0})};
  const Branches br = enhance_item(b);
  CHECK(br.self_gate == 0.5);
  CHECK(br.similar_gate == 0.5);
  CHECK(br.global_gate == 0.5);
  CHECK(br.self_branch.isApprox(0.5 * b.item));
  CHECK(br.similar_branch.isApprox(0.5 * b.item_bar));
  CHECK(br.global_branch.isApprox(0.5 * row({0, 2, 3, 0})));
}

TEST_CASE("enhance_item with zero values yields zero branches") {
  const SemanticBundle b{row({5, -1}), row({2, 2}), row({0, 0}), row({0, 0})};
  const Branches br = enhance_item(b);
  CHECK(br.concat().isZero(0.0));
}

TEST_CASE("enhance_item one-dimensional closed form") {
  const SemanticBundle b{row({1}), row({1}), row({1}), row({1})};
  const Branches br = enhance_item(b);
  CHECK(br.self_branch[0] == doctest::Approx(kSigma1).epsilon(1e-15));
  CHECK(br.similar_branch[0] == doctest::Approx(kSigma1).epsilon(1e-15));
  REQUIRE(br.global_branch.size() == 2);
  CHECK(br.global_branch[0] == doctest::Approx(kSigmaSqrt2).epsilon(1e-15));
  CHECK(br.global_branch[1] == doctest::Approx(kSigmaSqrt2).epsilon(1e-15));
}

TEST_CASE("enhance_item rejects mismatched dimensions") {
  const SemanticBundle b{row({1, 0}), row({1}), row({1, 0}), row({1, 0})};
  CHECK_THROWS_AS(enhance_item(b), ArgumentError);
}

TEST_CASE("branches divide back to their gates") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    SemanticBundle b;
    b.u = testing::random_mat(1, 4, rng).row(0);
    b.u_bar = testing::random_mat(1, 4, rng).row(0);
    b.item = testing::random_mat(1, 4, rng).row(0);
    b.item_bar = testing::random_mat(1, 4, rng).row(0);
    const Branches br = enhance_item(b);
    for (Eigen::Index c = 0; c < 4; ++c) {
      CHECK(br.self_branch[c] / b.item[c] == doctest::Approx(br.self_gate));
      CHECK(br.similar_branch[c] / b.item_bar[c] == doctest::Approx(br.similar_gate));
      CHECK(br.global_branch[c] / b.item[c] == doctest::Approx(br.global_gate));
      CHECK(br.global_branch[4 + c] / b.item_bar[c] == doctest::Approx(br.global_gate));
    }
  }
}

TEST_CASE("fuse with zero weights returns the output bias") {
  HaeParams p = HaeParams::zeros(small_cfg(2, 4, 3));
  p.b2 << 1.5, -2.0, 0.25;
  const Branches br = enhance_item(hand_bundle());
  CHECK(fuse(br, p) == p.b2.row(0));
}

TEST_CASE("fuse hand-computed two-dimensional instance") {
  const Branches br = enhance_item(hand_bundle());
  CHECK(br.self_gate == doctest::Approx(kSigmaSqrt2).epsilon(1e-15));
  const RowVec out = fuse(br, hand_params());
  CHECK(out[0] == doctest::Approx(2.0 * kSigmaSqrt2 + 10.0).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("fuse of an all-zero bundle with zero biases is zero") {
  const auto cfg = small_cfg(3, 6, 3);
  HaeParams p = HaeParams::init(cfg, 5);
  p.b1.setZero();
  p.b2.setZero();
  const SemanticBundle b{RowVec::Zero(3), RowVec::Zero(3), RowVec::Zero(3), RowVec::Zero(3)};
  CHECK(fuse(enhance_item(b), p).isZero(0.0));
}

TEST_CASE("fuse rejects a shape mismatch") {
  const HaeParams p = HaeParams::zeros(small_cfg(3, 4, 2));
  CHECK_THROWS_AS(fuse(enhance_item(hand_bundle()), p), ArgumentError);
}

TEST_CASE("enhance_sequence empty, repeated and hand-computed rows") {
  const auto stores = hand_stores();
  const auto cfg = small_cfg(2, 2, 2);
  const HaeParams p = hand_params();

  const Mat empty = enhance_sequence(*stores, cfg, p, 0, {});
  CHECK(empty.rows() == 0);
  CHECK(empty.cols() == 2);

  const std::vector<ItemId> seq = {0, 1, 0};
  const Mat out = enhance_sequence(*stores, cfg, p, 0, seq);
  REQUIRE(out.rows() == 3);
  CHECK(out.row(0) == out.row(2));
  CHECK(out(0, 0) == doctest::Approx(2.0 * kSigmaSqrt2 + 10.0).epsilon(1e-15));
  CHECK(out(0, 1) == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(out.row(0).isApprox(fuse(enhance_item(stores->bundle(0, 0)), p)));
  CHECK(out.row(1).isApprox(fuse(enhance_item(stores->bundle(0, 1)), p)));

  const std::vector<ItemId> bad = {0, 2};
  CHECK_THROWS_AS(enhance_sequence(*stores, cfg, p, 0, bad), ArgumentError);
  CHECK_THROWS_AS(enhance_sequence(*stores, cfg, p, 5, seq), ArgumentError);
}

TEST_CASE("enhance_sequence rows do not depend on other positions") {
  Rng rng(3);
  const auto users = testing::random_matrix(6, 4, rng);
  const auto items = testing::random_matrix(12, 4, rng);
  const auto stores = make_stores(users, items, 3);
  const auto cfg = small_cfg(4, 8, 4);
  const HaeParams p = HaeParams::init(cfg, 9);
  std::vector<ItemId> seq = {1, 4, 7, 2, 9};
  const Mat base = enhance_sequence(*stores, cfg, p, 2, seq);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    for (std::size_t other = 0; other < seq.size(); ++other) {
      if (other == t) continue;
      auto edited = seq;
      edited[other] = static_cast<ItemId>((edited[other] + 5) % 12);
      const Mat out = enhance_sequence(*stores, cfg, p, 2, edited);
      CHECK(out.row(static_cast<Eigen::Index>(t)) == base.row(static_cast<Eigen::Index>(t)));
    }
  }
}

TEST_CASE("ablation switches zero-fill their concat slots") {
  Rng rng(21);
  const auto stores =
      make_stores(testing::random_matrix(5, 3, rng), testing::random_matrix(9, 3, rng), 2);
  const std::vector<ItemId> seq = {0, 3, 8, 3};
  HaeConfig full = small_cfg(3, 6, 3);
  const Mat base = enhance_rows(*stores, full, 1, seq, true);

  HaeConfig no_sim = full;
  no_sim.drop_similar = true;
  Mat expect = base;
  expect.middleCols(3, 3).setZero();
  CHECK(enhance_rows(*stores, no_sim, 1, seq, true) == expect);

  HaeConfig no_glob = full;
  no_glob.drop_global = true;
  expect = base;
  expect.middleCols(6, 6).setZero();
  CHECK(enhance_rows(*stores, no_glob, 1, seq, true) == expect);

  // The drop-similar output of the full pipeline equals fusing a bundle whose
  // similar slot was zeroed by hand.
  const HaeParams p = HaeParams::init(no_sim, 4);
  const Mat fused = enhance_sequence(*stores, no_sim, p, 1, seq);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    Branches br = enhance_item(stores->bundle(1, seq[t]));
    br.similar_branch.setZero();
    CHECK(fused.row(static_cast<Eigen::Index>(t)).isApprox(fuse(br, p), 1e-14));
  }

  HaeConfig no_att = full;
  no_att.no_attention = true;
  const Mat raw = enhance_rows(*stores, no_att, 1, seq, true);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto b = stores->bundle(1, seq[t]);
    RowVec want(12);
    want << b.item, b.item_bar, b.item, b.item_bar;
    CHECK(raw.row(static_cast<Eigen::Index>(t)).isApprox(want, 1e-15));
  }
}

TEST_CASE("softmax variant normalizes gates causally over the sequence") {
  Rng rng(8);
  const auto stores =
      make_stores(testing::random_matrix(4, 3, rng), testing::random_matrix(10, 3, rng), 2);
  HaeConfig cfg = small_cfg(3, 6, 3);
  cfg.softmax_variant = true;
  const std::vector<ItemId> seq = {2, 5, 7, 1};
  const Mat rows = enhance_rows(*stores, cfg, 0, seq, true);

  // Position 0 is alone in its prefix, so its gates are exactly 1.
  const auto b0 = stores->bundle(0, seq[0]);
  CHECK(rows.row(0).head(3).isApprox(b0.item, 1e-14));

  // Self gate at position t is softmax over prefix scores, recomputed here.
  const double inv = 1.0 / std::sqrt(3.0);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    double z = 0.0;
    std::vector<double> s;
    for (std::size_t j = 0; j <= t; ++j) {
      const auto b = stores->bundle(0, seq[j]);
      s.push_back(b.u.dot(b.item) * inv);
    }
    for (double x : s) z += std::exp(x);
    const double gate = std::exp(s.back()) / z;
    const auto bt = stores->bundle(0, seq[t]);
    CHECK(rows.row(static_cast<Eigen::Index>(t)).head(3).isApprox(gate * bt.item, 1e-12));
  }

  // Causal: editing a later position leaves earlier rows unchanged.
  auto edited = seq;
  edited[3] = 9;
  const Mat rows2 = enhance_rows(*stores, cfg, 0, edited, true);
  CHECK(rows2.topRows(3) == rows.topRows(3));

  // Candidate lists are gated per item with weight one.
  const Mat cand = enhance_rows(*stores, cfg, 0, seq, false);
  CHECK(cand.row(2).head(3).isApprox(stores->bundle(0, seq[2]).item, 1e-14));
  CHECK_THROWS_AS(enhance_item(b0, cfg), ArgumentError);
}

TEST_CASE("hae_backward zero upstream gives zero gradients") {
  const auto cfg = small_cfg(3, 6, 3);
  const HaeParams p = HaeParams::init(cfg, 1);
  Rng rng(2);
  const HaeForward f = hae_forward(p, testing::random_mat(4, 12, rng));
  HaeParams g = HaeParams::zeros(cfg);
  hae_backward(p, f, Mat::Zero(4, 3), g);
  g.for_each([](const char*, const Mat& m) { CHECK(m.isZero(0.0)); });
}

TEST_CASE("hae_backward bias gradient equals summed upstream gradient") {
  const auto cfg = small_cfg(3, 6, 3);
  const HaeParams p = HaeParams::init(cfg, 1);
  Rng rng(4);
  const HaeForward f = hae_forward(p, testing::random_mat(5, 12, rng));
  const Mat up = testing::random_mat(5, 3, rng);
  HaeParams g = HaeParams::zeros(cfg);
  hae_backward(p, f, up, g);
  CHECK(g.b2.isApprox(up.colwise().sum(), 1e-15));
}

TEST_CASE("hae gradients match central finite differences") {
  Rng rng(17);
  const auto stores =
      make_stores(testing::random_matrix(4, 3, rng), testing::random_matrix(8, 3, rng), 2);
  const auto cfg = small_cfg(3, 6, 3);
  HaeParams p = HaeParams::init(cfg, 23);
  // Keep hidden pre-activations away from the rectifier kink.
  p.b1.array() += 0.3;
  const std::vector<ItemId> seq = {1, 6, 3};
  const Mat up = testing::random_mat(3, 3, rng);
  auto loss = [&] {
    return (enhance_sequence(*stores, cfg, p, 2, seq).array() * up.array()).sum();
  };
  HaeParams g = HaeParams::zeros(cfg);
  const HaeForward f = hae_forward(p, enhance_rows(*stores, cfg, 2, seq, true));
  hae_backward(p, f, up, g);
  const auto checks = testing::check_gradients(
      {{"w1", &p.w1}, {"b1", &p.b1}, {"w2", &p.w2}, {"b2", &p.b2}},
      {&g.w1, &g.b1, &g.w2, &g.b2}, loss);
  for (const auto& c : checks) {
    INFO(c.name);
    CHECK(c.rel_error < 1e-4);
  }
}

TEST_CASE("semantic stores are untouched by forward and backward passes") {
  Rng rng(5);
  const auto stores =
      make_stores(testing::random_matrix(4, 3, rng), testing::random_matrix(8, 3, rng), 2);
  const auto before_u = stores->users.embeddings().checksum();
  const auto before_i = stores->items.embeddings().checksum();
  const auto cache_i = stores->items.cache();
  const auto cfg = small_cfg(3, 6, 3);
  const HaeParams p = HaeParams::init(cfg, 2);
  const std::vector<ItemId> seq = {0, 1, 2, 3, 4};
  HaeParams g = HaeParams::zeros(cfg);
  const HaeForward f = hae_forward(p, enhance_rows(*stores, cfg, 1, seq, true));
  hae_backward(p, f, Mat::Ones(5, 3), g);
  CHECK(stores->users.embeddings().checksum() == before_u);
  CHECK(stores->items.embeddings().checksum() == before_i);
  CHECK(stores->items.cache() == cache_i);
}

TEST_CASE("init is deterministic and bounded") {
  const auto cfg = small_cfg(4, 8, 4);
  const HaeParams a = HaeParams::init(cfg, 99);
  const HaeParams b = HaeParams::init(cfg, 99);
  const HaeParams c = HaeParams::init(cfg, 100);
  CHECK(a.w1 == b.w1);
  CHECK(a.w2 == b.w2);
  CHECK(a.w1 != c.w1);
  CHECK(a.w1.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(16.0));
  CHECK(a.w2.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(8.0));
}

TEST_CASE("checkpoint round trip and dimension checks") {
  testing::TempDir dir("hae");
  const auto cfg = small_cfg(4, 8, 4);
  HaeParams p = HaeParams::init(cfg, 3);
  const std::string path = dir.file("hae.ghae");
  save_hae_checkpoint(p, cfg, path);
  const HaeParams q = load_hae_checkpoint(path, cfg);
  p.for_each([&](const char*, Mat& m) { m = m.cast<float>().cast<double>(); });
  CHECK(q.w1 == p.w1);
  CHECK(q.b1 == p.b1);
  CHECK(q.w2 == p.w2);
  CHECK(q.b2 == p.b2);
  CHECK_THROWS_AS(load_hae_checkpoint(path, small_cfg(4, 8, 2)), ArgumentError);
  CHECK_THROWS_AS(load_hae_checkpoint(dir.file("missing.ghae"), cfg), Error);
}

}  // namespace
}  // namespace grasp
