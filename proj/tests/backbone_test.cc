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
#include <string>
#include <vector>

#include "doctest.h"
#include "grad_check.h"
#include "grasp/backbone.h"
#include "test_util.h"

namespace grasp {
namespace {

BackboneConfig make_cfg(BackboneKind kind, std::size_t h, std::size_t layers,
                        std::size_t heads = 1, std::size_t max_len = 8) {
  BackboneConfig c;
  c.kind = kind;
  c.h = h;
  c.n_layers = layers;
  c.n_heads = heads;
  c.max_seq_len = max_len;
  c.dropout = 0.0;
  return c;
}

const BackboneKind kKinds[] = {BackboneKind::kGru4Rec, BackboneKind::kSasRec};

// Perturbs layer-norm gains and biases so gradient checks exercise them.
void jitter(BackboneParams& p, Rng& rng, double scale) {
  p.for_each([&](const char*, Mat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += scale * standard_normal(rng);
  });
}

TEST_CASE("gru zero inputs with zero biases stay at the zero state") {
  const auto cfg = make_cfg(BackboneKind::kGru4Rec, 4, 2);
  const BackboneParams p = BackboneParams::init(cfg, 1);
  const SequenceOutput out = gru4rec_forward(cfg, p, Mat::Zero(5, 4));
  CHECK(out.per_position.isZero(0.0));
  BackboneCache cache;
  backbone_forward(cfg, p, Mat::Zero(3, 4), false, nullptr, &cache);
  for (const auto& layer : cache.gru) {
    CHECK((layer.z.array() == 0.5).all());
    CHECK((layer.r.array() == 0.5).all());
    CHECK(layer.n.isZero(0.0));
  }
}

TEST_CASE("single position output equals final") {
  Rng rng(3);
  for (BackboneKind kind : kKinds) {
    const auto cfg = make_cfg(kind, 4, 2);
    const BackboneParams p = BackboneParams::init(cfg, 2);
    const SequenceOutput out = backbone_forward(cfg, p, testing::random_mat(1, 4, rng));
    REQUIRE(out.per_position.rows() == 1);
    CHECK(out.per_position.row(0) == out.final());
  }
}

TEST_CASE("sasrec attention over a single position is exactly one") {
  const auto cfg = make_cfg(BackboneKind::kSasRec, 4, 2, 2);
  const BackboneParams p = BackboneParams::init(cfg, 4);
  Rng rng(1);
  BackboneCache cache;
  sasrec_forward(cfg, p, testing::random_mat(1, 4, rng), &cache);
  REQUIRE(cache.blocks.size() == 2);
  for (const auto& b : cache.blocks) {
    REQUIRE(b.probs.size() == 2);
    for (const auto& pr : b.probs) {
      REQUIRE(pr.rows() == 1);
      CHECK(pr(0, 0) == 1.0);
    }
  }
}

TEST_CASE("sasrec attention rows are causal distributions") {
  const auto cfg = make_cfg(BackboneKind::kSasRec, 8, 2, 2);
  const BackboneParams p = BackboneParams::init(cfg, 4);
  Rng rng(2);
  BackboneCache cache;
  sasrec_forward(cfg, p, testing::random_mat(6, 8, rng), &cache);
  for (const auto& b : cache.blocks) {
    for (const auto& pr : b.probs) {
      for (Eigen::Index t = 0; t < 6; ++t) {
        CHECK(pr.row(t).sum() == doctest::Approx(1.0).epsilon(1e-12));
        for (Eigen::Index j = t + 1; j < 6; ++j) CHECK(pr(t, j) == 0.0);
      }
    }
  }
}

TEST_CASE("suffix perturbation leaves earlier outputs bit-identical") {
  Rng rng(31);
  for (BackboneKind kind : kKinds) {
    const auto cfg = make_cfg(kind, 8, 2, 2, 12);
    for (int trial = 0; trial < 100; ++trial) {
      const BackboneParams p = BackboneParams::init(cfg, static_cast<std::uint64_t>(trial));
      const auto len = static_cast<Eigen::Index>(2 + uniform_index(rng, 10));
      const Mat x = testing::random_mat(len, 8, rng);
      const auto t = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(len - 1)));
      Mat y = x;
      y.bottomRows(len - t - 1) = testing::random_mat(len - t - 1, 8, rng);
      const Mat a = backbone_forward(cfg, p, x).per_position;
      const Mat b = backbone_forward(cfg, p, y).per_position;
      CHECK(a.topRows(t + 1) == b.topRows(t + 1));
      CHECK(a.bottomRows(1) != b.bottomRows(1));
    }
  }
}

TEST_CASE("swapping two positions changes the outputs") {
  Rng rng(8);
  for (BackboneKind kind : kKinds) {
    const auto cfg = make_cfg(kind, 8, 2);
    const BackboneParams p = BackboneParams::init(cfg, 6);
    const Mat x = testing::random_mat(4, 8, rng);
    Mat y = x;
    y.row(0).swap(y.row(2));
    const RowVec a = backbone_forward(cfg, p, x).final();
    const RowVec b = backbone_forward(cfg, p, y).final();
    CHECK((a - b).norm() > 1e-6);
  }
}

TEST_CASE("left padding does not affect real positions") {
  Rng rng(12);
  for (BackboneKind kind : kKinds) {
    const auto cfg = make_cfg(kind, 4, 2, 1, 10);
    const BackboneParams p = BackboneParams::init(cfg, 7);
    const Mat x = testing::random_mat(3, 4, rng);
    Mat padded(6, 4);
    padded.topRows(3) = testing::random_mat(3, 4, rng);
    padded.bottomRows(3) = x;
    const SequenceOutput out = forward_left_padded(cfg, p, padded, 3);
    const SequenceOutput ref = backbone_forward(cfg, p, x);
    CHECK(out.per_position.bottomRows(3) == ref.per_position);
    CHECK(out.per_position.topRows(3).isZero(0.0));
    CHECK_THROWS_AS(forward_left_padded(cfg, p, padded, 6), ArgumentError);
  }
}

TEST_CASE("shape contract and finite outputs") {
  Rng rng(14);
  for (BackboneKind kind : kKinds) {
    const auto cfg = make_cfg(kind, 16, 2, 2, 50);
    const BackboneParams p = BackboneParams::init(cfg, 1);
    for (Eigen::Index len : {1, 7, 50}) {
      const Mat out = backbone_forward(cfg, p, testing::random_mat(len, 16, rng, 3.0)).per_position;
      CHECK(out.rows() == len);
      CHECK(out.cols() == 16);
      CHECK(out.allFinite());
    }
    CHECK_THROWS_AS(backbone_forward(cfg, p, Mat(0, 16)), ArgumentError);
    CHECK_THROWS_AS(backbone_forward(cfg, p, Mat::Zero(3, 8)), ArgumentError);
  }
  const auto sas = make_cfg(BackboneKind::kSasRec, 4, 1, 1, 3);
  CHECK_THROWS_AS(sasrec_forward(sas, BackboneParams::init(sas, 1), Mat::Zero(4, 4)), ArgumentError);
}

TEST_CASE("config validation") {
  auto c = make_cfg(BackboneKind::kSasRec, 6, 1, 4);
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c.n_heads = 3;
  CHECK_NOTHROW(c.validate());
  c.max_seq_len = 0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  CHECK(parse_backbone_kind("gru4rec") == BackboneKind::kGru4Rec);
  CHECK(parse_backbone_kind(to_string(BackboneKind::kSasRec)) == BackboneKind::kSasRec);
  CHECK_THROWS_AS(parse_backbone_kind("bert4rec"), ArgumentError);
}

TEST_CASE("score closed forms") {
  RowVec o(2), i(2);
  o << 1, 0;
  i << 0, 5;
  CHECK(score(o, i) == 0.5);
  i << 3, 0;
  CHECK(score(o, i) == doctest::Approx(0.9525741268224334).epsilon(1e-15));
  CHECK(score(o, i) == score(i, o));
}

TEST_CASE("fixed seed gives bit-identical parameters and outputs") {
  Rng rng(5);
  const Mat x = testing::random_mat(5, 8, rng);
  for (BackboneKind kind : kKinds) {
    const auto cfg = make_cfg(kind, 8, 2, 2);
    const BackboneParams a = BackboneParams::init(cfg, 77);
    const BackboneParams b = BackboneParams::init(cfg, 77);
    std::vector<Mat> ta, tb;
    a.for_each([&](const char*, const Mat& m) { ta.push_back(m); });
    b.for_each([&](const char*, const Mat& m) { tb.push_back(m); });
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta[i] == tb[i]);
    CHECK(backbone_forward(cfg, a, x).per_position == backbone_forward(cfg, b, x).per_position);
  }
}

void check_backbone_gradients(BackboneConfig cfg, bool training) {
  Rng rng(101);
  BackboneParams p = BackboneParams::init(cfg, 19);
  jitter(p, rng, 0.1);
  Mat x = testing::random_mat(3, static_cast<Eigen::Index>(cfg.h), rng);
  const Mat up = testing::random_mat(3, static_cast<Eigen::Index>(cfg.h), rng);

  auto run = [&](BackboneCache* cache) {
    Rng drop(55);
    return backbone_forward(cfg, p, x, training, training ? &drop : nullptr, cache);
  };
  auto loss = [&] { return (run(nullptr).per_position.array() * up.array()).sum(); };

  BackboneCache cache;
  run(&cache);
  BackboneParams g = BackboneParams::zeros(cfg);
  const Mat dx = backbone_backward(cfg, p, cache, up, g);

  std::vector<std::pair<std::string, Mat*>> params;
  std::vector<const Mat*> analytic;
  p.for_each([&](const char* name, Mat& m) { params.emplace_back(name, &m); });
  g.for_each([&](const char*, const Mat& m) { analytic.push_back(&m); });
  params.emplace_back("inputs", &x);
  analytic.push_back(&dx);

  const auto checks = testing::check_gradients(params, analytic, loss);
  for (const auto& c : checks) {
    INFO(to_string(cfg.kind) << " " << c.name << " rel=" << c.rel_error);
    CHECK(c.rel_error < 1e-3);
  }
}

TEST_CASE("gru4rec gradients match central finite differences") {
  check_backbone_gradients(make_cfg(BackboneKind::kGru4Rec, 4, 2), false);
}

TEST_CASE("sasrec gradients match central finite differences") {
  check_backbone_gradients(make_cfg(BackboneKind::kSasRec, 4, 2, 2, 3), false);
  check_backbone_gradients(make_cfg(BackboneKind::kSasRec, 4, 2, 1, 3), false);
}

TEST_CASE("gradients with dropout masks match finite differences") {
  auto gru = make_cfg(BackboneKind::kGru4Rec, 4, 2);
  gru.dropout = 0.3;
  check_backbone_gradients(gru, true);
  auto sas = make_cfg(BackboneKind::kSasRec, 4, 2, 2, 3);
  sas.dropout = 0.3;
  check_backbone_gradients(sas, true);
}

TEST_CASE("dropout is inactive in evaluation mode") {
  auto cfg = make_cfg(BackboneKind::kSasRec, 8, 2, 2);
  cfg.dropout = 0.5;
  const BackboneParams p = BackboneParams::init(cfg, 3);
  Rng rng(4);
  const Mat x = testing::random_mat(4, 8, rng);
  Rng drop(1);
  const Mat eval = backbone_forward(cfg, p, x).per_position;
  const Mat train = backbone_forward(cfg, p, x, true, &drop).per_position;
  CHECK(eval == backbone_forward(cfg, p, x, false, &drop).per_position);
  CHECK(eval != train);
}

TEST_CASE("checkpoint round trip and compatibility") {
  testing::TempDir dir("bb");
  for (BackboneKind kind : kKinds) {
    const auto cfg = make_cfg(kind, 4, 2, 2);
    BackboneParams p = BackboneParams::init(cfg, 8);
    const std::string path = dir.file(to_string(kind) + ".gbkb");
    save_backbone_checkpoint(p, cfg, path);
    const BackboneParams q = load_backbone_checkpoint(path, cfg);
    std::vector<Mat> tp, tq;
    p.for_each([&](const char*, const Mat& m) { tp.push_back(m.cast<float>().cast<double>()); });
    q.for_each([&](const char*, const Mat& m) { tq.push_back(m); });
    REQUIRE(tp.size() == tq.size());
    for (std::size_t i = 0; i < tp.size(); ++i) CHECK(tp[i] == tq[i]);
    auto other = cfg;
    other.n_layers = 1;
    CHECK_THROWS_AS(load_backbone_checkpoint(path, other), ArgumentError);
  }
}

}  // namespace
}  // namespace grasp
