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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "grasp/embedstore.h"
#include "test_util.h"

namespace grasp {
namespace {

using testing::matrix;

void write(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

std::string read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

template <typename T>
void put(std::string& s, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  s.append(b, sizeof(T));
}

// Full O(rows^2) scan: sort every other row by (similarity desc, index asc).
std::vector<Neighbor> brute_force(const EmbeddingMatrix& n, std::size_t row, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::size_t j = 0; j < n.rows(); ++j) {
    if (j == row) continue;
    double s = 0.0;
    for (std::size_t c = 0; c < n.dim(); ++c) s += double(n.row(row)[c]) * double(n.row(j)[c]);
    all.push_back({j, s});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Neighbor& a, const Neighbor& b) { return a.similarity > b.similarity; });
  all.resize(k);
  return all;
}

TEST_CASE("binary matrix decode") {
  testing::TempDir dir("es");
  std::string bytes = "GEMB";
  put<std::uint16_t>(bytes, 1);
  put<std::uint8_t>(bytes, 1);
  put<std::uint8_t>(bytes, 0);
  put<std::uint64_t>(bytes, 2);
  put<std::uint64_t>(bytes, 3);
  for (float v : {1.f, 2.f, 3.f, -4.f, 0.5f, 6.f}) put(bytes, v);
  write(dir.file("m.gemb"), bytes);
  const auto m = load_embedding_matrix(dir.file("m.gemb"));
  CHECK(m.rows() == 2);
  CHECK(m.dim() == 3);
  CHECK(m.values() == std::vector<float>{1, 2, 3, -4, 0.5f, 6});
  CHECK_FALSE(m.normalized());

  // Writer produces the same bytes.
  save_embedding_matrix(m, dir.file("again.gemb"));
  CHECK(read(dir.file("again.gemb")) == bytes);

  std::string bad = bytes;
  bad[0] = 'X';
  write(dir.file("bad.gemb"), bad);
  CHECK_THROWS_AS(load_embedding_matrix(dir.file("bad.gemb")), FormatError);

  std::string version = bytes;
  version[4] = 2;
  write(dir.file("v2.gemb"), version);
  CHECK_THROWS_AS(load_embedding_matrix(dir.file("v2.gemb")), FormatError);

  write(dir.file("short.gemb"), bytes.substr(0, bytes.size() - 2));
  CHECK_THROWS_AS(load_embedding_matrix(dir.file("short.gemb")), FormatError);

  std::string nan = bytes;
  const float q = std::nanf("");
  std::memcpy(nan.data() + 28, &q, 4);
  write(dir.file("nan.gemb"), nan);
  try {
    load_embedding_matrix(dir.file("nan.gemb"));
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
}

TEST_CASE("tsv matrix decode and errors") {
  testing::TempDir dir("es");
  write(dir.file("m.tsv"), "0\t1.0 0.0\n1\t0.0 1.0\n");
  const auto m = load_embedding_matrix(dir.file("m.tsv"));
  CHECK(m.rows() == 2);
  CHECK(m.dim() == 2);
  CHECK(m.values() == std::vector<float>{1, 0, 0, 1});

  write(dir.file("ragged.tsv"), "0\t1.0 0.0\n1\t0.0 1.0 2.0\n");
  try {
    load_embedding_matrix(dir.file("ragged.tsv"));
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  write(dir.file("inf.tsv"), "0\tinf 1\n");
  CHECK_THROWS_AS(load_embedding_matrix(dir.file("inf.tsv")), FormatError);

  Rng rng(3);
  const auto r = testing::random_matrix(7, 5, rng);
  save_embedding_matrix_tsv(r, dir.file("r.tsv"));
  CHECK(load_embedding_matrix(dir.file("r.tsv")) == r);
}

TEST_CASE("normalize rows") {
  const auto m = normalize_rows(matrix(3, 2, {3, 4, 1, 0, 0, 0}));
  CHECK(m.normalized());
  CHECK(m.zero_rows() == 1);
  CHECK(m.row(0)[0] == doctest::Approx(0.6));
  CHECK(m.row(0)[1] == doctest::Approx(0.8));
  CHECK(m.row(1)[0] == 1.0f);
  CHECK(m.row(2)[0] == 0.0f);
  CHECK(m.row(2)[1] == 0.0f);
  Rng rng(5);
  const auto n = normalize_rows(testing::random_matrix(50, 16, rng));
  for (std::size_t r = 0; r < n.rows(); ++r) {
    double s = 0.0;
    for (float x : n.row(r)) s += double(x) * x;
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-6);
  }
}

TEST_CASE("topk examples") {
  const auto a = normalize_rows(matrix(3, 2, {1, 0, 1, 0, 0, 1}));
  CHECK(topk_neighbors(a, 0, 1) == std::vector<Neighbor>{{1, 1.0}});
  const auto b = normalize_rows(matrix(2, 2, {1, 0, 0, 1}));
  CHECK(topk_neighbors(b, 0, 1) == std::vector<Neighbor>{{1, 0.0}});

  // Duplicates of row 0 at 3 and 5.
  const auto c = normalize_rows(matrix(6, 2, {1, 2, 0, 1, 1, 0, 1, 2, -1, 0, 1, 2}));
  const auto nb = topk_neighbors(c, 0, 2);
  REQUIRE(nb.size() == 2);
  CHECK(nb[0].index == 3);
  CHECK(nb[1].index == 5);
  CHECK(nb[0].similarity == doctest::Approx(1.0));

  CHECK_THROWS_AS(topk_neighbors(b, 0, 0), ArgumentError);
  CHECK_THROWS_AS(topk_neighbors(b, 0, 2), ArgumentError);
  CHECK_THROWS_AS(topk_neighbors(matrix(2, 2, {1, 0, 0, 1}), 0, 1), ArgumentError);
}

TEST_CASE("zero rows rank by index") {
  const auto m = normalize_rows(matrix(4, 2, {0, 0, 1, 0, 0, 1, 1, 1}));
  const auto nb = topk_neighbors(m, 0, 2);
  CHECK(nb == std::vector<Neighbor>{{1, 0.0}, {2, 0.0}});
  for (const auto& n : topk_neighbors(m, 1, 3)) {
    if (n.index == 0) CHECK(n.similarity == 0.0);
  }
}

TEST_CASE("topk equals a brute-force scan") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 2 + uniform_index(rng, 199);
    const std::size_t dim = 1 + uniform_index(rng, 32);
    const auto raw = testing::random_matrix(rows, dim, rng);
    const auto n = normalize_rows(raw);
    const std::size_t k = 1 + uniform_index(rng, std::min<std::size_t>(rows - 1, 20));
    for (std::size_t r = 0; r < rows; r += 1 + rows / 10) {
      const auto got = topk_neighbors(n, r, k);
      const auto want = brute_force(n, r, k);
      REQUIRE(got.size() == want.size());
      for (std::size_t j = 0; j < k; ++j) {
        CHECK(got[j].index == want[j].index);
        CHECK(std::abs(got[j].similarity - want[j].similarity) < 1e-6);
        CHECK(got[j].index != r);
      }
    }
  }
}

TEST_CASE("permuting rows permutes neighbor ids") {
  Rng rng(6);
  const auto raw = testing::random_matrix(40, 8, rng);
  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 39; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
  // permuted row perm[r] holds original row r
  std::vector<float> pv(raw.values().size());
  for (std::size_t r = 0; r < 40; ++r) {
    std::copy(raw.row(r).begin(), raw.row(r).end(), pv.begin() + static_cast<long>(perm[r] * 8));
  }
  const auto a = normalize_rows(raw);
  const auto b = normalize_rows(EmbeddingMatrix(40, 8, pv));
  for (std::size_t r = 0; r < 40; ++r) {
    const auto na = topk_neighbors(a, r, 5);
    const auto nb = topk_neighbors(b, perm[r], 5);
    for (std::size_t j = 0; j < 5; ++j) CHECK(nb[j].index == perm[na[j].index]);
  }
}

TEST_CASE("neighbor cache pooling") {
  const auto copies = build_neighbor_cache(matrix(3, 2, {0.5f, -2, 0.5f, -2, 0.5f, -2}), 2);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(copies.pooled_mean(r)[0] == 0.5f);
    CHECK(copies.pooled_mean(r)[1] == -2.0f);
  }
  const float s = static_cast<float>(1.0 / std::sqrt(2.0));
  const auto c = build_neighbor_cache(matrix(3, 2, {1, 0, 0, 1, s, s}), 2);
  CHECK(c.pooled_mean(2)[0] == doctest::Approx(0.5));
  CHECK(c.pooled_mean(2)[1] == doctest::Approx(0.5));
  CHECK_THROWS_AS(build_neighbor_cache(matrix(3, 2, {1, 0, 0, 1, s, s}), 3), ArgumentError);
}

TEST_CASE("cache invariants, scaling and determinism") {
  Rng rng(10);
  const auto raw = testing::random_matrix(60, 6, rng);
  const auto cache = build_neighbor_cache(raw, 7);
  CHECK(cache.k() == 7);
  for (std::size_t r = 0; r < 60; ++r) {
    const auto ids = cache.neighbors(r);
    CHECK(std::find(ids.begin(), ids.end(), r) == ids.end());
    for (std::size_t c = 0; c < 6; ++c) {
      double mean = 0.0;
      for (auto id : ids) mean += raw.row(id)[c];
      CHECK(std::abs(mean / 7.0 - cache.pooled_mean(r)[c]) < 1e-6);
    }
  }
  std::vector<float> scaled = raw.values();
  for (auto& v : scaled) v *= 2.5f;
  const auto sc = build_neighbor_cache(EmbeddingMatrix(60, 6, scaled), 7);
  for (std::size_t r = 0; r < 60; ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      CHECK(sc.pooled_mean(r)[c] == doctest::Approx(2.5 * cache.pooled_mean(r)[c]).epsilon(1e-6));
    }
  }
  testing::TempDir dir("es");
  save_neighbor_cache(cache, dir.file("a.gnbc"));
  save_neighbor_cache(build_neighbor_cache(raw, 7), dir.file("b.gnbc"));
  CHECK(read(dir.file("a.gnbc")) == read(dir.file("b.gnbc")));
  CHECK(load_neighbor_cache(dir.file("a.gnbc")) == cache);

  std::string bytes = read(dir.file("a.gnbc"));
  bytes[1] = 'X';
  write(dir.file("c.gnbc"), bytes);
  CHECK_THROWS_AS(load_neighbor_cache(dir.file("c.gnbc")), FormatError);
}

TEST_CASE("synthetic corpus with zero noise is exactly clustered") {
  SynthOptions o;
  o.n_users = 60;
  o.m_items = 40;
  o.n_clusters = 4;
  o.dim = 4;
  o.noise = 0.0;
  const auto c = synth_corpus(o);
  CHECK(c.items.rows() == 40);
  for (std::size_t i = 0; i < 40; ++i) {
    const auto r = c.items.row(i);
    for (std::size_t d = 0; d < 4; ++d) CHECK(r[d] == (d == c.item_cluster[i] ? 1.0f : 0.0f));
  }
  const auto n = normalize_rows(c.items);
  for (std::size_t i = 0; i < 40; ++i) {
    for (const auto& nb : topk_neighbors(n, i, 9)) CHECK(c.item_cluster[nb.index] == c.item_cluster[i]);
  }
}

TEST_CASE("synthetic corpus defaults and determinism") {
  const auto a = synth_corpus({});
  const auto b = synth_corpus({});
  CHECK(a.dataset.user_count == 500);
  CHECK(a.dataset.item_count == 200);
  CHECK(a.users.dim() == 32);
  CHECK(a.dataset.sequences == b.dataset.sequences);
  CHECK(a.users == b.users);
  CHECK(a.items == b.items);
  CHECK_NOTHROW(validate(a.dataset));
  double total = 0.0;
  for (const auto& s : a.dataset.sequences) {
    CHECK(s.size() >= 3);
    CHECK(s.size() <= 50);
    total += static_cast<double>(s.size());
  }
  CHECK(total / 500.0 == doctest::Approx(8.0).epsilon(0.2));
  for (std::size_t i = 0; i < 200; ++i) CHECK(a.item_cluster[i] == i % 8);

  SynthOptions other;
  other.seed = 43;
  CHECK(synth_corpus(other).dataset.sequences != a.dataset.sequences);

  SynthOptions bad;
  bad.n_clusters = 300;
  CHECK_THROWS_AS(synth_corpus(bad), ArgumentError);
  bad = {};
  bad.dim = 4;
  CHECK_THROWS_AS(synth_corpus(bad), ArgumentError);
}

}  // namespace
}  // namespace grasp
