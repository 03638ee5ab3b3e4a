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

#include "grasp/embedstore.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "grasp/binary_io.h"
#include "grasp/parallel.h"

namespace grasp {

namespace {

constexpr std::uint16_t kGembVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint16_t kGnbcVersion = 1;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> values,
                                 bool normalized)
    : rows_(rows), dim_(dim), values_(std::move(values)), normalized_(normalized) {
  if (dim_ == 0) throw ArgumentError("embedding dim must be positive");
  if (values_.size() != rows_ * dim_) {
    throw ArgumentError("embedding payload has " + std::to_string(values_.size()) +
                        " values, expected " + std::to_string(rows_ * dim_));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw FormatError("non-finite embedding value at row " + std::to_string(i / dim_));
    }
  }
}

std::uint64_t EmbeddingMatrix::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::uint64_t shape[2] = {rows_, dim_};
  feed(shape, sizeof(shape));
  feed(values_.data(), values_.size() * sizeof(float));
  return h;
}

EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m) {
  EmbeddingMatrix out = m;
  out.zero_rows_ = 0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    float* row = out.values_.data() + r * m.dim();
    const double norm = std::sqrt(dot(m.row(r), m.row(r)));
    if (norm == 0.0) {
      ++out.zero_rows_;
      continue;
    }
    for (std::size_t c = 0; c < m.dim(); ++c) row[c] = static_cast<float>(row[c] / norm);
  }
  out.normalized_ = true;
  return out;
}

namespace {

EmbeddingMatrix load_gemb(const std::string& path) {
  auto in = io::ByteReader::from_file(path);
  in.expect_magic("GEMB");
  const auto version = in.u16();
  if (version != kGembVersion) in.fail("unsupported GEMB version " + std::to_string(version));
  const auto dtype = in.u8();
  if (dtype != kDtypeF32) in.fail("unsupported dtype " + std::to_string(dtype));
  in.u8();  // reserved
  const std::uint64_t rows = in.u64();
  const std::uint64_t dim = in.u64();
  if (dim == 0) in.fail("dim must be positive");
  if (in.remaining() / 4 / dim < rows || in.remaining() != rows * dim * 4) {
    in.fail("payload size does not match rows x dim");
  }
  std::vector<float> values(rows * dim);
  for (auto& v : values) {
    v = in.f32();
    if (!std::isfinite(v)) {
      throw FormatError(path + ": non-finite value at byte offset " +
                        std::to_string(in.offset() - 4));
    }
  }
  return EmbeddingMatrix(rows, dim, std::move(values));
}

EmbeddingMatrix load_embedding_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file: " + path);
  std::vector<std::vector<float>> rows;
  std::vector<bool> present;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw FormatError(path + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) fail("expected dense_id<TAB>values");
    std::size_t id = 0;
    {
      const auto [p, ec] = std::from_chars(line.data(), line.data() + tab, id);
      if (ec != std::errc() || p != line.data() + tab) fail("bad dense id");
    }
    std::vector<float> values;
    const char* p = line.data() + tab + 1;
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double v = 0.0;
      const auto [q, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) fail("bad decimal value");
      if (!std::isfinite(v)) fail("non-finite value");
      values.push_back(static_cast<float>(v));
      p = q;
      if (p < end && *p != ' ') fail("bad decimal value");
    }
    if (values.empty()) fail("row has no values");
    if (dim == 0) dim = values.size();
    if (values.size() != dim) {
      fail("row width " + std::to_string(values.size()) + " differs from " + std::to_string(dim));
    }
    if (id >= rows.size()) {
      rows.resize(id + 1);
      present.resize(id + 1, false);
    }
    if (present[id]) fail("duplicate dense id " + std::to_string(id));
    present[id] = true;
    rows[id] = std::move(values);
  }
  if (dim == 0) throw FormatError(path + ": no embedding rows");
  const auto missing = std::find(present.begin(), present.end(), false);
  if (missing != present.end()) {
    throw FormatError(path + ": missing dense id " +
                      std::to_string(std::distance(present.begin(), missing)));
  }
  std::vector<float> flat;
  flat.reserve(rows.size() * dim);
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return EmbeddingMatrix(rows.size(), dim, std::move(flat));
}

}  // namespace

EmbeddingMatrix load_embedding_matrix(const std::string& path) {
  if (ends_with(path, ".gemb")) return load_gemb(path);
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open embedding file: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() == 4 && std::memcmp(magic, "GEMB", 4) == 0) return load_gemb(path);
  }
  return load_embedding_tsv(path);
}

void save_embedding_matrix(const EmbeddingMatrix& m, const std::string& path) {
  io::ByteWriter out;
  out.magic("GEMB");
  out.u16(kGembVersion);
  out.u8(kDtypeF32);
  out.u8(0);
  out.u64(m.rows());
  out.u64(m.dim());
  for (float v : m.values()) out.f32(v);
  out.write_file(path);
}

void save_embedding_matrix_tsv(const EmbeddingMatrix& m, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.precision(9);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out << r << '\t';
    const auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? " " : "") << row[c];
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<double> similarities(const EmbeddingMatrix& normalized, std::size_t row) {
  if (row >= normalized.rows()) throw ArgumentError("row index out of range");
  std::vector<double> sims(normalized.rows());
  const auto q = normalized.row(row);
  for (std::size_t j = 0; j < normalized.rows(); ++j) sims[j] = dot(q, normalized.row(j));
  return sims;
}

std::vector<Neighbor> topk_neighbors(const EmbeddingMatrix& normalized, std::size_t row,
                                     std::size_t k) {
  if (!normalized.normalized()) throw ArgumentError("topk_neighbors requires a normalized matrix");
  if (row >= normalized.rows()) throw ArgumentError("row index out of range");
  if (k == 0 || k + 1 > normalized.rows()) {
    throw ArgumentError("k=" + std::to_string(k) + " out of range for " +
                        std::to_string(normalized.rows()) + " rows");
  }
  const auto sims = similarities(normalized, row);
  std::vector<std::size_t> order;
  order.reserve(sims.size() - 1);
  for (std::size_t j = 0; j < sims.size(); ++j) {
    if (j != row) order.push_back(j);
  }
  const auto before = [&sims](std::size_t a, std::size_t b) {
    return sims[a] > sims[b] || (sims[a] == sims[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    before);
  std::vector<Neighbor> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = {order[i], sims[order[i]]};
  return out;
}

NeighborCache::NeighborCache(std::size_t k, std::size_t rows, std::size_t dim,
                             std::vector<std::uint32_t> neighbor_ids,
                             std::vector<float> pooled_means)
    : k_(k), rows_(rows), dim_(dim), neighbor_ids_(std::move(neighbor_ids)),
      pooled_means_(std::move(pooled_means)) {
  if (neighbor_ids_.size() != rows_ * k_ || pooled_means_.size() != rows_ * dim_) {
    throw ArgumentError("neighbor cache payload does not match its shape");
  }
  for (std::uint32_t id : neighbor_ids_) {
    if (id >= rows_) throw FormatError("neighbor id " + std::to_string(id) + " out of range");
  }
}

NeighborCache build_neighbor_cache(const EmbeddingMatrix& source, std::size_t k) {
  const std::size_t rows = source.rows();
  const std::size_t dim = source.dim();
  if (k == 0 || k + 1 > rows) {
    throw ArgumentError("k=" + std::to_string(k) + " must satisfy 1 <= k < rows=" +
                        std::to_string(rows));
  }
  const EmbeddingMatrix normalized = normalize_rows(source);
  std::vector<std::uint32_t> ids(rows * k);
  std::vector<float> means(rows * dim);
  parallel_for(rows, [&](std::size_t r) {
    const auto nbrs = topk_neighbors(normalized, r, k);
    std::vector<double> acc(dim, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      ids[r * k + j] = static_cast<std::uint32_t>(nbrs[j].index);
      const auto src = source.row(nbrs[j].index);
      for (std::size_t c = 0; c < dim; ++c) acc[c] += src[c];
    }
    for (std::size_t c = 0; c < dim; ++c) {
      means[r * dim + c] = static_cast<float>(acc[c] / static_cast<double>(k));
    }
  });
  return NeighborCache(k, rows, dim, std::move(ids), std::move(means));
}

void save_neighbor_cache(const NeighborCache& cache, const std::string& path) {
  io::ByteWriter out;
  out.magic("GNBC");
  out.u16(kGnbcVersion);
  out.u32(static_cast<std::uint32_t>(cache.k()));
  out.u64(cache.rows());
  out.u64(cache.dim());
  for (std::size_t r = 0; r < cache.rows(); ++r) {
    for (std::uint32_t id : cache.neighbors(r)) out.u64(id);
    for (float v : cache.pooled_mean(r)) out.f32(v);
  }
  out.write_file(path);
}

NeighborCache load_neighbor_cache(const std::string& path) {
  auto in = io::ByteReader::from_file(path);
  in.expect_magic("GNBC");
  const auto version = in.u16();
  if (version != kGnbcVersion) in.fail("unsupported GNBC version " + std::to_string(version));
  const std::size_t k = in.u32();
  const std::uint64_t rows = in.u64();
  const std::uint64_t dim = in.u64();
  if (k == 0 || dim == 0) in.fail("k and dim must be positive");
  const std::uint64_t per_row = k * 8 + dim * 4;
  if (in.remaining() % per_row != 0 || in.remaining() / per_row != rows) {
    in.fail("payload size does not match rows");
  }
  std::vector<std::uint32_t> ids(rows * k);
  std::vector<float> means(rows * dim);
  for (std::uint64_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::uint64_t id = in.u64();
      if (id >= rows || id == r) in.fail("invalid neighbor id " + std::to_string(id));
      ids[r * k + j] = static_cast<std::uint32_t>(id);
    }
    for (std::size_t c = 0; c < dim; ++c) {
      const float v = in.f32();
      if (!std::isfinite(v)) in.fail("non-finite pooled mean");
      means[r * dim + c] = v;
    }
  }
  return NeighborCache(k, rows, dim, std::move(ids), std::move(means));
}

namespace {

// Cumulative Zipf weights over `n` ranks.
std::vector<double> zipf_cdf(std::size_t n, double skew) {
  std::vector<double> cdf(n);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    total += 1.0 / std::pow(static_cast<double>(r + 1), skew);
    cdf[r] = total;
  }
  for (auto& c : cdf) c /= total;
  return cdf;
}

std::size_t draw_cdf(const std::vector<double>& cdf, Rng& rng) {
  const double u = uniform_unit(rng);
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

}  // namespace

SynthCorpus synth_corpus(const SynthOptions& o) {
  if (o.n_users == 0 || o.m_items == 0 || o.n_clusters == 0) {
    throw ArgumentError("synth: users, items and clusters must be positive");
  }
  if (o.n_clusters > o.m_items) throw ArgumentError("synth: more clusters than items");
  if (o.dim < o.n_clusters) throw ArgumentError("synth: dim must be >= n_clusters");
  if (!(o.noise >= 0.0) || !std::isfinite(o.noise)) throw ArgumentError("synth: noise must be >= 0");
  if (o.min_length < 3 || o.max_length < o.min_length || !(o.mean_length >= 1.0)) {
    throw ArgumentError("synth: invalid sequence length bounds");
  }
  if (!(o.in_cluster_rate >= 0.0 && o.in_cluster_rate <= 1.0)) {
    throw ArgumentError("synth: in_cluster_rate must lie in [0, 1]");
  }

  Rng item_rng(derive_seed(o.seed, 1));
  Rng seq_rng(derive_seed(o.seed, 2));
  Rng user_rng(derive_seed(o.seed, 3));

  SynthCorpus corpus;
  corpus.item_cluster.resize(o.m_items);
  std::vector<std::vector<ItemId>> members(o.n_clusters);
  for (ItemId i = 0; i < o.m_items; ++i) {
    corpus.item_cluster[i] = i % o.n_clusters;
    members[i % o.n_clusters].push_back(i);
  }

  std::vector<float> item_values(o.m_items * o.dim);
  for (ItemId i = 0; i < o.m_items; ++i) {
    for (std::size_t c = 0; c < o.dim; ++c) {
      const double centroid = c == corpus.item_cluster[i] ? 1.0 : 0.0;
      const double jitter = o.noise > 0.0 ? o.noise * standard_normal(item_rng) : 0.0;
      item_values[i * o.dim + c] = static_cast<float>(centroid + jitter);
    }
  }
  corpus.items = EmbeddingMatrix(o.m_items, o.dim, std::move(item_values));

  std::vector<std::vector<double>> cluster_cdf(o.n_clusters);
  for (std::size_t c = 0; c < o.n_clusters; ++c) {
    cluster_cdf[c] = zipf_cdf(members[c].size(), o.popularity_skew);
  }

  InteractionDataset& ds = corpus.dataset;
  ds.item_count = o.m_items;
  ds.sequences.resize(o.n_users);
  corpus.user_cluster.resize(o.n_users);
  const double stop = 1.0 / o.mean_length;
  for (UserId u = 0; u < o.n_users; ++u) {
    const std::size_t home = uniform_index(seq_rng, o.n_clusters);
    corpus.user_cluster[u] = home;
    // Geometric on {1, 2, ...} with the configured mean, then clamped.
    std::size_t len = 1;
    if (stop < 1.0) {
      double un;
      do {
        un = uniform_unit(seq_rng);
      } while (un <= 0.0);
      len += static_cast<std::size_t>(std::floor(std::log(un) / std::log1p(-stop)));
    }
    len = std::clamp(len, o.min_length, o.max_length);

    auto& seq = ds.sequences[u];
    std::vector<bool> used(o.m_items, false);
    while (seq.size() < len) {
      ItemId pick = 0;
      // Prefer unseen items; give up after a few tries when a cluster is exhausted.
      for (int attempt = 0; attempt < 32; ++attempt) {
        std::size_t cluster = home;
        if (o.n_clusters > 1 && uniform_unit(seq_rng) >= o.in_cluster_rate) {
          cluster = uniform_index(seq_rng, o.n_clusters - 1);
          if (cluster >= home) ++cluster;
        }
        pick = members[cluster][draw_cdf(cluster_cdf[cluster], seq_rng)];
        if (!used[pick]) break;
      }
      used[pick] = true;
      seq.push_back(pick);
    }
  }
  finalize_frequencies(ds);

  std::vector<float> user_values(o.n_users * o.dim);
  for (UserId u = 0; u < o.n_users; ++u) {
    const auto& seq = ds.sequences[u];
    // The last two events are held out by the leave-one-out protocol.
    const std::size_t visible = seq.size() - 2;
    for (std::size_t c = 0; c < o.dim; ++c) {
      double mean = 0.0;
      for (std::size_t t = 0; t < visible; ++t) mean += corpus.items.row(seq[t])[c];
      mean /= static_cast<double>(visible);
      const double jitter = o.noise > 0.0 ? o.noise * standard_normal(user_rng) : 0.0;
      user_values[u * o.dim + c] = static_cast<float>(mean + jitter);
    }
  }
  corpus.users = EmbeddingMatrix(o.n_users, o.dim, std::move(user_values));
  return corpus;
}

}  // namespace grasp
