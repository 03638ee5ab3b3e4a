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

// Frozen semantic embedding databases, exact cosine top-k retrieval with
// self-exclusion, neighbor-mean pooling, and a synthetic corpus generator.

#ifndef GRASP_EMBEDSTORE_H_
#define GRASP_EMBEDSTORE_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grasp/common.h"
#include "grasp/dataset.h"

namespace grasp {

class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  // Throws ArgumentError on a size mismatch or dim == 0 and FormatError on a
  // non-finite value.
  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> values,
                  bool normalized = false);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  bool normalized() const { return normalized_; }
  // Number of all-zero rows seen by normalize_rows (0 otherwise).
  std::size_t zero_rows() const { return zero_rows_; }

  std::span<const float> row(std::size_t r) const {
    return {values_.data() + r * dim_, dim_};
  }
  const std::vector<float>& values() const { return values_; }

  // FNV-1a over the raw bytes of the shape and payload.
  std::uint64_t checksum() const;

  friend EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m);
  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> values_;
  bool normalized_ = false;
  std::size_t zero_rows_ = 0;
};

// Binary GEMB when the path ends in .gemb or starts with the GEMB magic,
// TSV (`dense_id<TAB>v0 v1 ...`) otherwise.
EmbeddingMatrix load_embedding_matrix(const std::string& path);
void save_embedding_matrix(const EmbeddingMatrix& m, const std::string& path);
void save_embedding_matrix_tsv(const EmbeddingMatrix& m, const std::string& path);

// Scales every nonzero row to unit norm. Zero rows stay zero and are counted.
EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m);

struct Neighbor {
  std::size_t index;
  double similarity;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Cosine similarity of `row` against every row of a normalized matrix.
// Zero rows have similarity 0 to everything.
std::vector<double> similarities(const EmbeddingMatrix& normalized, std::size_t row);

// The k most similar rows other than `row`, by descending similarity with ties
// broken by ascending index. Exact.
std::vector<Neighbor> topk_neighbors(const EmbeddingMatrix& normalized, std::size_t row,
                                     std::size_t k);

class NeighborCache {
 public:
  NeighborCache() = default;
  NeighborCache(std::size_t k, std::size_t rows, std::size_t dim,
                std::vector<std::uint32_t> neighbor_ids, std::vector<float> pooled_means);

  std::size_t k() const { return k_; }
  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  std::span<const std::uint32_t> neighbors(std::size_t r) const {
    return {neighbor_ids_.data() + r * k_, k_};
  }
  std::span<const float> pooled_mean(std::size_t r) const {
    return {pooled_means_.data() + r * dim_, dim_};
  }

  friend bool operator==(const NeighborCache&, const NeighborCache&) = default;

 private:
  std::size_t k_ = 0;
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<std::uint32_t> neighbor_ids_;
  std::vector<float> pooled_means_;
};

// Neighbors are ranked on L2-normalized copies of `source`; pooled means
// average the original rows. Rows are processed in parallel with output
// identical to a sequential build.
NeighborCache build_neighbor_cache(const EmbeddingMatrix& source, std::size_t k);

void save_neighbor_cache(const NeighborCache& cache, const std::string& path);
NeighborCache load_neighbor_cache(const std::string& path);

struct SynthOptions {
  std::size_t n_users = 500;
  std::size_t m_items = 200;
  std::size_t n_clusters = 8;
  std::size_t dim = 32;
  double noise = 0.1;
  std::uint64_t seed = 42;
  double in_cluster_rate = 0.8;
  double mean_length = 8.0;
  std::size_t min_length = 3;
  std::size_t max_length = 50;
  // Zipf exponent of item popularity inside a cluster; 0 is uniform.
  double popularity_skew = 1.0;
};

struct SynthCorpus {
  InteractionDataset dataset;
  EmbeddingMatrix users;
  EmbeddingMatrix items;
  std::vector<std::size_t> user_cluster;
  std::vector<std::size_t> item_cluster;
};

// Cluster-structured corpus: item i belongs to cluster i % n_clusters and
// embeds as that cluster's orthonormal centroid plus N(0, noise^2) per
// coordinate. Each user draws a home cluster, a geometric length, and items
// from the home cluster with probability in_cluster_rate. A user's embedding
// is the mean of their non-held-out item embeddings plus noise.
SynthCorpus synth_corpus(const SynthOptions& opts);

}  // namespace grasp

#endif  // GRASP_EMBEDSTORE_H_
