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

// Holistic attention enhancement: sigmoid-gated self, similar and global
// branches over frozen semantic embeddings, fused by a one-hidden-layer MLP
// into the backbone's input space.

#ifndef GRASP_HAE_H_
#define GRASP_HAE_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "grasp/common.h"
#include "grasp/embedstore.h"

namespace grasp {

struct HaeConfig {
  std::size_t d_sem = 32;
  std::size_t h_hidden = 128;
  std::size_t h = 64;
  // Ablation switches.
  bool no_attention = false;     // every gate fixed at 1
  bool drop_similar = false;     // similar slot zero-filled
  bool drop_global = false;      // global slots zero-filled
  bool softmax_variant = false;  // gates normalized over the input sequence

  std::size_t concat_dim() const { return 4 * d_sem; }
};

struct HaeParams {
  Mat w1;  // 4*d_sem x h_hidden
  Mat b1;  // 1 x h_hidden
  Mat w2;  // h_hidden x h
  Mat b2;  // 1 x h

  // Zero tensors shaped for cfg.
  static HaeParams zeros(const HaeConfig& cfg);
  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static HaeParams init(const HaeConfig& cfg, std::uint64_t seed);

  template <typename F>
  void for_each(F&& fn) {
    fn("hae.w1", w1);
    fn("hae.b1", b1);
    fn("hae.w2", w2);
    fn("hae.b2", b2);
  }
  template <typename F>
  void for_each(F&& fn) const {
    fn("hae.w1", w1);
    fn("hae.b1", b1);
    fn("hae.w2", w2);
    fn("hae.b2", b2);
  }
};

// Throws ArgumentError unless every tensor matches cfg.
void check_shapes(const HaeParams& p, const HaeConfig& cfg);

struct SemanticBundle {
  RowVec u;         // user embedding
  RowVec u_bar;     // mean of the user's neighbors
  RowVec item;      // item embedding
  RowVec item_bar;  // mean of the item's neighbors
};

struct Branches {
  RowVec self_branch;     // d_sem
  RowVec similar_branch;  // d_sem
  RowVec global_branch;   // 2*d_sem
  double self_gate = 0.0;
  double similar_gate = 0.0;
  double global_gate = 0.0;

  // [self | similar | global], length 4*d_sem.
  RowVec concat() const;
};

struct EnhancedItem {
  Branches branches;
  RowVec fused;  // h
};

// sigma(q.v / sqrt(scale_dim)).
double sigmoid_gate(const RowVec& q, const RowVec& v, std::size_t scale_dim);

// Per-item gating with the default (full) configuration unless cfg says
// otherwise. The softmax variant needs a sequence and is rejected here.
Branches enhance_item(const SemanticBundle& b, const HaeConfig& cfg = {});

// w2 * relu(w1 * concat + b1) + b2, written for row vectors.
RowVec fuse(const Branches& branches, const HaeParams& p);

// Row lookup into a frozen embedding database and its neighbor cache.
// row_of maps a dense dataset id to a row of the database (identity if empty).
class SemanticTable {
 public:
  SemanticTable() = default;
  SemanticTable(std::shared_ptr<const EmbeddingMatrix> embeddings,
                std::shared_ptr<const NeighborCache> cache,
                std::vector<std::uint32_t> row_of = {});

  std::size_t size() const;
  std::size_t dim() const { return embeddings_ ? embeddings_->dim() : 0; }
  std::span<const float> embedding(std::size_t id) const;
  std::span<const float> pooled(std::size_t id) const;
  const EmbeddingMatrix& embeddings() const { return *embeddings_; }
  const NeighborCache& cache() const { return *cache_; }

 private:
  std::size_t row(std::size_t id) const;
  std::shared_ptr<const EmbeddingMatrix> embeddings_;
  std::shared_ptr<const NeighborCache> cache_;
  std::vector<std::uint32_t> row_of_;
};

struct SemanticStores {
  SemanticTable users;
  SemanticTable items;

  SemanticBundle bundle(UserId user, ItemId item) const;
};

// Concatenated branch vectors (N x 4*d_sem) for one user and a list of
// items. With as_sequence set and the softmax variant enabled, each gate is
// normalized over positions <= t (causal); candidate lists always gate
// items independently.
Mat enhance_rows(const SemanticStores& stores, const HaeConfig& cfg, UserId user,
                 std::span<const ItemId> items, bool as_sequence);

// Cached activations of one batched MLP evaluation.
struct HaeForward {
  Mat input;   // N x 4*d_sem
  Mat hidden;  // N x h_hidden, post-activation
  Mat output;  // N x h
};

HaeForward hae_forward(const HaeParams& p, Mat input);

// Accumulates dLoss/dParams into grads given dLoss/dOutput. Semantic inputs
// are constants, so no input gradient exists.
void hae_backward(const HaeParams& p, const HaeForward& fwd, const Mat& d_output,
                  HaeParams& grads);

// Row t = fuse(enhance_item(bundle(user, items[t]))). L = 0 gives 0 x h.
Mat enhance_sequence(const SemanticStores& stores, const HaeConfig& cfg, const HaeParams& p,
                     UserId user, std::span<const ItemId> items);

void save_hae_checkpoint(const HaeParams& p, const HaeConfig& cfg, const std::string& path);
// Throws FormatError on a malformed file and ArgumentError when the stored
// dimensions differ from cfg.
HaeParams load_hae_checkpoint(const std::string& path, const HaeConfig& cfg);

}  // namespace grasp

#endif  // GRASP_HAE_H_
