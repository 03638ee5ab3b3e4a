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

// Sequential encoders mapping an L x h input matrix to per-position user
// representations: a stacked GRU (GRU4Rec) and a causal pre-LN transformer
// (SASRec). Both provide exact reverse-mode gradients.

#ifndef GRASP_BACKBONE_H_
#define GRASP_BACKBONE_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "grasp/common.h"

namespace grasp {

enum class BackboneKind : std::uint8_t { kGru4Rec = 1, kSasRec = 2 };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(const std::string& name);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::kSasRec;
  std::size_t h = 64;
  std::size_t max_seq_len = 100;
  std::size_t n_layers = 2;
  std::size_t n_heads = 1;
  double dropout = 0.2;

  // Throws ArgumentError on an inconsistent configuration.
  void validate() const;
};

struct GruLayer {
  Mat wz, wr, wn;  // input weights, h x h
  Mat uz, ur, un;  // recurrent weights, h x h
  Mat bz, br, bn;  // 1 x h
};

struct SasBlock {
  Mat ln1_g, ln1_b;
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
  Mat ln2_g, ln2_b;
  Mat ff_w1, ff_b1, ff_w2, ff_b2;
};

struct BackboneParams {
  BackboneKind kind = BackboneKind::kSasRec;
  std::vector<GruLayer> gru;
  Mat pos;  // max_seq_len x h, SASRec only
  std::vector<SasBlock> blocks;
  Mat lnf_g, lnf_b;

  static BackboneParams zeros(const BackboneConfig& cfg);
  // Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero,
  // layer-norm gains one.
  static BackboneParams init(const BackboneConfig& cfg, std::uint64_t seed);

  template <typename Self, typename F>
  static void visit(Self& self, F&& fn);
  template <typename F>
  void for_each(F&& fn) { visit(*this, fn); }
  template <typename F>
  void for_each(F&& fn) const { visit(*this, fn); }
};

struct SequenceOutput {
  Mat per_position;  // L x h
  RowVec final() const { return per_position.row(per_position.rows() - 1); }
};

struct LayerNormCache {
  Mat xhat;
  Vec inv_std;
};

struct GruLayerCache {
  Mat input;   // L x h, after dropout
  Mat drop;    // dropout scale applied to the input (empty when inactive)
  Mat states;  // (L+1) x h, row 0 is the zero initial state
  Mat z, r, n;
};

struct SasBlockCache {
  Mat input;
  LayerNormCache ln1;
  Mat a, q, k, v;
  std::vector<Mat> probs;  // per head, L x L causal attention weights
  Mat z;                   // concatenated head outputs
  Mat drop_attn;
  Mat e1;
  LayerNormCache ln2;
  Mat f_in, ff_hidden;
  Mat drop_ff;
};

struct BackboneCache {
  std::vector<GruLayerCache> gru;
  Mat drop_emb;
  std::vector<SasBlockCache> blocks;
  LayerNormCache lnf;
};

// Forward pass. Dropout is active only when `training` is set and a rng is
// given. When `cache` is non-null the activations needed by
// backbone_backward are stored there.
SequenceOutput backbone_forward(const BackboneConfig& cfg, const BackboneParams& p,
                                const Mat& inputs, bool training = false,
                                Rng* dropout_rng = nullptr, BackboneCache* cache = nullptr);

// Accumulates parameter gradients into `grads` and returns dLoss/dInputs.
Mat backbone_backward(const BackboneConfig& cfg, const BackboneParams& p,
                      const BackboneCache& cache, const Mat& d_output, BackboneParams& grads);

// Evaluation-mode conveniences; throw on an empty or over-long sequence.
SequenceOutput gru4rec_forward(const BackboneConfig& cfg, const BackboneParams& p,
                               const Mat& inputs);
SequenceOutput sasrec_forward(const BackboneConfig& cfg, const BackboneParams& p,
                              const Mat& inputs, BackboneCache* cache = nullptr);

// Left-padded input: the first n_pad rows are padding and are ignored. Output
// rows for padding are zero; real rows equal the unpadded forward pass.
SequenceOutput forward_left_padded(const BackboneConfig& cfg, const BackboneParams& p,
                                   const Mat& padded, std::size_t n_pad);

// sigma(o . item).
double score(const RowVec& o, const RowVec& item_repr);

void save_backbone_checkpoint(const BackboneParams& p, const BackboneConfig& cfg,
                              const std::string& path);
// Throws ArgumentError when the stored config differs from cfg (dropout aside).
BackboneParams load_backbone_checkpoint(const std::string& path, const BackboneConfig& cfg);

template <typename Self, typename F>
void BackboneParams::visit(Self& self, F&& fn) {
  for (std::size_t l = 0; l < self.gru.size(); ++l) {
    auto& g = self.gru[l];
    const std::string pre = "backbone.gru" + std::to_string(l) + ".";
    fn((pre + "wz").c_str(), g.wz);
    fn((pre + "wr").c_str(), g.wr);
    fn((pre + "wn").c_str(), g.wn);
    fn((pre + "uz").c_str(), g.uz);
    fn((pre + "ur").c_str(), g.ur);
    fn((pre + "un").c_str(), g.un);
    fn((pre + "bz").c_str(), g.bz);
    fn((pre + "br").c_str(), g.br);
    fn((pre + "bn").c_str(), g.bn);
  }
  if (self.kind == BackboneKind::kSasRec) {
    fn("backbone.pos", self.pos);
    for (std::size_t l = 0; l < self.blocks.size(); ++l) {
      auto& b = self.blocks[l];
      const std::string pre = "backbone.block" + std::to_string(l) + ".";
      fn((pre + "ln1_g").c_str(), b.ln1_g);
      fn((pre + "ln1_b").c_str(), b.ln1_b);
      fn((pre + "wq").c_str(), b.wq);
      fn((pre + "bq").c_str(), b.bq);
      fn((pre + "wk").c_str(), b.wk);
      fn((pre + "bk").c_str(), b.bk);
      fn((pre + "wv").c_str(), b.wv);
      fn((pre + "bv").c_str(), b.bv);
      fn((pre + "wo").c_str(), b.wo);
      fn((pre + "bo").c_str(), b.bo);
      fn((pre + "ln2_g").c_str(), b.ln2_g);
      fn((pre + "ln2_b").c_str(), b.ln2_b);
      fn((pre + "ff_w1").c_str(), b.ff_w1);
      fn((pre + "ff_b1").c_str(), b.ff_b1);
      fn((pre + "ff_w2").c_str(), b.ff_w2);
      fn((pre + "ff_b2").c_str(), b.ff_b2);
    }
    fn("backbone.lnf_g", self.lnf_g);
    fn("backbone.lnf_b", self.lnf_b);
  }
}

}  // namespace grasp

#endif  // GRASP_BACKBONE_H_
