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

// A sequential recommender: an item encoder (holistic attention enhancement
// over frozen semantic stores, or a plain ID table) feeding a backbone, with
// candidates scored by sigma(o . i_all).

#ifndef GRASP_MODEL_H_
#define GRASP_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grasp/backbone.h"
#include "grasp/common.h"
#include "grasp/hae.h"

namespace grasp {

enum class EncoderKind : std::uint8_t { kHae = 1, kIdOnly = 2 };

std::string to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(const std::string& name);

struct ModelConfig {
  EncoderKind encoder = EncoderKind::kHae;
  HaeConfig hae;
  BackboneConfig backbone;
  // Experimental: add a trainable per-item vector to the HAE output.
  bool add_id_embedding = false;
  std::size_t item_count = 0;

  bool uses_hae() const { return encoder == EncoderKind::kHae; }
  bool uses_id_table() const { return encoder == EncoderKind::kIdOnly || add_id_embedding; }
  // Throws ArgumentError on inconsistent settings (e.g. hae.h != backbone.h).
  void validate() const;
};

struct ModelParams {
  HaeParams hae;         // empty unless uses_hae()
  Mat item_ids;          // item_count x h, empty unless uses_id_table()
  BackboneParams backbone;

  static ModelParams zeros(const ModelConfig& cfg);
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  // Every learnable tensor, in a fixed order. Names are "<group>.<tensor>".
  std::vector<std::pair<std::string, Mat*>> tensors();
  std::vector<std::pair<std::string, const Mat*>> tensors() const;
  // Distinct group prefixes of tensors(), in order.
  std::vector<std::string> groups() const;

  void set_zero();
  // this += other, tensor by tensor.
  void add(const ModelParams& other);
  // Rounds every entry to the nearest 32-bit float, as a checkpoint would.
  void round_to_f32();
  bool operator==(const ModelParams& other) const;
};

// One training sequence: inputs[t] predicts targets[t]; negatives holds
// n_neg items per position, row-major.
struct TrainingExample {
  UserId user = 0;
  std::vector<ItemId> inputs;
  std::vector<ItemId> targets;
  std::vector<ItemId> negatives;
  std::size_t n_neg = 0;

  std::size_t pool_size() const { return targets.size() * (1 + n_neg); }
};

class Model {
 public:
  // `stores` may be null for an ID-only model.
  Model(ModelConfig cfg, std::shared_ptr<const SemanticStores> stores, ModelParams params);

  const ModelConfig& config() const { return cfg_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  const SemanticStores* stores() const { return stores_.get(); }

  // i_all rows for `items`. Sequence mode matters only for the softmax
  // ablation, which normalizes gates over the positions of a history.
  Mat encode(UserId user, std::span<const ItemId> items, bool as_sequence) const;

  // The most recent max_seq_len items of `history`, encoded and run through
  // the backbone in evaluation mode; returns o at the last position.
  RowVec user_representation(UserId user, std::span<const ItemId> history) const;

  // Logits o . i_all for each candidate. Ranking uses logits so that
  // saturation of the sigmoid cannot create artificial ties.
  std::vector<double> candidate_logits(UserId user, std::span<const ItemId> history,
                                       std::span<const ItemId> candidates) const;

  // Sum over the example's pool of clamped BCE terms. When grads is
  // non-null, accumulates scale * dLoss/dParams. Dropout is applied when
  // dropout_rng is non-null.
  double example_loss(const TrainingExample& ex, double scale, Rng* dropout_rng,
                      ModelParams* grads) const;

 private:
  struct EncodeCache {
    HaeForward hae;
    std::vector<ItemId> items;
  };
  Mat encode_split(UserId user, std::span<const ItemId> sequence,
                   std::span<const ItemId> candidates, EncodeCache* cache) const;
  void encode_backward(const EncodeCache& cache, const Mat& d_rows, ModelParams& grads) const;

  ModelConfig cfg_;
  std::shared_ptr<const SemanticStores> stores_;
  ModelParams params_;
};

// Clamped binary cross-entropy, -(1/|B|) sum [y log p + (1-y) log(1-p)],
// with p clamped to [1e-7, 1 - 1e-7].
double bce_loss(std::span<const double> scores, std::span<const double> labels);

inline constexpr double kProbabilityClamp = 1e-7;

// Single clamped BCE term for a logit.
double bce_term(double logit, double label);

// Writes <dir>/hae.ghae and/or <dir>/items.gide plus <dir>/backbone.gbkb.
void save_model_checkpoint(const ModelParams& p, const ModelConfig& cfg, const std::string& dir);
ModelParams load_model_checkpoint(const ModelConfig& cfg, const std::string& dir);

}  // namespace grasp

#endif  // GRASP_MODEL_H_
