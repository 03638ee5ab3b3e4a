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

// BCE training with sampled negatives, Adam updates, and early stopping on
// validation NDCG@10.

#ifndef GRASP_TRAINER_H_
#define GRASP_TRAINER_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "grasp/common.h"
#include "grasp/dataset.h"
#include "grasp/eval.h"
#include "grasp/model.h"

namespace grasp {

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 128;
  std::size_t patience = 20;
  std::size_t max_epochs = 200;
  std::size_t negatives_per_positive = 1;
  std::uint64_t seed = 42;
  std::size_t eval_negatives = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

// Adam moment estimates shaped like the model parameters.
struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;
};

struct TrainState {
  std::size_t epoch = 0;
  double best_val_ndcg10 = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_since_best = 0;
  Rng rng;
  std::vector<double> loss_history;  // mean loss per epoch
  std::vector<double> val_history;   // validation NDCG@10 per epoch
  AdamState adam;
};

TrainState initial_state(const Model& model, const TrainConfig& cfg);

// One example per user in `users` (indices into split.entries): the most
// recent max_seq_len positions of the train prefix shifted by one, with
// negatives_per_positive uniform non-history items per position. Users whose
// prefix has a single item contribute no positions and are omitted.
std::vector<TrainingExample> make_training_batch(const LeaveOneOutSplit& split,
                                                 const InteractionDataset& ds,
                                                 std::span<const std::size_t> users,
                                                 const TrainConfig& cfg,
                                                 std::size_t max_seq_len, Rng& rng);

// Mean loss over the pool and its gradient (sum over examples, scaled by
// 1/total pool size). Examples are processed in fixed-size chunks whose
// partial gradients are reduced in order, so the result does not depend on
// the thread count.
double batch_loss_and_grad(const Model& model, std::span<const TrainingExample> batch,
                           ModelParams& grads, std::uint64_t dropout_seed);

// One Adam step over every tensor of the model.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& adam,
               const TrainConfig& cfg);

// Shuffles users with state.rng, trains on every batch, appends the mean
// loss to loss_history and increments state.epoch. Throws NumericError on a
// non-finite loss.
void train_epoch(Model& model, const LeaveOneOutSplit& split, const InteractionDataset& ds,
                 const TrainConfig& cfg, TrainState& state);

struct EpochLog {
  std::size_t epoch;
  double mean_loss;
  double val_ndcg10;
};

struct FitResult {
  ModelParams best_params;
  TrainState state;
  double seconds = 0.0;
  std::size_t evaluations = 0;
};

// Trains until validation NDCG@10 has not improved for `patience` epochs or
// max_epochs is reached; returns the best parameters. Validation negatives
// are sampled once from cfg.seed. on_epoch, if set, sees every epoch.
FitResult fit(Model& model, const LeaveOneOutSplit& split, const InteractionDataset& ds,
              const TrainConfig& cfg,
              const std::function<void(const EpochLog&)>& on_epoch = nullptr);

// Scorer adapter for evaluate(): logits of model.candidate_logits.
CandidateScorer model_scorer(const Model& model);

}  // namespace grasp

#endif  // GRASP_TRAINER_H_
