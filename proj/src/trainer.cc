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

#include "grasp/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "grasp/parallel.h"

namespace grasp {

namespace {

constexpr std::size_t kChunk = 8;

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ArgumentError("lr must be finite and >= 0");
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  if (patience == 0) throw ArgumentError("patience must be positive");
  if (max_epochs == 0) throw ArgumentError("max_epochs must be positive");
  if (negatives_per_positive == 0) throw ArgumentError("negatives_per_positive must be positive");
  if (eval_negatives == 0) throw ArgumentError("eval_negatives must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
    throw ArgumentError("invalid Adam hyperparameters");
  }
}

TrainState initial_state(const Model& model, const TrainConfig& cfg) {
  TrainState s;
  s.rng.seed(derive_seed(cfg.seed, 21));
  s.adam.m = model.params();
  s.adam.m.set_zero();
  s.adam.v = s.adam.m;
  return s;
}

std::vector<TrainingExample> make_training_batch(const LeaveOneOutSplit& split,
                                                 const InteractionDataset& ds,
                                                 std::span<const std::size_t> users,
                                                 const TrainConfig& cfg,
                                                 std::size_t max_seq_len, Rng& rng) {
  std::vector<TrainingExample> batch;
  batch.reserve(users.size());
  for (std::size_t idx : users) {
    if (idx >= split.entries.size()) throw ArgumentError("split index out of range");
    const SplitEntry& e = split.entries[idx];
    const auto& prefix = e.train_prefix;
    if (prefix.size() < 2) continue;
    const std::size_t positions = std::min(prefix.size() - 1, max_seq_len);
    const std::size_t start = prefix.size() - 1 - positions;

    std::vector<ItemId> history = ds.sequences[e.user];
    std::sort(history.begin(), history.end());
    history.erase(std::unique(history.begin(), history.end()), history.end());
    if (history.size() >= ds.item_count) {
      throw DataError("user " + std::to_string(e.user) + " has interacted with every item");
    }

    TrainingExample ex;
    ex.user = e.user;
    ex.n_neg = cfg.negatives_per_positive;
    ex.inputs.assign(prefix.begin() + static_cast<std::ptrdiff_t>(start), prefix.end() - 1);
    ex.targets.assign(prefix.begin() + static_cast<std::ptrdiff_t>(start) + 1, prefix.end());
    ex.negatives.reserve(positions * ex.n_neg);
    for (std::size_t n = 0; n < positions * ex.n_neg; ++n) {
      ItemId item;
      do {
        item = static_cast<ItemId>(uniform_index(rng, ds.item_count));
      } while (std::binary_search(history.begin(), history.end(), item));
      ex.negatives.push_back(item);
    }
    batch.push_back(std::move(ex));
  }
  return batch;
}

double batch_loss_and_grad(const Model& model, std::span<const TrainingExample> batch,
                           ModelParams& grads, std::uint64_t dropout_seed) {
  std::size_t pool = 0;
  for (const auto& ex : batch) pool += ex.pool_size();
  grads.set_zero();
  if (pool == 0) return 0.0;
  const double scale = 1.0 / static_cast<double>(pool);

  const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<ModelParams> partial(chunks);
  std::vector<double> losses(chunks, 0.0);
  parallel_for(chunks, [&](std::size_t c) {
    ModelParams g = grads;
    const std::size_t end = std::min(batch.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      Rng dropout(derive_seed(dropout_seed, i));
      losses[c] += model.example_loss(batch[i], scale, &dropout, &g);
    }
    partial[c] = std::move(g);
  });
  double loss = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    grads.add(partial[c]);
    loss += losses[c];
  }
  return loss * scale;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& adam,
               const TrainConfig& cfg) {
  ++adam.step;
  const double t = static_cast<double>(adam.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = adam.m.tensors();
  auto v = adam.v.tensors();
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw ArgumentError("adam_step: parameter structure mismatch");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    Mat& w = *p[i].second;
    const Mat& dw = *g[i].second;
    Mat& mi = *m[i].second;
    Mat& vi = *v[i].second;
    mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * dw;
    vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * dw.cwiseProduct(dw);
    w.array() -= cfg.lr * (mi.array() / c1) / ((vi.array() / c2).sqrt() + cfg.epsilon);
  }
}

void train_epoch(Model& model, const LeaveOneOutSplit& split, const InteractionDataset& ds,
                 const TrainConfig& cfg, TrainState& state) {
  std::vector<std::size_t> order(split.entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(state.rng, i)]);
  }
  ModelParams grads = model.params();
  double loss_sum = 0.0;
  std::size_t pool_sum = 0;
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    const auto batch = make_training_batch(
        split, ds, std::span<const std::size_t>(order).subspan(start, end - start), cfg,
        model.config().backbone.max_seq_len, state.rng);
    std::size_t pool = 0;
    for (const auto& ex : batch) pool += ex.pool_size();
    if (pool == 0) continue;
    const double loss = batch_loss_and_grad(
        model, batch, grads, derive_seed(cfg.seed, 31, state.epoch * 1000003ULL + batch_index));
    if (!std::isfinite(loss)) {
      throw NumericError("non-finite loss at epoch " + std::to_string(state.epoch + 1) +
                         ", batch " + std::to_string(batch_index));
    }
    adam_step(model.params(), grads, state.adam, cfg);
    loss_sum += loss * static_cast<double>(pool);
    pool_sum += pool;
  }
  state.loss_history.push_back(pool_sum ? loss_sum / static_cast<double>(pool_sum) : 0.0);
  ++state.epoch;
}

CandidateScorer model_scorer(const Model& model) {
  return [&model](UserId user, std::span<const ItemId> history,
                  std::span<const ItemId> candidates) {
    return model.candidate_logits(user, history, candidates);
  };
}

FitResult fit(Model& model, const LeaveOneOutSplit& split, const InteractionDataset& ds,
              const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const EvalPlan plan = make_eval_plan(split, ds, SplitPart::kValid, cfg.eval_negatives, cfg.seed);
  if (plan.cases.empty()) throw DataError("protocol error: validation set is empty");

  FitResult result;
  result.state = initial_state(model, cfg);
  result.best_params = model.params();
  TrainState& state = result.state;
  while (state.epoch < cfg.max_epochs) {
    train_epoch(model, split, ds, cfg, state);
    const double ndcg10 = evaluate_plan(model_scorer(model), plan).overall.ndcg_at(10);
    ++result.evaluations;
    state.val_history.push_back(ndcg10);
    if (ndcg10 > state.best_val_ndcg10) {
      state.best_val_ndcg10 = ndcg10;
      state.best_epoch = state.epoch;
      state.epochs_since_best = 0;
      result.best_params = model.params();
    } else {
      ++state.epochs_since_best;
    }
    if (on_epoch) on_epoch({state.epoch, state.loss_history.back(), ndcg10});
    if (state.epochs_since_best >= cfg.patience) break;
  }
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace grasp
