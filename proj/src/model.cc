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

#include "grasp/model.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "grasp/binary_io.h"

namespace grasp {

namespace {

constexpr std::uint16_t kGideVersion = 1;

}  // namespace

std::string to_string(EncoderKind kind) { return kind == EncoderKind::kHae ? "hae" : "id"; }

EncoderKind parse_encoder_kind(const std::string& name) {
  if (name == "hae") return EncoderKind::kHae;
  if (name == "id") return EncoderKind::kIdOnly;
  throw ArgumentError("unknown encoder '" + name + "' (expected hae or id)");
}

void ModelConfig::validate() const {
  backbone.validate();
  if (uses_hae()) {
    if (hae.d_sem == 0 || hae.h_hidden == 0) throw ArgumentError("HAE dims must be positive");
    if (hae.h != backbone.h) {
      throw ArgumentError("HAE output dim " + std::to_string(hae.h) +
                          " differs from backbone h=" + std::to_string(backbone.h));
    }
  }
  if (uses_id_table() && item_count == 0) throw ArgumentError("ID table needs item_count > 0");
  if (encoder == EncoderKind::kIdOnly && add_id_embedding) {
    throw ArgumentError("add_id_embedding only applies to the HAE encoder");
  }
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  if (cfg.uses_hae()) p.hae = HaeParams::zeros(cfg.hae);
  if (cfg.uses_id_table()) {
    p.item_ids = Mat::Zero(static_cast<Eigen::Index>(cfg.item_count),
                           static_cast<Eigen::Index>(cfg.backbone.h));
  }
  p.backbone = BackboneParams::zeros(cfg.backbone);
  return p;
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  if (cfg.uses_hae()) p.hae = HaeParams::init(cfg.hae, derive_seed(seed, 101));
  if (cfg.uses_id_table()) {
    p.item_ids = Mat::Zero(static_cast<Eigen::Index>(cfg.item_count),
                           static_cast<Eigen::Index>(cfg.backbone.h));
    Rng rng(derive_seed(seed, 102));
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.backbone.h));
    for (Eigen::Index i = 0; i < p.item_ids.size(); ++i) {
      p.item_ids.data()[i] = (2.0 * uniform_unit(rng) - 1.0) * bound;
    }
  }
  p.backbone = BackboneParams::init(cfg.backbone, derive_seed(seed, 103));
  return p;
}

std::vector<std::pair<std::string, Mat*>> ModelParams::tensors() {
  std::vector<std::pair<std::string, Mat*>> out;
  if (hae.w1.size() > 0) hae.for_each([&](const char* n, Mat& m) { out.emplace_back(n, &m); });
  if (item_ids.size() > 0) out.emplace_back("ids.items", &item_ids);
  backbone.for_each([&](const char* n, Mat& m) { out.emplace_back(n, &m); });
  return out;
}

std::vector<std::pair<std::string, const Mat*>> ModelParams::tensors() const {
  std::vector<std::pair<std::string, const Mat*>> out;
  for (auto& [name, m] : const_cast<ModelParams*>(this)->tensors()) out.emplace_back(name, m);
  return out;
}

std::vector<std::string> ModelParams::groups() const {
  std::vector<std::string> out;
  for (const auto& [name, m] : tensors()) {
    std::string g = name.substr(0, name.find('.'));
    if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(std::move(g));
  }
  return out;
}

void ModelParams::set_zero() {
  for (auto& [name, m] : tensors()) m->setZero();
}

void ModelParams::add(const ModelParams& other) {
  auto mine = tensors();
  const auto theirs = other.tensors();
  if (mine.size() != theirs.size()) throw ArgumentError("parameter sets differ in structure");
  for (std::size_t i = 0; i < mine.size(); ++i) *mine[i].second += *theirs[i].second;
}

void ModelParams::round_to_f32() {
  for (auto& [name, m] : tensors()) {
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      m->data()[i] = static_cast<double>(static_cast<float>(m->data()[i]));
    }
  }
}

bool ModelParams::operator==(const ModelParams& other) const {
  const auto a = tensors();
  const auto b = other.tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || a[i].second->rows() != b[i].second->rows() ||
        a[i].second->cols() != b[i].second->cols() || *a[i].second != *b[i].second) {
      return false;
    }
  }
  return true;
}

Model::Model(ModelConfig cfg, std::shared_ptr<const SemanticStores> stores, ModelParams params)
    : cfg_(std::move(cfg)), stores_(std::move(stores)), params_(std::move(params)) {
  cfg_.validate();
  if (cfg_.uses_hae()) {
    if (!stores_) throw ArgumentError("HAE encoder requires semantic stores");
    check_shapes(params_.hae, cfg_.hae);
    if (stores_->items.size() < cfg_.item_count && cfg_.item_count > 0) {
      throw ArgumentError("item store has fewer rows than the dataset has items");
    }
  }
  if (cfg_.uses_id_table() &&
      (params_.item_ids.rows() != static_cast<Eigen::Index>(cfg_.item_count) ||
       params_.item_ids.cols() != static_cast<Eigen::Index>(cfg_.backbone.h))) {
    throw ArgumentError("item ID table shape does not match the configuration");
  }
}

Mat Model::encode_split(UserId user, std::span<const ItemId> sequence,
                        std::span<const ItemId> candidates, EncodeCache* cache) const {
  const auto n = static_cast<Eigen::Index>(sequence.size() + candidates.size());
  const auto h = static_cast<Eigen::Index>(cfg_.backbone.h);
  Mat out;
  if (cfg_.uses_hae()) {
    Mat concat(n, static_cast<Eigen::Index>(cfg_.hae.concat_dim()));
    const auto seq_rows = static_cast<Eigen::Index>(sequence.size());
    if (!sequence.empty()) {
      concat.topRows(seq_rows) = enhance_rows(*stores_, cfg_.hae, user, sequence, true);
    }
    if (!candidates.empty()) {
      concat.bottomRows(n - seq_rows) = enhance_rows(*stores_, cfg_.hae, user, candidates, false);
    }
    HaeForward fwd = hae_forward(params_.hae, std::move(concat));
    out = fwd.output;
    if (cache) cache->hae = std::move(fwd);
  } else {
    out = Mat::Zero(n, h);
  }
  if (cfg_.uses_id_table()) {
    Eigen::Index r = 0;
    for (auto span : {sequence, candidates}) {
      for (ItemId i : span) {
        if (i >= cfg_.item_count) throw ArgumentError("item id out of range: " + std::to_string(i));
        out.row(r++) += params_.item_ids.row(i);
      }
    }
  }
  if (cache) {
    cache->items.assign(sequence.begin(), sequence.end());
    cache->items.insert(cache->items.end(), candidates.begin(), candidates.end());
  }
  return out;
}

void Model::encode_backward(const EncodeCache& cache, const Mat& d_rows,
                            ModelParams& grads) const {
  if (cfg_.uses_hae()) hae_backward(params_.hae, cache.hae, d_rows, grads.hae);
  if (cfg_.uses_id_table()) {
    for (std::size_t r = 0; r < cache.items.size(); ++r) {
      grads.item_ids.row(cache.items[r]) += d_rows.row(static_cast<Eigen::Index>(r));
    }
  }
}

Mat Model::encode(UserId user, std::span<const ItemId> items, bool as_sequence) const {
  return as_sequence ? encode_split(user, items, {}, nullptr)
                     : encode_split(user, {}, items, nullptr);
}

RowVec Model::user_representation(UserId user, std::span<const ItemId> history) const {
  if (history.empty()) throw ArgumentError("user_representation: empty history");
  const std::size_t keep = std::min(history.size(), cfg_.backbone.max_seq_len);
  const auto recent = history.subspan(history.size() - keep);
  return backbone_forward(cfg_.backbone, params_.backbone, encode(user, recent, true)).final();
}

std::vector<double> Model::candidate_logits(UserId user, std::span<const ItemId> history,
                                            std::span<const ItemId> candidates) const {
  const RowVec o = user_representation(user, history);
  const Mat reps = encode(user, candidates, false);
  const Vec logits = reps * o.transpose();
  return {logits.data(), logits.data() + logits.size()};
}

double bce_term(double logit, double label) {
  const double p = std::clamp(sigmoid(logit), kProbabilityClamp, 1.0 - kProbabilityClamp);
  return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

double bce_loss(std::span<const double> scores, std::span<const double> labels) {
  if (scores.empty()) throw ArgumentError("bce_loss: empty candidate pool");
  if (scores.size() != labels.size()) throw ArgumentError("bce_loss: length mismatch");
  double total = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const double p = std::clamp(scores[j], kProbabilityClamp, 1.0 - kProbabilityClamp);
    total -= labels[j] * std::log(p) + (1.0 - labels[j]) * std::log(1.0 - p);
  }
  return total / static_cast<double>(scores.size());
}

double Model::example_loss(const TrainingExample& ex, double scale, Rng* dropout_rng,
                           ModelParams* grads) const {
  const std::size_t L = ex.inputs.size();
  if (L == 0) return 0.0;
  if (ex.targets.size() != L || ex.negatives.size() != L * ex.n_neg) {
    throw ArgumentError("training example has inconsistent shapes");
  }
  std::vector<ItemId> candidates(ex.targets);
  candidates.insert(candidates.end(), ex.negatives.begin(), ex.negatives.end());

  EncodeCache enc;
  const Mat rows = encode_split(ex.user, ex.inputs, candidates, grads ? &enc : nullptr);
  const auto Li = static_cast<Eigen::Index>(L);
  const Mat inputs = rows.topRows(Li);
  const Mat cand = rows.bottomRows(rows.rows() - Li);

  BackboneCache bcache;
  const SequenceOutput seq = backbone_forward(cfg_.backbone, params_.backbone, inputs,
                                              dropout_rng != nullptr, dropout_rng,
                                              grads ? &bcache : nullptr);
  const Mat& o = seq.per_position;

  double loss = 0.0;
  Mat d_o, d_cand;
  if (grads) {
    d_o = Mat::Zero(o.rows(), o.cols());
    d_cand = Mat::Zero(cand.rows(), cand.cols());
  }
  auto term = [&](Eigen::Index t, Eigen::Index c, double label) {
    const double logit = o.row(t).dot(cand.row(c));
    loss += bce_term(logit, label);
    if (grads) {
      // d/dlogit of the unclamped BCE; stays finite for every logit.
      const double g = (sigmoid(logit) - label) * scale;
      d_o.row(t) += g * cand.row(c);
      d_cand.row(c) += g * o.row(t);
    }
  };
  for (Eigen::Index t = 0; t < Li; ++t) {
    term(t, t, 1.0);
    for (std::size_t j = 0; j < ex.n_neg; ++j) {
      term(t, Li + t * static_cast<Eigen::Index>(ex.n_neg) + static_cast<Eigen::Index>(j), 0.0);
    }
  }
  if (grads) {
    const Mat d_inputs = backbone_backward(cfg_.backbone, params_.backbone, bcache, d_o,
                                           grads->backbone);
    Mat d_rows(rows.rows(), rows.cols());
    d_rows.topRows(Li) = d_inputs;
    d_rows.bottomRows(rows.rows() - Li) = d_cand;
    encode_backward(enc, d_rows, *grads);
  }
  return loss;
}

void save_model_checkpoint(const ModelParams& p, const ModelConfig& cfg, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (cfg.uses_hae()) save_hae_checkpoint(p.hae, cfg.hae, dir + "/hae.ghae");
  if (cfg.uses_id_table()) {
    io::ByteWriter out;
    out.magic("GIDE");
    out.u16(kGideVersion);
    out.u32(static_cast<std::uint32_t>(p.item_ids.rows()));
    out.u32(static_cast<std::uint32_t>(p.item_ids.cols()));
    out.tensor(p.item_ids);
    out.write_file(dir + "/items.gide");
  }
  save_backbone_checkpoint(p.backbone, cfg.backbone, dir + "/backbone.gbkb");
}

ModelParams load_model_checkpoint(const ModelConfig& cfg, const std::string& dir) {
  ModelParams p = ModelParams::zeros(cfg);
  if (cfg.uses_hae()) p.hae = load_hae_checkpoint(dir + "/hae.ghae", cfg.hae);
  if (cfg.uses_id_table()) {
    auto in = io::ByteReader::from_file(dir + "/items.gide");
    in.expect_magic("GIDE");
    if (in.u16() != kGideVersion) in.fail("unsupported GIDE version");
    const std::size_t rows = in.u32();
    const std::size_t cols = in.u32();
    if (rows != cfg.item_count || cols != cfg.backbone.h) {
      throw ArgumentError(dir + "/items.gide: table is " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", config expects " +
                          std::to_string(cfg.item_count) + "x" + std::to_string(cfg.backbone.h));
    }
    in.tensor(p.item_ids);
    in.expect_end();
  }
  p.backbone = load_backbone_checkpoint(dir + "/backbone.gbkb", cfg.backbone);
  return p;
}

}  // namespace grasp
