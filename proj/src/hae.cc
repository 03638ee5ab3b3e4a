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

#include "grasp/hae.h"

#include <algorithm>
#include <cmath>

#include "grasp/binary_io.h"

namespace grasp {

namespace {

constexpr std::uint16_t kGhaeVersion = 1;

void fill_uniform(Mat& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * uniform_unit(rng) - 1.0) * bound;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

RowVec to_row(std::span<const float> v) {
  RowVec r(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) r[static_cast<Eigen::Index>(i)] = v[i];
  return r;
}

struct Gates {
  double self = 1.0, similar = 1.0, global = 1.0;
};

// Writes [g_self*item | g_sim*item_bar | g_glob*(item|item_bar)] into `out`,
// honoring the drop switches.
template <typename Span>
void write_concat(const HaeConfig& cfg, const Span& item, const Span& item_bar,
                  const Gates& g, double* out) {
  const std::size_t d = cfg.d_sem;
  for (std::size_t c = 0; c < d; ++c) {
    out[c] = g.self * item[c];
    out[d + c] = cfg.drop_similar ? 0.0 : g.similar * item_bar[c];
    out[2 * d + c] = cfg.drop_global ? 0.0 : g.global * item[c];
    out[3 * d + c] = cfg.drop_global ? 0.0 : g.global * item_bar[c];
  }
}

}  // namespace

HaeParams HaeParams::zeros(const HaeConfig& cfg) {
  HaeParams p;
  p.w1 = Mat::Zero(static_cast<Eigen::Index>(cfg.concat_dim()), static_cast<Eigen::Index>(cfg.h_hidden));
  p.b1 = Mat::Zero(1, static_cast<Eigen::Index>(cfg.h_hidden));
  p.w2 = Mat::Zero(static_cast<Eigen::Index>(cfg.h_hidden), static_cast<Eigen::Index>(cfg.h));
  p.b2 = Mat::Zero(1, static_cast<Eigen::Index>(cfg.h));
  return p;
}

HaeParams HaeParams::init(const HaeConfig& cfg, std::uint64_t seed) {
  if (cfg.d_sem == 0 || cfg.h_hidden == 0 || cfg.h == 0) {
    throw ArgumentError("HAE dimensions must be positive");
  }
  HaeParams p = zeros(cfg);
  Rng rng(seed);
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(cfg.concat_dim()));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(cfg.h_hidden));
  fill_uniform(p.w1, bound1, rng);
  fill_uniform(p.b1, bound1, rng);
  fill_uniform(p.w2, bound2, rng);
  fill_uniform(p.b2, bound2, rng);
  return p;
}

void check_shapes(const HaeParams& p, const HaeConfig& cfg) {
  const auto d4 = static_cast<Eigen::Index>(cfg.concat_dim());
  const auto hh = static_cast<Eigen::Index>(cfg.h_hidden);
  const auto h = static_cast<Eigen::Index>(cfg.h);
  if (p.w1.rows() != d4 || p.w1.cols() != hh || p.b1.rows() != 1 || p.b1.cols() != hh ||
      p.w2.rows() != hh || p.w2.cols() != h || p.b2.rows() != 1 || p.b2.cols() != h) {
    throw ArgumentError("HAE parameter shapes do not match the configuration");
  }
}

RowVec Branches::concat() const {
  RowVec out(self_branch.size() + similar_branch.size() + global_branch.size());
  out << self_branch, similar_branch, global_branch;
  return out;
}

double sigmoid_gate(const RowVec& q, const RowVec& v, std::size_t scale_dim) {
  if (q.size() != v.size()) throw ArgumentError("sigmoid_gate: length mismatch");
  if (scale_dim == 0) throw ArgumentError("sigmoid_gate: scale_dim must be positive");
  return sigmoid(q.dot(v) / std::sqrt(static_cast<double>(scale_dim)));
}

Branches enhance_item(const SemanticBundle& b, const HaeConfig& cfg) {
  const auto d = b.u.size();
  if (d == 0 || b.u_bar.size() != d || b.item.size() != d || b.item_bar.size() != d) {
    throw ArgumentError("enhance_item: bundle vectors must share one positive dimension");
  }
  if (cfg.softmax_variant && !cfg.no_attention) {
    throw ArgumentError("enhance_item: the softmax variant is defined over sequences");
  }
  const auto ud = static_cast<std::size_t>(d);
  Branches out;
  if (cfg.no_attention) {
    out.self_gate = out.similar_gate = out.global_gate = 1.0;
  } else {
    out.self_gate = sigmoid_gate(b.u, b.item, ud);
    out.similar_gate = sigmoid_gate(b.u_bar, b.item_bar, ud);
    RowVec q(2 * d), v(2 * d);
    q << b.u, b.u_bar;
    v << b.item, b.item_bar;
    out.global_gate = sigmoid_gate(q, v, 2 * ud);
  }
  HaeConfig shaped = cfg;
  shaped.d_sem = ud;
  RowVec concat(4 * d);
  write_concat(shaped, b.item, b.item_bar,
               Gates{out.self_gate, out.similar_gate, out.global_gate}, concat.data());
  out.self_branch = concat.segment(0, d);
  out.similar_branch = concat.segment(d, d);
  out.global_branch = concat.segment(2 * d, 2 * d);
  return out;
}

RowVec fuse(const Branches& branches, const HaeParams& p) {
  const RowVec x = branches.concat();
  if (x.size() != p.w1.rows() || p.b1.cols() != p.w1.cols() || p.w2.rows() != p.w1.cols() ||
      p.b2.cols() != p.w2.cols()) {
    throw ArgumentError("fuse: shape mismatch");
  }
  const RowVec hidden = (x * p.w1 + p.b1).cwiseMax(0.0);
  return hidden * p.w2 + p.b2;
}

SemanticTable::SemanticTable(std::shared_ptr<const EmbeddingMatrix> embeddings,
                             std::shared_ptr<const NeighborCache> cache,
                             std::vector<std::uint32_t> row_of)
    : embeddings_(std::move(embeddings)), cache_(std::move(cache)), row_of_(std::move(row_of)) {
  if (!embeddings_ || !cache_) throw ArgumentError("semantic table needs embeddings and a cache");
  if (cache_->rows() != embeddings_->rows() || cache_->dim() != embeddings_->dim()) {
    throw ArgumentError("neighbor cache shape (" + std::to_string(cache_->rows()) + "x" +
                        std::to_string(cache_->dim()) + ") does not match embeddings (" +
                        std::to_string(embeddings_->rows()) + "x" +
                        std::to_string(embeddings_->dim()) + ")");
  }
  for (std::uint32_t r : row_of_) {
    if (r >= embeddings_->rows()) throw ArgumentError("id map points past the embedding rows");
  }
}

std::size_t SemanticTable::size() const {
  if (!embeddings_) return 0;
  return row_of_.empty() ? embeddings_->rows() : row_of_.size();
}

std::size_t SemanticTable::row(std::size_t id) const {
  if (id >= size()) {
    throw ArgumentError("semantic lookup: id " + std::to_string(id) + " out of range (" +
                        std::to_string(size()) + " rows)");
  }
  return row_of_.empty() ? id : row_of_[id];
}

std::span<const float> SemanticTable::embedding(std::size_t id) const {
  return embeddings_->row(row(id));
}

std::span<const float> SemanticTable::pooled(std::size_t id) const {
  return cache_->pooled_mean(row(id));
}

SemanticBundle SemanticStores::bundle(UserId user, ItemId item) const {
  return {to_row(users.embedding(user)), to_row(users.pooled(user)), to_row(items.embedding(item)),
          to_row(items.pooled(item))};
}

Mat enhance_rows(const SemanticStores& stores, const HaeConfig& cfg, UserId user,
                 std::span<const ItemId> items, bool as_sequence) {
  const std::size_t d = cfg.d_sem;
  if (stores.users.dim() != d || stores.items.dim() != d) {
    throw ArgumentError("semantic stores have dim " + std::to_string(stores.items.dim()) +
                        ", HAE expects " + std::to_string(d));
  }
  const auto u = stores.users.embedding(user);
  const auto ub = stores.users.pooled(user);
  const std::size_t n = items.size();
  Mat out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(4 * d));
  const double inv_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double inv_2d = 1.0 / std::sqrt(2.0 * static_cast<double>(d));
  const bool softmax = cfg.softmax_variant && !cfg.no_attention;

  // Running causal log-sum-exp for the softmax variant.
  double max_s[3] = {-INFINITY, -INFINITY, -INFINITY};
  double sum_s[3] = {0.0, 0.0, 0.0};
  for (std::size_t t = 0; t < n; ++t) {
    const auto it = stores.items.embedding(items[t]);
    const auto ib = stores.items.pooled(items[t]);
    Gates g;
    if (!cfg.no_attention) {
      const double ui = dot(u, it);
      const double uib = dot(ub, ib);
      const double s[3] = {ui * inv_d, uib * inv_d, (ui + uib) * inv_2d};
      if (!softmax) {
        g = {sigmoid(s[0]), sigmoid(s[1]), sigmoid(s[2])};
      } else if (as_sequence) {
        double w[3];
        for (int b = 0; b < 3; ++b) {
          if (s[b] > max_s[b]) {
            sum_s[b] = sum_s[b] * std::exp(max_s[b] - s[b]);
            max_s[b] = s[b];
          }
          sum_s[b] += std::exp(s[b] - max_s[b]);
          w[b] = std::exp(s[b] - max_s[b]) / sum_s[b];
        }
        g = {w[0], w[1], w[2]};
      }
    }
    write_concat(cfg, it, ib, g, out.row(static_cast<Eigen::Index>(t)).data());
  }
  return out;
}

HaeForward hae_forward(const HaeParams& p, Mat input) {
  if (input.cols() != p.w1.rows()) throw ArgumentError("hae_forward: input width mismatch");
  HaeForward f;
  f.input = std::move(input);
  f.hidden.noalias() = f.input * p.w1;
  f.hidden.rowwise() += p.b1.row(0);
  f.hidden = f.hidden.cwiseMax(0.0);
  f.output.noalias() = f.hidden * p.w2;
  f.output.rowwise() += p.b2.row(0);
  return f;
}

void hae_backward(const HaeParams& p, const HaeForward& fwd, const Mat& d_output,
                  HaeParams& grads) {
  if (d_output.rows() != fwd.output.rows() || d_output.cols() != fwd.output.cols()) {
    throw ArgumentError("hae_backward: gradient shape mismatch");
  }
  grads.w2.noalias() += fwd.hidden.transpose() * d_output;
  grads.b2 += d_output.colwise().sum();
  Mat d_hidden = d_output * p.w2.transpose();
  // ReLU mask; hidden == 0 exactly where the pre-activation was <= 0.
  d_hidden = (fwd.hidden.array() > 0.0).select(d_hidden, 0.0);
  grads.w1.noalias() += fwd.input.transpose() * d_hidden;
  grads.b1 += d_hidden.colwise().sum();
}

Mat enhance_sequence(const SemanticStores& stores, const HaeConfig& cfg, const HaeParams& p,
                     UserId user, std::span<const ItemId> items) {
  check_shapes(p, cfg);
  return hae_forward(p, enhance_rows(stores, cfg, user, items, true)).output;
}

void save_hae_checkpoint(const HaeParams& p, const HaeConfig& cfg, const std::string& path) {
  check_shapes(p, cfg);
  io::ByteWriter out;
  out.magic("GHAE");
  out.u16(kGhaeVersion);
  out.u32(static_cast<std::uint32_t>(cfg.d_sem));
  out.u32(static_cast<std::uint32_t>(cfg.h_hidden));
  out.u32(static_cast<std::uint32_t>(cfg.h));
  p.for_each([&](const char*, const Mat& m) { out.tensor(m); });
  out.write_file(path);
}

HaeParams load_hae_checkpoint(const std::string& path, const HaeConfig& cfg) {
  auto in = io::ByteReader::from_file(path);
  in.expect_magic("GHAE");
  const auto version = in.u16();
  if (version != kGhaeVersion) in.fail("unsupported GHAE version " + std::to_string(version));
  const std::size_t d_sem = in.u32();
  const std::size_t h_hidden = in.u32();
  const std::size_t h = in.u32();
  if (d_sem != cfg.d_sem || h_hidden != cfg.h_hidden || h != cfg.h) {
    throw ArgumentError(path + ": checkpoint dims (d_sem=" + std::to_string(d_sem) +
                        ", h_hidden=" + std::to_string(h_hidden) + ", h=" + std::to_string(h) +
                        ") incompatible with config (d_sem=" + std::to_string(cfg.d_sem) +
                        ", h_hidden=" + std::to_string(cfg.h_hidden) +
                        ", h=" + std::to_string(cfg.h) + ")");
  }
  HaeParams p = HaeParams::zeros(cfg);
  p.for_each([&](const char*, Mat& m) { in.tensor(m); });
  in.expect_end();
  return p;
}

}  // namespace grasp
