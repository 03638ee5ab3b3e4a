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

#include "grasp/backbone.h"

#include <cmath>

#include "grasp/binary_io.h"

namespace grasp {

namespace {

constexpr std::uint16_t kGbkbVersion = 1;
constexpr double kLayerNormEps = 1e-6;

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

Mat zero_mat(std::size_t r, std::size_t c) { return Mat::Zero(idx(r), idx(c)); }

void fill_uniform(Mat& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * uniform_unit(rng) - 1.0) * bound;
}

Mat add_row(Mat m, const Mat& bias) {
  m.rowwise() += bias.row(0);
  return m;
}

Mat sigmoid_of(const Mat& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

// Inverted dropout mask: entries 0 or 1/(1-p).
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat m(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform_unit(rng) < p ? 0.0 : keep;
  return m;
}

Mat layer_norm(const Mat& x, const Mat& g, const Mat& b, LayerNormCache* cache) {
  const double n = static_cast<double>(x.cols());
  Mat xhat(x.rows(), x.cols());
  Vec inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).sum() / n;
    const double var = (x.row(i).array() - mean).square().sum() / n;
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mean) * inv_std[i];
  }
  Mat y = xhat.array().rowwise() * g.row(0).array();
  y.rowwise() += b.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const Mat& g, const LayerNormCache& c, Mat& dg, Mat& db) {
  dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * g.row(0).array();
  const double n = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_d = dxhat.row(i).sum() / n;
    const double mean_dx = dxhat.row(i).dot(c.xhat.row(i)) / n;
    dx.row(i) = (dxhat.row(i).array() - mean_d - c.xhat.row(i).array() * mean_dx) * c.inv_std[i];
  }
  return dx;
}

bool dropout_active(const BackboneConfig& cfg, bool training, Rng* rng) {
  return training && rng != nullptr && cfg.dropout > 0.0;
}

// ---------------------------------------------------------------- GRU ----

Mat gru_forward(const BackboneConfig& cfg, const BackboneParams& p, const Mat& inputs,
                bool training, Rng* rng, BackboneCache* cache) {
  const Eigen::Index L = inputs.rows();
  const auto h = idx(cfg.h);
  Mat x = inputs;
  if (cache) cache->gru.resize(p.gru.size());
  for (std::size_t l = 0; l < p.gru.size(); ++l) {
    const GruLayer& g = p.gru[l];
    Mat drop;
    if (dropout_active(cfg, training, rng)) {
      drop = dropout_mask(L, h, cfg.dropout, *rng);
      x = x.cwiseProduct(drop);
    }
    // Input projections for all positions at once.
    const Mat xz = add_row(x * g.wz, g.bz);
    const Mat xr = add_row(x * g.wr, g.br);
    const Mat xn = add_row(x * g.wn, g.bn);
    Mat states = Mat::Zero(L + 1, h);
    Mat z(L, h), r(L, h), n(L, h);
    for (Eigen::Index t = 0; t < L; ++t) {
      const RowVec prev = states.row(t);
      z.row(t) = sigmoid_of(xz.row(t) + prev * g.uz);
      r.row(t) = sigmoid_of(xr.row(t) + prev * g.ur);
      n.row(t) = (xn.row(t) + prev.cwiseProduct(r.row(t)) * g.un).array().tanh().matrix();
      states.row(t + 1) = (1.0 - z.row(t).array()) * n.row(t).array() +
                          z.row(t).array() * prev.array();
    }
    if (cache) {
      auto& c = cache->gru[l];
      c.input = x;
      c.drop = std::move(drop);
      c.states = states;
      c.z = std::move(z);
      c.r = std::move(r);
      c.n = std::move(n);
    }
    x = states.bottomRows(L);
  }
  return x;
}

Mat gru_backward(const BackboneParams& p, const BackboneCache& cache, const Mat& d_output,
                 BackboneParams& grads) {
  Mat d_out = d_output;
  for (std::size_t li = p.gru.size(); li-- > 0;) {
    const GruLayer& g = p.gru[li];
    GruLayer& dg = grads.gru[li];
    const GruLayerCache& c = cache.gru[li];
    const Eigen::Index L = c.input.rows();
    const Eigen::Index h = c.z.cols();
    Mat daz(L, h), dar(L, h), dan(L, h), rh(L, h);
    RowVec dh_next = RowVec::Zero(h);
    for (Eigen::Index t = L - 1; t >= 0; --t) {
      const RowVec prev = c.states.row(t);
      const auto z = c.z.row(t).array();
      const auto r = c.r.row(t).array();
      const auto n = c.n.row(t).array();
      const RowVec dh = d_out.row(t) + dh_next;
      const RowVec dz = (dh.array() * (prev.array() - n)).matrix();
      const RowVec dn = (dh.array() * (1.0 - z)).matrix();
      RowVec dprev = (dh.array() * z).matrix();
      dan.row(t) = (dn.array() * (1.0 - n.square())).matrix();
      rh.row(t) = (r * prev.array()).matrix();
      const RowVec drh = dan.row(t) * g.un.transpose();
      const RowVec dr = (drh.array() * prev.array()).matrix();
      dprev += (drh.array() * r).matrix();
      daz.row(t) = (dz.array() * z * (1.0 - z)).matrix();
      dar.row(t) = (dr.array() * r * (1.0 - r)).matrix();
      dprev += daz.row(t) * g.uz.transpose() + dar.row(t) * g.ur.transpose();
      dh_next = dprev;
    }
    const Mat prevs = c.states.topRows(L);
    dg.wz.noalias() += c.input.transpose() * daz;
    dg.wr.noalias() += c.input.transpose() * dar;
    dg.wn.noalias() += c.input.transpose() * dan;
    dg.uz.noalias() += prevs.transpose() * daz;
    dg.ur.noalias() += prevs.transpose() * dar;
    dg.un.noalias() += rh.transpose() * dan;
    dg.bz += daz.colwise().sum();
    dg.br += dar.colwise().sum();
    dg.bn += dan.colwise().sum();
    Mat dx = daz * g.wz.transpose() + dar * g.wr.transpose() + dan * g.wn.transpose();
    if (c.drop.size() > 0) dx = dx.cwiseProduct(c.drop);
    d_out = std::move(dx);
  }
  return d_out;
}

// ------------------------------------------------------------- SASRec ----

Mat sasrec_forward_impl(const BackboneConfig& cfg, const BackboneParams& p, const Mat& inputs,
                        bool training, Rng* rng, BackboneCache* cache) {
  const Eigen::Index L = inputs.rows();
  const auto h = idx(cfg.h);
  const Eigen::Index heads = idx(cfg.n_heads);
  const Eigen::Index dh = h / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool drop = dropout_active(cfg, training, rng);

  Mat e = inputs + p.pos.topRows(L);
  if (drop) {
    Mat m = dropout_mask(L, h, cfg.dropout, *rng);
    e = e.cwiseProduct(m);
    if (cache) cache->drop_emb = std::move(m);
  }
  if (cache) cache->blocks.resize(p.blocks.size());
  for (std::size_t bi = 0; bi < p.blocks.size(); ++bi) {
    const SasBlock& b = p.blocks[bi];
    SasBlockCache local;
    SasBlockCache& c = cache ? cache->blocks[bi] : local;
    c.input = e;
    c.a = layer_norm(e, b.ln1_g, b.ln1_b, &c.ln1);
    c.q = add_row(c.a * b.wq, b.bq);
    c.k = add_row(c.a * b.wk, b.bk);
    c.v = add_row(c.a * b.wv, b.bv);
    c.z.resize(L, h);
    c.probs.assign(static_cast<std::size_t>(heads), Mat());
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      const auto qh = c.q.middleCols(hd * dh, dh);
      const auto kh = c.k.middleCols(hd * dh, dh);
      const auto vh = c.v.middleCols(hd * dh, dh);
      Mat s = (qh * kh.transpose()) * scale;
      Mat prob = Mat::Zero(L, L);
      for (Eigen::Index i = 0; i < L; ++i) {
        const double mx = s.row(i).head(i + 1).maxCoeff();
        const auto ex = (s.row(i).head(i + 1).array() - mx).exp();
        prob.row(i).head(i + 1) = (ex / ex.sum()).matrix();
      }
      c.z.middleCols(hd * dh, dh) = prob * vh;
      c.probs[static_cast<std::size_t>(hd)] = std::move(prob);
    }
    Mat m = add_row(c.z * b.wo, b.bo);
    if (drop) {
      c.drop_attn = dropout_mask(L, h, cfg.dropout, *rng);
      m = m.cwiseProduct(c.drop_attn);
    }
    c.e1 = e + m;
    c.f_in = layer_norm(c.e1, b.ln2_g, b.ln2_b, &c.ln2);
    c.ff_hidden = add_row(c.f_in * b.ff_w1, b.ff_b1).cwiseMax(0.0);
    Mat fo = add_row(c.ff_hidden * b.ff_w2, b.ff_b2);
    if (drop) {
      c.drop_ff = dropout_mask(L, h, cfg.dropout, *rng);
      fo = fo.cwiseProduct(c.drop_ff);
    }
    e = c.e1 + fo;
  }
  return layer_norm(e, p.lnf_g, p.lnf_b, cache ? &cache->lnf : nullptr);
}

Mat sasrec_backward(const BackboneConfig& cfg, const BackboneParams& p,
                    const BackboneCache& cache, const Mat& d_output, BackboneParams& grads) {
  const Eigen::Index heads = idx(cfg.n_heads);
  const Eigen::Index dh = idx(cfg.h) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat de = layer_norm_backward(d_output, p.lnf_g, cache.lnf, grads.lnf_g, grads.lnf_b);
  for (std::size_t bi = p.blocks.size(); bi-- > 0;) {
    const SasBlock& b = p.blocks[bi];
    SasBlock& g = grads.blocks[bi];
    const SasBlockCache& c = cache.blocks[bi];
    const Eigen::Index L = c.input.rows();

    // e = e1 + dropout(ffn(ln2(e1)))
    Mat dfo = c.drop_ff.size() > 0 ? Mat(de.cwiseProduct(c.drop_ff)) : de;
    g.ff_w2.noalias() += c.ff_hidden.transpose() * dfo;
    g.ff_b2 += dfo.colwise().sum();
    Mat dhid = dfo * b.ff_w2.transpose();
    dhid = (c.ff_hidden.array() > 0.0).select(dhid, 0.0);
    g.ff_w1.noalias() += c.f_in.transpose() * dhid;
    g.ff_b1 += dhid.colwise().sum();
    const Mat df_in = dhid * b.ff_w1.transpose();
    Mat de1 = de + layer_norm_backward(df_in, b.ln2_g, c.ln2, g.ln2_g, g.ln2_b);

    // e1 = input + dropout(attn(ln1(input)) wo + bo)
    Mat dm = c.drop_attn.size() > 0 ? Mat(de1.cwiseProduct(c.drop_attn)) : de1;
    g.wo.noalias() += c.z.transpose() * dm;
    g.bo += dm.colwise().sum();
    const Mat dz = dm * b.wo.transpose();
    Mat dq(L, c.q.cols()), dk(L, c.k.cols()), dv(L, c.v.cols());
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      const Mat& prob = c.probs[static_cast<std::size_t>(hd)];
      const auto dzh = dz.middleCols(hd * dh, dh);
      const Mat dprob = dzh * c.v.middleCols(hd * dh, dh).transpose();
      dv.middleCols(hd * dh, dh) = prob.transpose() * dzh;
      // Softmax backward; masked entries have prob 0 and receive no gradient.
      Mat ds = prob.array() *
               (dprob.colwise() - (dprob.cwiseProduct(prob)).rowwise().sum()).array();
      ds *= scale;
      dq.middleCols(hd * dh, dh) = ds * c.k.middleCols(hd * dh, dh);
      dk.middleCols(hd * dh, dh) = ds.transpose() * c.q.middleCols(hd * dh, dh);
    }
    g.wq.noalias() += c.a.transpose() * dq;
    g.wk.noalias() += c.a.transpose() * dk;
    g.wv.noalias() += c.a.transpose() * dv;
    g.bq += dq.colwise().sum();
    g.bk += dk.colwise().sum();
    g.bv += dv.colwise().sum();
    const Mat da = dq * b.wq.transpose() + dk * b.wk.transpose() + dv * b.wv.transpose();
    de = de1 + layer_norm_backward(da, b.ln1_g, c.ln1, g.ln1_g, g.ln1_b);
  }
  if (cache.drop_emb.size() > 0) de = de.cwiseProduct(cache.drop_emb);
  const Eigen::Index L = de.rows();
  grads.pos.topRows(L) += de;
  return de;
}

}  // namespace

std::string to_string(BackboneKind kind) {
  return kind == BackboneKind::kGru4Rec ? "gru4rec" : "sasrec";
}

BackboneKind parse_backbone_kind(const std::string& name) {
  if (name == "gru4rec") return BackboneKind::kGru4Rec;
  if (name == "sasrec") return BackboneKind::kSasRec;
  throw ArgumentError("unknown backbone '" + name + "' (expected gru4rec or sasrec)");
}

void BackboneConfig::validate() const {
  if (kind != BackboneKind::kGru4Rec && kind != BackboneKind::kSasRec) {
    throw ArgumentError("unknown backbone kind");
  }
  if (h == 0) throw ArgumentError("backbone hidden dim must be positive");
  if (max_seq_len == 0) throw ArgumentError("max_seq_len must be >= 1");
  if (n_layers == 0) throw ArgumentError("n_layers must be >= 1");
  if (kind == BackboneKind::kSasRec && (n_heads == 0 || h % n_heads != 0)) {
    throw ArgumentError("h=" + std::to_string(h) + " must be divisible by n_heads=" +
                        std::to_string(n_heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ArgumentError("dropout must lie in [0, 1)");
}

BackboneParams BackboneParams::zeros(const BackboneConfig& cfg) {
  cfg.validate();
  BackboneParams p;
  p.kind = cfg.kind;
  const std::size_t h = cfg.h;
  if (cfg.kind == BackboneKind::kGru4Rec) {
    p.gru.resize(cfg.n_layers);
    for (auto& g : p.gru) {
      for (Mat* m : {&g.wz, &g.wr, &g.wn, &g.uz, &g.ur, &g.un}) *m = zero_mat(h, h);
      for (Mat* m : {&g.bz, &g.br, &g.bn}) *m = zero_mat(1, h);
    }
  } else {
    p.pos = zero_mat(cfg.max_seq_len, h);
    p.blocks.resize(cfg.n_layers);
    for (auto& b : p.blocks) {
      for (Mat* m : {&b.wq, &b.wk, &b.wv, &b.wo, &b.ff_w1, &b.ff_w2}) *m = zero_mat(h, h);
      for (Mat* m : {&b.ln1_g, &b.ln1_b, &b.bq, &b.bk, &b.bv, &b.bo, &b.ln2_g, &b.ln2_b,
                     &b.ff_b1, &b.ff_b2}) {
        *m = zero_mat(1, h);
      }
    }
    p.lnf_g = zero_mat(1, h);
    p.lnf_b = zero_mat(1, h);
  }
  return p;
}

BackboneParams BackboneParams::init(const BackboneConfig& cfg, std::uint64_t seed) {
  BackboneParams p = zeros(cfg);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.h));
  for (auto& g : p.gru) {
    for (Mat* m : {&g.wz, &g.wr, &g.wn, &g.uz, &g.ur, &g.un}) fill_uniform(*m, bound, rng);
  }
  if (cfg.kind == BackboneKind::kSasRec) {
    fill_uniform(p.pos, bound, rng);
    for (auto& b : p.blocks) {
      for (Mat* m : {&b.wq, &b.wk, &b.wv, &b.wo, &b.ff_w1, &b.ff_w2}) fill_uniform(*m, bound, rng);
      b.ln1_g.setOnes();
      b.ln2_g.setOnes();
    }
    p.lnf_g.setOnes();
  }
  return p;
}

SequenceOutput backbone_forward(const BackboneConfig& cfg, const BackboneParams& p,
                                const Mat& inputs, bool training, Rng* dropout_rng,
                                BackboneCache* cache) {
  if (p.kind != cfg.kind) throw ArgumentError("backbone parameters do not match the config kind");
  if (inputs.rows() == 0) throw ArgumentError("backbone: empty sequence");
  if (inputs.cols() != idx(cfg.h)) {
    throw ArgumentError("backbone: input width " + std::to_string(inputs.cols()) +
                        " differs from h=" + std::to_string(cfg.h));
  }
  if (static_cast<std::size_t>(inputs.rows()) > cfg.max_seq_len) {
    throw ArgumentError("backbone: sequence length " + std::to_string(inputs.rows()) +
                        " exceeds max_seq_len=" + std::to_string(cfg.max_seq_len));
  }
  if (cache) *cache = BackboneCache{};
  SequenceOutput out;
  out.per_position = cfg.kind == BackboneKind::kGru4Rec
                         ? gru_forward(cfg, p, inputs, training, dropout_rng, cache)
                         : sasrec_forward_impl(cfg, p, inputs, training, dropout_rng, cache);
  return out;
}

Mat backbone_backward(const BackboneConfig& cfg, const BackboneParams& p,
                      const BackboneCache& cache, const Mat& d_output, BackboneParams& grads) {
  return cfg.kind == BackboneKind::kGru4Rec ? gru_backward(p, cache, d_output, grads)
                                            : sasrec_backward(cfg, p, cache, d_output, grads);
}

SequenceOutput gru4rec_forward(const BackboneConfig& cfg, const BackboneParams& p,
                               const Mat& inputs) {
  if (cfg.kind != BackboneKind::kGru4Rec) throw ArgumentError("config is not gru4rec");
  return backbone_forward(cfg, p, inputs);
}

SequenceOutput sasrec_forward(const BackboneConfig& cfg, const BackboneParams& p,
                              const Mat& inputs, BackboneCache* cache) {
  if (cfg.kind != BackboneKind::kSasRec) throw ArgumentError("config is not sasrec");
  return backbone_forward(cfg, p, inputs, false, nullptr, cache);
}

SequenceOutput forward_left_padded(const BackboneConfig& cfg, const BackboneParams& p,
                                   const Mat& padded, std::size_t n_pad) {
  if (n_pad >= static_cast<std::size_t>(padded.rows())) {
    throw ArgumentError("padded sequence has no real positions");
  }
  const auto real = padded.rows() - idx(n_pad);
  SequenceOutput inner = backbone_forward(cfg, p, padded.bottomRows(real));
  SequenceOutput out;
  out.per_position = Mat::Zero(padded.rows(), padded.cols());
  out.per_position.bottomRows(real) = inner.per_position;
  return out;
}

double score(const RowVec& o, const RowVec& item_repr) {
  if (o.size() != item_repr.size()) throw ArgumentError("score: dimension mismatch");
  return sigmoid(o.dot(item_repr));
}

void save_backbone_checkpoint(const BackboneParams& p, const BackboneConfig& cfg,
                              const std::string& path) {
  io::ByteWriter out;
  out.magic("GBKB");
  out.u16(kGbkbVersion);
  out.u8(static_cast<std::uint8_t>(cfg.kind));
  out.u32(static_cast<std::uint32_t>(cfg.h));
  out.u32(static_cast<std::uint32_t>(cfg.max_seq_len));
  out.u32(static_cast<std::uint32_t>(cfg.n_layers));
  out.u32(static_cast<std::uint32_t>(cfg.n_heads));
  out.f32(static_cast<float>(cfg.dropout));
  p.for_each([&](const char*, const Mat& m) { out.tensor(m); });
  out.write_file(path);
}

BackboneParams load_backbone_checkpoint(const std::string& path, const BackboneConfig& cfg) {
  auto in = io::ByteReader::from_file(path);
  in.expect_magic("GBKB");
  const auto version = in.u16();
  if (version != kGbkbVersion) in.fail("unsupported GBKB version " + std::to_string(version));
  BackboneConfig stored;
  const auto kind = in.u8();
  if (kind != 1 && kind != 2) in.fail("unknown backbone kind " + std::to_string(kind));
  stored.kind = static_cast<BackboneKind>(kind);
  stored.h = in.u32();
  stored.max_seq_len = in.u32();
  stored.n_layers = in.u32();
  stored.n_heads = in.u32();
  stored.dropout = in.f32();
  const bool heads_matter = cfg.kind == BackboneKind::kSasRec;
  if (stored.kind != cfg.kind || stored.h != cfg.h || stored.max_seq_len != cfg.max_seq_len ||
      stored.n_layers != cfg.n_layers || (heads_matter && stored.n_heads != cfg.n_heads)) {
    throw ArgumentError(path + ": checkpoint (" + to_string(stored.kind) +
                        ", h=" + std::to_string(stored.h) +
                        ", max_seq_len=" + std::to_string(stored.max_seq_len) +
                        ", n_layers=" + std::to_string(stored.n_layers) +
                        ") incompatible with config (" + to_string(cfg.kind) +
                        ", h=" + std::to_string(cfg.h) +
                        ", max_seq_len=" + std::to_string(cfg.max_seq_len) +
                        ", n_layers=" + std::to_string(cfg.n_layers) + ")");
  }
  BackboneParams p = BackboneParams::zeros(cfg);
  p.for_each([&](const char*, Mat& m) { in.tensor(m); });
  in.expect_end();
  return p;
}

}  // namespace grasp
