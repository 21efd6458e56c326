// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <type_traits>

#include "adafusion/error.hpp"

namespace adafusion {

// ----------------------------- self-attention -----------------------------

SelfAttnParams init_self_attn(Index sources, Index dim, CounterRng& rng) {
  require(sources >= 1, ErrorKind::ConfigInvalid, "self-attention needs >= 1 source");
  require(dim >= kSelfAttnHeads && dim % kSelfAttnHeads == 0, ErrorKind::ConfigInvalid,
          "self-attention token width must be a positive multiple of 8, got " +
              std::to_string(dim));
  SelfAttnParams p;
  p.sources = sources;
  p.dim = dim;
  p.ln1_scale = MatrixD::Ones(1, dim);
  p.ln1_shift = MatrixD::Zero(1, dim);
  p.wq = nn::glorot_uniform(dim, dim, rng);
  p.bq = MatrixD::Zero(1, dim);
  p.wk = nn::glorot_uniform(dim, dim, rng);
  p.bk = MatrixD::Zero(1, dim);
  p.wv = nn::glorot_uniform(dim, dim, rng);
  p.bv = MatrixD::Zero(1, dim);
  p.wo = nn::glorot_uniform(dim, dim, rng);
  p.bo = MatrixD::Zero(1, dim);
  p.ln2_scale = MatrixD::Ones(1, dim);
  p.ln2_shift = MatrixD::Zero(1, dim);
  p.ff1_w = nn::glorot_uniform(dim, 4 * dim, rng);
  p.ff1_b = MatrixD::Zero(1, 4 * dim);
  p.ff2_w = nn::glorot_uniform(4 * dim, dim, rng);
  p.ff2_b = MatrixD::Zero(1, dim);
  return p;
}

SelfAttnParams zeros_like(const SelfAttnParams& p) {
  SelfAttnParams z = p;
  for (auto& t : tensors(z)) t.value->setZero();
  return z;
}

std::vector<TensorRef> tensors(SelfAttnParams& p) {
  return {{"self_attn.ln1_scale", &p.ln1_scale}, {"self_attn.ln1_shift", &p.ln1_shift},
          {"self_attn.wq", &p.wq},               {"self_attn.bq", &p.bq},
          {"self_attn.wk", &p.wk},               {"self_attn.bk", &p.bk},
          {"self_attn.wv", &p.wv},               {"self_attn.bv", &p.bv},
          {"self_attn.wo", &p.wo},               {"self_attn.bo", &p.bo},
          {"self_attn.ln2_scale", &p.ln2_scale}, {"self_attn.ln2_shift", &p.ln2_shift},
          {"self_attn.ff1_w", &p.ff1_w},         {"self_attn.ff1_b", &p.ff1_b},
          {"self_attn.ff2_w", &p.ff2_w},         {"self_attn.ff2_b", &p.ff2_b}};
}

template <typename T>
Matrix<T> self_attn_rows(const BasicSelfAttnParams<T>& params, const Matrix<T>& flat_rows,
                         SelfAttnCache* cache) {
  const Index n = params.sources, d = params.dim, rows = flat_rows.rows();
  require(flat_rows.cols() == n * d, ErrorKind::ShapeMismatch,
          "self-attention expects rows of length " + std::to_string(n * d));
  constexpr bool kCache = std::is_same_v<T, double>;
  const Index heads = kSelfAttnHeads, hd = params.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  // Row-major storage makes the (rows x N*d) batch and the (rows*N x d)
  // token matrix the same memory.
  const Matrix<T> tokens = Eigen::Map<const Matrix<T>>(flat_rows.data(), rows * n, d);

  nn::LayerNormCache* ln1 = nullptr;
  nn::LayerNormCache* ln2 = nullptr;
  if constexpr (kCache) {
    if (cache) {
      ln1 = &cache->ln1;
      ln2 = &cache->ln2;
      cache->attention.assign(static_cast<std::size_t>(rows * heads), MatrixD());
    }
  }
  const Matrix<T> y1 = nn::layer_norm_forward(tokens, params.ln1_scale, params.ln1_shift, ln1);
  const Matrix<T> q = nn::dense_forward(y1, params.wq, params.bq);
  const Matrix<T> k = nn::dense_forward(y1, params.wk, params.bk);
  const Matrix<T> v = nn::dense_forward(y1, params.wv, params.bv);

  Matrix<T> mixed(rows * n, d);
  Matrix<T> scores(n, n);
  for (Index r = 0; r < rows; ++r) {
    for (Index h = 0; h < heads; ++h) {
      const auto qh = q.block(r * n, h * hd, n, hd);
      const auto kh = k.block(r * n, h * hd, n, hd);
      const auto vh = v.block(r * n, h * hd, n, hd);
      scores.noalias() = (qh * kh.transpose()) * scale;
      const Matrix<T> attn = nn::softmax_rows(scores);
      mixed.block(r * n, h * hd, n, hd).noalias() = attn * vh;
      if constexpr (kCache) {
        if (cache) cache->attention[static_cast<std::size_t>(r * heads + h)] = attn;
      }
    }
  }
  const Matrix<T> x2 = tokens + nn::dense_forward(mixed, params.wo, params.bo);
  const Matrix<T> y2 = nn::layer_norm_forward(x2, params.ln2_scale, params.ln2_shift, ln2);
  const Matrix<T> ff_pre = nn::dense_forward(y2, params.ff1_w, params.ff1_b);
  const Matrix<T> ff_act = ff_pre.unaryExpr([](T x) { return nn::gelu(x); });
  const Matrix<T> out_tokens = x2 + nn::dense_forward(ff_act, params.ff2_w, params.ff2_b);

  if constexpr (kCache) {
    if (cache) {
      cache->tokens = tokens;
      cache->y1 = y1;
      cache->q = q;
      cache->k = k;
      cache->v = v;
      cache->mixed = mixed;
      cache->x2 = x2;
      cache->y2 = y2;
      cache->ff_pre = ff_pre;
      cache->ff_act = ff_act;
      cache->rows = rows;
      cache->valid = true;
    }
  }
  return Eigen::Map<const Matrix<T>>(out_tokens.data(), rows, n * d);
}

template MatrixD self_attn_rows<double>(const SelfAttnParams&, const MatrixD&, SelfAttnCache*);
template MatrixF self_attn_rows<float>(const BasicSelfAttnParams<float>&, const MatrixF&,
                                       SelfAttnCache*);

RowVectorD self_attn_forward(const CompoundEmbedding& compound, const SelfAttnParams& params,
                             SelfAttnCache* cache) {
  require(compound.sources() == params.sources && compound.dim() == params.dim,
          ErrorKind::ShapeMismatch, "compound shape differs from self-attention shape");
  const MatrixD row = compound.flattened();
  return self_attn_rows(params, row, cache).row(0);
}

SelfAttnGradients self_attn_backward(const SelfAttnParams& params, const SelfAttnCache& cache,
                                     const MatrixD& output_grad) {
  const Index n = params.sources, d = params.dim, rows = cache.rows;
  require(cache.valid && output_grad.rows() == rows, ErrorKind::MissingForwardCache,
          "self-attention backward needs the matching forward cache");
  require(output_grad.cols() == n * d, ErrorKind::ShapeMismatch, "self-attention gradient width");
  const Index heads = kSelfAttnHeads, hd = params.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  SelfAttnGradients g{zeros_like(params), MatrixD()};
  auto& gp = g.params;
  const MatrixD dout = Eigen::Map<const MatrixD>(output_grad.data(), rows * n, d);

  // out = x2 + ff2(gelu(ff1(ln2(x2))))
  MatrixD dx2 = dout;
  const MatrixD dact = nn::dense_backward(cache.ff_act, params.ff2_w, dout, gp.ff2_w, gp.ff2_b);
  const MatrixD dpre =
      dact.cwiseProduct(cache.ff_pre.unaryExpr([](double x) { return nn::gelu_grad(x); }));
  const MatrixD dy2 = nn::dense_backward(cache.y2, params.ff1_w, dpre, gp.ff1_w, gp.ff1_b);
  dx2 += nn::layer_norm_backward(cache.ln2, params.ln2_scale, dy2, gp.ln2_scale, gp.ln2_shift);

  // x2 = tokens + wo(mixed)
  MatrixD dtokens = dx2;
  const MatrixD dmixed = nn::dense_backward(cache.mixed, params.wo, dx2, gp.wo, gp.bo);

  MatrixD dq = MatrixD::Zero(rows * n, d), dk = MatrixD::Zero(rows * n, d),
          dv = MatrixD::Zero(rows * n, d);
  for (Index r = 0; r < rows; ++r) {
    for (Index h = 0; h < heads; ++h) {
      const MatrixD& a = cache.attention[static_cast<std::size_t>(r * heads + h)];
      const auto qh = cache.q.block(r * n, h * hd, n, hd);
      const auto kh = cache.k.block(r * n, h * hd, n, hd);
      const auto vh = cache.v.block(r * n, h * hd, n, hd);
      const auto dmh = dmixed.block(r * n, h * hd, n, hd);
      const MatrixD da = dmh * vh.transpose();
      dv.block(r * n, h * hd, n, hd) = a.transpose() * dmh;
      MatrixD ds = a.cwiseProduct(
          (da - (da.cwiseProduct(a)).rowwise().sum().replicate(1, n)));
      ds *= scale;
      dq.block(r * n, h * hd, n, hd) = ds * kh;
      dk.block(r * n, h * hd, n, hd) = ds.transpose() * qh;
    }
  }
  MatrixD dy1 = nn::dense_backward(cache.y1, params.wq, dq, gp.wq, gp.bq);
  dy1 += nn::dense_backward(cache.y1, params.wk, dk, gp.wk, gp.bk);
  dy1 += nn::dense_backward(cache.y1, params.wv, dv, gp.wv, gp.bv);
  dtokens += nn::layer_norm_backward(cache.ln1, params.ln1_scale, dy1, gp.ln1_scale, gp.ln1_shift);

  g.input = Eigen::Map<const MatrixD>(dtokens.data(), rows, n * d);
  return g;
}

// ------------------------------- top-3 MoE --------------------------------

MoeParams init_moe(Index sources, Index dim, CounterRng& rng) {
  if (sources < kMoeTopK)
    fail(ErrorKind::TooFewSources,
         "top-3 MoE needs at least 3 sources, got " + std::to_string(sources));
  require(dim >= 1, ErrorKind::ConfigInvalid, "MoE dim must be positive");
  MoeParams p;
  p.sources = sources;
  p.dim = dim;
  p.gate_w1 = nn::glorot_uniform(sources * dim, dim, rng);
  p.gate_b1 = MatrixD::Zero(1, dim);
  p.gate_w2 = nn::glorot_uniform(dim, sources, rng);
  p.gate_b2 = MatrixD::Zero(1, sources);
  p.proj_w = nn::glorot_uniform(kMoeTopK * dim, kMoeTopK * dim, rng);
  p.proj_b = MatrixD::Zero(1, kMoeTopK * dim);
  return p;
}

MoeParams zeros_like(const MoeParams& p) {
  MoeParams z = p;
  for (auto& t : tensors(z)) t.value->setZero();
  return z;
}

std::vector<TensorRef> tensors(MoeParams& p) {
  return {{"moe.gate_w1", &p.gate_w1}, {"moe.gate_b1", &p.gate_b1},
          {"moe.gate_w2", &p.gate_w2}, {"moe.gate_b2", &p.gate_b2},
          {"moe.proj_w", &p.proj_w},   {"moe.proj_b", &p.proj_b}};
}

namespace {

template <typename Row>
std::array<Index, kMoeTopK> top3_of(const Row& scores) {
  std::vector<Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return scores(a) > scores(b); });
  return {order[0], order[1], order[2]};
}

}  // namespace

std::array<Index, kMoeTopK> top3_indices(const RowVectorD& scores) {
  if (scores.size() < kMoeTopK)
    fail(ErrorKind::TooFewSources, "top-3 selection needs at least 3 scores");
  return top3_of(scores);
}

template <typename T>
Matrix<T> moe_gate_scores(const BasicMoeParams<T>& params, const Matrix<T>& flat_rows) {
  require(flat_rows.cols() == params.sources * params.dim, ErrorKind::ShapeMismatch,
          "MoE expects rows of length " + std::to_string(params.sources * params.dim));
  const Matrix<T> hidden = nn::dense_forward(flat_rows, params.gate_w1, params.gate_b1)
                               .unaryExpr([](T x) { return nn::gelu(x); });
  return nn::softmax_rows(nn::dense_forward(hidden, params.gate_w2, params.gate_b2));
}

template MatrixD moe_gate_scores<double>(const MoeParams&, const MatrixD&);
template MatrixF moe_gate_scores<float>(const BasicMoeParams<float>&, const MatrixF&);

template <typename T>
Matrix<T> moe_rows(const BasicMoeParams<T>& params, const Matrix<T>& flat_rows, MoeCache* cache) {
  if (params.sources < kMoeTopK)
    fail(ErrorKind::TooFewSources, "top-3 MoE needs at least 3 sources");
  const Index d = params.dim;
  const Matrix<T> scores = moe_gate_scores(params, flat_rows);
  Matrix<T> fused(flat_rows.rows(), kMoeTopK * d);
  std::vector<std::array<Index, kMoeTopK>> selected;
  selected.reserve(static_cast<std::size_t>(flat_rows.rows()));
  for (Index r = 0; r < flat_rows.rows(); ++r) {
    const auto top = top3_of(scores.row(r));
    for (Index j = 0; j < kMoeTopK; ++j)
      fused.row(r).segment(j * d, d) = flat_rows.row(r).segment(top[static_cast<std::size_t>(j)] * d, d);
    selected.push_back(top);
  }
  Matrix<T> out = nn::dense_forward(fused, params.proj_w, params.proj_b);
  if constexpr (std::is_same_v<T, double>) {
    if (cache) {
      cache->fused = std::move(fused);
      cache->selected = std::move(selected);
      cache->input_width = flat_rows.cols();
      cache->valid = true;
    }
  }
  return out;
}

template MatrixD moe_rows<double>(const MoeParams&, const MatrixD&, MoeCache*);
template MatrixF moe_rows<float>(const BasicMoeParams<float>&, const MatrixF&, MoeCache*);

MoeOutput moe_top3_forward(const CompoundEmbedding& compound, const MoeParams& params) {
  if (compound.sources() < kMoeTopK)
    fail(ErrorKind::TooFewSources, "top-3 MoE needs at least 3 sources");
  require(compound.sources() == params.sources && compound.dim() == params.dim,
          ErrorKind::ShapeMismatch, "compound shape differs from MoE shape");
  const MatrixD row = compound.flattened();
  MoeCache cache;
  MoeOutput out;
  out.fused = moe_rows(params, row, &cache).row(0);
  out.selected = cache.selected.front();
  out.gate_scores = moe_gate_scores(params, row).row(0);
  return out;
}

MoeGradients moe_backward(const MoeParams& params, const MoeCache& cache,
                          const MatrixD& output_grad) {
  require(cache.valid && cache.fused.rows() == output_grad.rows(), ErrorKind::MissingForwardCache,
          "MoE backward needs the matching forward cache");
  const Index d = params.dim;
  MoeGradients g{zeros_like(params), MatrixD::Zero(output_grad.rows(), cache.input_width)};
  const MatrixD dfused =
      nn::dense_backward(cache.fused, params.proj_w, output_grad, g.params.proj_w, g.params.proj_b);
  for (Index r = 0; r < output_grad.rows(); ++r) {
    const auto& top = cache.selected[static_cast<std::size_t>(r)];
    for (Index j = 0; j < kMoeTopK; ++j)
      g.input.row(r).segment(top[static_cast<std::size_t>(j)] * d, d) +=
          dfused.row(r).segment(j * d, d);
  }
  return g;
}

// ------------------------------- ensemble ---------------------------------

RowVectorD ensemble_forward(const CompoundEmbedding& compound, bool with_mask, double rho,
                            std::uint64_t seed) {
  if (!with_mask) return compound.flattened();
  const MaskMatrix mask = sample_mask(compound.sources(), compound.dim(), rho, seed);
  return apply_mask(compound, mask).flattened();
}

}  // namespace adafusion
