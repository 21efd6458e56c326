// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "adafusion/embedding_ops.hpp"
#include "adafusion/nn.hpp"
#include "adafusion/rng.hpp"
#include "adafusion/tensor.hpp"

namespace adafusion {

inline constexpr Index kSelfAttnHeads = 8;
inline constexpr Index kMoeTopK = 3;

// ---------------------------------------------------------------------------
// Self-attention fusion: one pre-norm transformer encoder block over the N
// source rows as tokens of width d (no positional encoding), output
// flattened back to N*d.
// ---------------------------------------------------------------------------

template <typename T>
struct BasicSelfAttnParams {
  Index sources = 0;
  Index dim = 0;
  Matrix<T> ln1_scale, ln1_shift;  // 1 x d
  Matrix<T> wq, bq, wk, bk, wv, bv, wo, bo;  // d x d, 1 x d
  Matrix<T> ln2_scale, ln2_shift;  // 1 x d
  Matrix<T> ff1_w, ff1_b;          // d x 4d, 1 x 4d
  Matrix<T> ff2_w, ff2_b;          // 4d x d, 1 x d

  Index head_dim() const { return dim / kSelfAttnHeads; }

  template <typename U>
  BasicSelfAttnParams<U> cast() const {
    return {sources,
            dim,
            ln1_scale.template cast<U>(),
            ln1_shift.template cast<U>(),
            wq.template cast<U>(),
            bq.template cast<U>(),
            wk.template cast<U>(),
            bk.template cast<U>(),
            wv.template cast<U>(),
            bv.template cast<U>(),
            wo.template cast<U>(),
            bo.template cast<U>(),
            ln2_scale.template cast<U>(),
            ln2_shift.template cast<U>(),
            ff1_w.template cast<U>(),
            ff1_b.template cast<U>(),
            ff2_w.template cast<U>(),
            ff2_b.template cast<U>()};
  }
};
using SelfAttnParams = BasicSelfAttnParams<double>;

SelfAttnParams init_self_attn(Index sources, Index dim, CounterRng& rng);
SelfAttnParams zeros_like(const SelfAttnParams& params);
std::vector<TensorRef> tensors(SelfAttnParams& params);

struct SelfAttnCache {
  MatrixD tokens;  // (rows*N) x d
  nn::LayerNormCache ln1;
  MatrixD y1, q, k, v;
  std::vector<MatrixD> attention;  // per (row, head), N x N
  MatrixD mixed;                   // attention output before wo
  MatrixD x2;
  nn::LayerNormCache ln2;
  MatrixD y2, ff_pre, ff_act;
  Index rows = 0;
  bool valid = false;
};

/// Batched forward over flattened compounds (rows x N*d).
template <typename T>
Matrix<T> self_attn_rows(const BasicSelfAttnParams<T>& params, const Matrix<T>& flat_rows,
                         SelfAttnCache* cache = nullptr);

RowVectorD self_attn_forward(const CompoundEmbedding& compound, const SelfAttnParams& params,
                             SelfAttnCache* cache = nullptr);

struct SelfAttnGradients {
  SelfAttnParams params;
  MatrixD input;
};

SelfAttnGradients self_attn_backward(const SelfAttnParams& params, const SelfAttnCache& cache,
                                     const MatrixD& output_grad);

// ---------------------------------------------------------------------------
// Top-3 mixture of experts: a GELU MLP scores the N sources (softmax), the
// three best (ties to the lower index) are concatenated in score order and
// remapped by a 3d x 3d linear layer. Routing is hard and carries no
// gradient to the gating network.
// ---------------------------------------------------------------------------

template <typename T>
struct BasicMoeParams {
  Index sources = 0;
  Index dim = 0;
  Matrix<T> gate_w1, gate_b1;  // N*d x d, 1 x d
  Matrix<T> gate_w2, gate_b2;  // d x K, 1 x K
  Matrix<T> proj_w, proj_b;    // 3d x 3d, 1 x 3d

  template <typename U>
  BasicMoeParams<U> cast() const {
    return {sources,
            dim,
            gate_w1.template cast<U>(),
            gate_b1.template cast<U>(),
            gate_w2.template cast<U>(),
            gate_b2.template cast<U>(),
            proj_w.template cast<U>(),
            proj_b.template cast<U>()};
  }
};
using MoeParams = BasicMoeParams<double>;

MoeParams init_moe(Index sources, Index dim, CounterRng& rng);
MoeParams zeros_like(const MoeParams& params);
std::vector<TensorRef> tensors(MoeParams& params);

/// Indices of the three largest scores, highest first, ties to the lower index.
std::array<Index, kMoeTopK> top3_indices(const RowVectorD& scores);

/// Softmax expert scores for a batch of flattened compounds: rows x N.
template <typename T>
Matrix<T> moe_gate_scores(const BasicMoeParams<T>& params, const Matrix<T>& flat_rows);

struct MoeCache {
  MatrixD fused;  // rows x 3d, before projection
  std::vector<std::array<Index, kMoeTopK>> selected;
  Index input_width = 0;
  bool valid = false;
};

template <typename T>
Matrix<T> moe_rows(const BasicMoeParams<T>& params, const Matrix<T>& flat_rows,
                   MoeCache* cache = nullptr);

struct MoeOutput {
  RowVectorD fused;  // 3d, after projection
  std::array<Index, kMoeTopK> selected{};
  RowVectorD gate_scores;
};

MoeOutput moe_top3_forward(const CompoundEmbedding& compound, const MoeParams& params);

struct MoeGradients {
  MoeParams params;  // gating blocks stay zero
  MatrixD input;
};

MoeGradients moe_backward(const MoeParams& params, const MoeCache& cache,
                          const MatrixD& output_grad);

// ---------------------------------------------------------------------------
// Plain concatenation ablations.
// ---------------------------------------------------------------------------

/// Flattens the compound; with_mask applies a fresh mask drawn from `seed`
/// (training only, callers pass with_mask = false at inference).
RowVectorD ensemble_forward(const CompoundEmbedding& compound, bool with_mask, double rho,
                            std::uint64_t seed);

}  // namespace adafusion
