// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <vector>

#include "adafusion/embedding_ops.hpp"
#include "adafusion/nn.hpp"
#include "adafusion/rng.hpp"
#include "adafusion/tensor.hpp"

namespace adafusion {

/// Coarse emits one gate per source, broadcast over that source's d-wide
/// block; fine emits one gate per feature element.
enum class GateVariant { Coarse, Fine };

struct TunerShape {
  Index sources = 0;
  Index dim = 0;
  Index hidden = 0;
  GateVariant variant = GateVariant::Fine;

  Index flat() const { return sources * dim; }
  Index outputs() const { return variant == GateVariant::Coarse ? sources : sources * dim; }

  /// hidden = N * d / 2 (at least 1).
  static TunerShape with_default_hidden(Index sources, Index dim, GateVariant variant);
};

/// Tuner parameters: layer norm over the flattened N*d input, then
/// linear(h) -> GELU -> linear(out) -> sigmoid.
template <typename T>
struct BasicTunerParams {
  TunerShape shape;
  Matrix<T> norm_scale;  // 1 x N*d
  Matrix<T> norm_shift;  // 1 x N*d
  Matrix<T> w1;          // N*d x h
  Matrix<T> b1;          // 1 x h
  Matrix<T> w2;          // h x out
  Matrix<T> b2;          // 1 x out

  template <typename U>
  BasicTunerParams<U> cast() const {
    return {shape,
            norm_scale.template cast<U>(),
            norm_shift.template cast<U>(),
            w1.template cast<U>(),
            b1.template cast<U>(),
            w2.template cast<U>(),
            b2.template cast<U>()};
  }
};

using TunerParams = BasicTunerParams<double>;

TunerParams init_tuner(const TunerShape& shape, CounterRng& rng);
TunerParams zeros_like(const TunerParams& params);
std::vector<TensorRef> tensors(TunerParams& params);

/// N x d gate values in (0, 1). For the coarse variant `source_gates` keeps
/// the pre-broadcast N-vector.
struct GateMatrix {
  MatrixD values;
  std::optional<RowVectorD> source_gates;
};

struct TunedPrompt {
  MatrixD values;
};

struct ContributionVector {
  RowVectorD scores;
  Index argmax_source = 0;
};

/// Intermediates of a batched forward, consumed by tuner_backward.
struct TunerCache {
  nn::LayerNormCache norm;
  MatrixD normed;
  MatrixD pre_hidden;
  MatrixD hidden;
  MatrixD raw_gate;  // sigmoid outputs before any broadcast: rows x out
  bool valid = false;
};

/// Batched forward: each row of `flat_rows` is one flattened (masked)
/// compound embedding; each output row is the flattened N x d gate.
template <typename T>
Matrix<T> tuner_forward_rows(const BasicTunerParams<T>& params, const Matrix<T>& flat_rows,
                             TunerCache* cache = nullptr);

GateMatrix tuner_forward(const TunerParams& params, const CompoundEmbedding& masked);

TunedPrompt apply_gate(const CompoundEmbedding& compound, const GateMatrix& gate);

ContributionVector contribution_scores(const GateMatrix& gate);

/// Per-row contribution scores for a batch of flattened gates: rows x N.
MatrixD contribution_scores_rows(const MatrixD& gate_rows, Index sources, Index dim);

/// Lowest index wins ties.
Index argmax_lowest(const RowVectorD& values);

struct TunerGradients {
  TunerParams params;
  MatrixD input;  // gradient w.r.t. the tuner input rows
};

/// Exact gradients of the batched forward given the upstream gradient on the
/// flattened gate rows.
TunerGradients tuner_backward(const TunerParams& params, const TunerCache& cache,
                              const MatrixD& gate_grad);

}  // namespace adafusion
