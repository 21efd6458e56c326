// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "adafusion/rng.hpp"
#include "adafusion/tensor.hpp"

namespace adafusion {

inline constexpr Index kDefaultAttentionWidth = 128;

/// Attention-MIL head: score_k = w . tanh(V^T h_k), attention = softmax over
/// tiles, bag = sum_k attention_k h_k, logits = W^T bag + b.
template <typename T>
struct BasicAbmilParams {
  Matrix<T> attn_v;        // D x a
  Matrix<T> attn_w;        // 1 x a
  Matrix<T> classifier_w;  // D x C
  Matrix<T> classifier_b;  // 1 x C

  Index input_dim() const { return attn_v.rows(); }
  Index classes() const { return classifier_w.cols(); }

  template <typename U>
  BasicAbmilParams<U> cast() const {
    return {attn_v.template cast<U>(), attn_w.template cast<U>(),
            classifier_w.template cast<U>(), classifier_b.template cast<U>()};
  }
};
using AbmilParams = BasicAbmilParams<double>;

template <typename T>
struct BasicRegressorParams {
  Matrix<T> w;  // D x G
  Matrix<T> b;  // 1 x G

  template <typename U>
  BasicRegressorParams<U> cast() const {
    return {w.template cast<U>(), b.template cast<U>()};
  }
};
using RegressorParams = BasicRegressorParams<double>;

AbmilParams init_abmil(Index input_dim, Index attention_width, Index classes, CounterRng& rng);
AbmilParams zeros_like(const AbmilParams& params);
std::vector<TensorRef> tensors(AbmilParams& params);

RegressorParams init_regressor(Index input_dim, Index targets, CounterRng& rng);
RegressorParams zeros_like(const RegressorParams& params);
std::vector<TensorRef> tensors(RegressorParams& params);

struct Prediction {
  RowVectorD outputs;    // logits or regression outputs
  RowVectorD attention;  // per tile, classification only
};

struct AbmilCache {
  MatrixD tiles;   // M x D
  MatrixD hidden;  // tanh(H V), M x a
  RowVectorD attention;
  RowVectorD bag;
  bool valid = false;
};

/// `tiles` holds one flattened tuned prompt per row.
Prediction abmil_forward(const MatrixD& tiles, const AbmilParams& params,
                         AbmilCache* cache = nullptr);

/// Inference-only logits, any scalar type.
template <typename T>
RowVector<T> abmil_logits(const BasicAbmilParams<T>& params, const Matrix<T>& tiles);

struct AbmilGradients {
  AbmilParams params;
  MatrixD tiles;
};

AbmilGradients abmil_backward(const AbmilParams& params, const AbmilCache& cache,
                              const RowVectorD& logit_grad);

/// Row-wise linear read-out: outputs = X W + b, one row per tile.
template <typename T>
Matrix<T> regress_rows(const BasicRegressorParams<T>& params, const Matrix<T>& rows);

Prediction regress_forward(const RowVectorD& tile_prompt, const RegressorParams& params);

struct RegressorGradients {
  RegressorParams params;
  MatrixD rows;
};

RegressorGradients regress_backward(const RegressorParams& params, const MatrixD& rows,
                                    const MatrixD& output_grad);

}  // namespace adafusion
