// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include "adafusion/rng.hpp"
#include "adafusion/tensor.hpp"

// Shared layer primitives. Forward passes are templated so inference can
// run in float; backward passes are double only.
namespace adafusion::nn {

inline constexpr double kLayerNormEps = 1e-5;

/// y = x * w + b with x: rows x in, w: in x out, b: 1 x out.
///
/// Each output is accumulated with fused multiply-adds in increasing input
/// order starting from zero, and the bias is added last. The result for a
/// given output column therefore depends only on that column's weights, not
/// on the layer width or the batch size (Eigen's GEMM does not guarantee
/// this, it picks different kernels by shape).
template <typename T>
Matrix<T> dense_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b);

template <typename T>
Matrix<T> matmul(const Matrix<T>& x, const Matrix<T>& w) {
  return dense_forward<T>(x, w, Matrix<T>::Zero(1, w.cols()));
}

/// Accumulates dW += x^T dy and db += colsum(dy); returns dx = dy w^T.
MatrixD dense_backward(const MatrixD& x, const MatrixD& w, const MatrixD& dy,
                       MatrixD& dw, MatrixD& db);

struct LayerNormCache {
  MatrixD normalized;  // (x - mean) * rstd
  VectorD rstd;
};

/// Row-wise layer normalisation with a per-feature affine (scale, shift: 1 x cols).
template <typename T>
Matrix<T> layer_norm_forward(const Matrix<T>& x, const Matrix<T>& scale,
                             const Matrix<T>& shift, LayerNormCache* cache = nullptr);

MatrixD layer_norm_backward(const LayerNormCache& cache, const MatrixD& scale,
                            const MatrixD& dy, MatrixD& dscale, MatrixD& dshift);

template <typename T>
inline T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
  const double pdf = 0.39894228040143267794 * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

template <typename T>
inline T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// Numerically stable softmax of each row.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& x);

/// Glorot-uniform init: U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))).
MatrixD glorot_uniform(Index fan_in, Index fan_out, CounterRng& rng);

}  // namespace adafusion::nn
