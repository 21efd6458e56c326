// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/nn.hpp"

#include <algorithm>
#include <random>

#include "adafusion/error.hpp"

namespace adafusion::nn {
namespace {

constexpr Index kBlockK = 128;
constexpr Index kBlockJ = 256;
constexpr int kRows = 8;

template <typename T>
constexpr int lane_width() {
  return 64 / static_cast<int>(sizeof(T)) * 2;  // two 512-bit registers per row
}

// acc[i][l] += sum_k x[i, k] * w[k, l], for a full kRows x kWidth block.
template <typename T, int kWidth>
inline void micro_kernel_full(const T* x, Index ldx, const T* w, Index ldw, Index k_count,
                              T* y, Index ldy) {
  T acc[kRows][kWidth];
  for (int i = 0; i < kRows; ++i)
    for (int l = 0; l < kWidth; ++l) acc[i][l] = y[i * ldy + l];
  for (Index k = 0; k < k_count; ++k) {
    const T* wr = w + k * ldw;
    for (int i = 0; i < kRows; ++i) {
      const T xv = x[i * ldx + k];
      for (int l = 0; l < kWidth; ++l) acc[i][l] = std::fma(xv, wr[l], acc[i][l]);
    }
  }
  for (int i = 0; i < kRows; ++i)
    for (int l = 0; l < kWidth; ++l) y[i * ldy + l] = acc[i][l];
}

template <typename T>
inline void micro_kernel_edge(const T* x, Index ldx, const T* w, Index ldw, Index k_count,
                              T* y, Index ldy, Index rows, Index width) {
  for (Index i = 0; i < rows; ++i) {
    for (Index l = 0; l < width; ++l) {
      T acc = y[i * ldy + l];
      for (Index k = 0; k < k_count; ++k) acc = std::fma(x[i * ldx + k], w[k * ldw + l], acc);
      y[i * ldy + l] = acc;
    }
  }
}

}  // namespace

template <typename T>
Matrix<T> dense_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  require(x.cols() == w.rows(), ErrorKind::ShapeMismatch, "dense input width does not match weights");
  require(b.rows() == 1 && b.cols() == w.cols(), ErrorKind::ShapeMismatch, "dense bias shape");
  constexpr int kWidth = lane_width<T>();
  const Index rows = x.rows(), in = x.cols(), out = w.cols();
  Matrix<T> y = Matrix<T>::Zero(rows, out);
  const T* xp = x.data();
  const T* wp = w.data();
  T* yp = y.data();
  for (Index k0 = 0; k0 < in; k0 += kBlockK) {
    const Index kc = std::min(kBlockK, in - k0);
    for (Index j0 = 0; j0 < out; j0 += kBlockJ) {
      const Index j1 = std::min(out, j0 + kBlockJ);
      for (Index r = 0; r < rows; r += kRows) {
        const Index nr = std::min<Index>(kRows, rows - r);
        for (Index j = j0; j < j1; j += kWidth) {
          const Index nw = std::min<Index>(kWidth, j1 - j);
          const T* xb = xp + r * in + k0;
          const T* wb = wp + k0 * out + j;
          T* yb = yp + r * out + j;
          if (nr == kRows && nw == kWidth) {
            micro_kernel_full<T, kWidth>(xb, in, wb, out, kc, yb, out);
          } else {
            micro_kernel_edge<T>(xb, in, wb, out, kc, yb, out, nr, nw);
          }
        }
      }
    }
  }
  y.rowwise() += b.row(0);
  return y;
}

template MatrixD dense_forward<double>(const MatrixD&, const MatrixD&, const MatrixD&);
template MatrixF dense_forward<float>(const MatrixF&, const MatrixF&, const MatrixF&);

MatrixD dense_backward(const MatrixD& x, const MatrixD& w, const MatrixD& dy, MatrixD& dw,
                       MatrixD& db) {
  require(dy.cols() == w.cols() && x.rows() == dy.rows(), ErrorKind::ShapeMismatch,
          "dense backward shapes");
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  return dy * w.transpose();
}

template <typename T>
Matrix<T> layer_norm_forward(const Matrix<T>& x, const Matrix<T>& scale, const Matrix<T>& shift,
                             LayerNormCache* cache) {
  require(scale.cols() == x.cols() && shift.cols() == x.cols(), ErrorKind::ShapeMismatch,
          "layer norm affine width");
  const Index rows = x.rows(), cols = x.cols();
  Matrix<T> y(rows, cols);
  if (cache) {
    cache->normalized.resize(rows, cols);
    cache->rstd.resize(rows);
  }
  for (Index r = 0; r < rows; ++r) {
    const T mean = x.row(r).mean();
    const T var = (x.row(r).array() - mean).square().mean();
    const T rstd = T(1) / std::sqrt(var + T(kLayerNormEps));
    for (Index c = 0; c < cols; ++c) {
      const T n = (x(r, c) - mean) * rstd;
      y(r, c) = n * scale(0, c) + shift(0, c);
      if (cache) cache->normalized(r, c) = static_cast<double>(n);
    }
    if (cache) cache->rstd(r) = static_cast<double>(rstd);
  }
  return y;
}

template MatrixD layer_norm_forward<double>(const MatrixD&, const MatrixD&, const MatrixD&,
                                            LayerNormCache*);
template MatrixF layer_norm_forward<float>(const MatrixF&, const MatrixF&, const MatrixF&,
                                           LayerNormCache*);

MatrixD layer_norm_backward(const LayerNormCache& cache, const MatrixD& scale, const MatrixD& dy,
                            MatrixD& dscale, MatrixD& dshift) {
  require(cache.normalized.rows() == dy.rows() && cache.normalized.cols() == dy.cols(),
          ErrorKind::MissingForwardCache, "layer norm cache does not match gradient");
  const Index rows = dy.rows(), cols = dy.cols();
  dscale += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  dshift += dy.colwise().sum();
  MatrixD dx(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const RowVectorD dn = dy.row(r).cwiseProduct(scale.row(0));
    const double mean_dn = dn.mean();
    const double mean_dn_n = dn.cwiseProduct(cache.normalized.row(r)).mean();
    dx.row(r) = cache.rstd(r) *
                (dn.array() - mean_dn - cache.normalized.row(r).array() * mean_dn_n).matrix();
  }
  return dx;
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& x) {
  Matrix<T> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

template MatrixD softmax_rows<double>(const MatrixD&);
template MatrixF softmax_rows<float>(const MatrixF&);

MatrixD glorot_uniform(Index fan_in, Index fan_out, CounterRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  MatrixD w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

}  // namespace adafusion::nn
