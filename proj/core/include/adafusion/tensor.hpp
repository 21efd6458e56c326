// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace adafusion {

using Index = Eigen::Index;

// Row-major so that one row is one tile (or one token) and rows can be handed
// to the file formats without a transpose.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using MatrixD = Matrix<double>;
using MatrixF = Matrix<float>;
using RowVectorD = RowVector<double>;
using VectorD = Eigen::VectorXd;

/// Non-owning handle to one named parameter tensor. All trainable tensors
/// are stored as MatrixD (biases as 1 x n) so that optimizers, gradient
/// checks and checkpoints can treat them uniformly.
struct TensorRef {
  std::string name;
  MatrixD* value;
};

struct ConstTensorRef {
  std::string name;
  const MatrixD* value;
};

inline Index total_size(const std::vector<TensorRef>& tensors) {
  Index n = 0;
  for (const auto& t : tensors) n += t.value->size();
  return n;
}

}  // namespace adafusion
