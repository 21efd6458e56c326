// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adafusion/feature_store.hpp"
#include "adafusion/rng.hpp"
#include "adafusion/tensor.hpp"

namespace adafusion {

struct PooledEmbedding {
  std::string source_id;
  RowVectorD values;
};

/// N x d matrix, row i holds the pooled embedding of source i.
struct CompoundEmbedding {
  std::vector<std::string> source_ids;
  MatrixD values;

  Index sources() const { return values.rows(); }
  Index dim() const { return values.cols(); }
  /// Row-major flattening, length N * d.
  RowVectorD flattened() const;
  static CompoundEmbedding from_flat(const RowVectorD& flat, std::vector<std::string> source_ids,
                                     Index dim);
};

struct MaskMatrix {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> bits;
  double rho = 0.0;
  std::uint64_t seed = 0;

  double retained_fraction() const;
};

/// Segment boundaries used by mean_pool: floor(k * in_dim / out_dim), k = 0..out_dim.
std::vector<Index> pool_boundaries(Index in_dim, Index out_dim);

/// Segment-mean pooling from in_dim down to `dim` (contiguous, near-equal segments).
template <typename T>
RowVector<T> mean_pool(std::span<const T> raw, Index dim);

PooledEmbedding mean_pool(std::span<const double> raw, Index dim, std::string source_id);

/// Pools every row of a table; the result keeps tile ids and source identity.
FeatureTable pool_table(const FeatureTable& table, Index dim);

CompoundEmbedding compose_compound(const std::vector<PooledEmbedding>& pooled,
                                   const std::vector<std::string>& source_order);

/// Each entry is 1 with probability 1 - rho. The mask is a pure function of
/// (seed, shape, rho).
MaskMatrix sample_mask(Index sources, Index dim, double rho, std::uint64_t seed);

CompoundEmbedding apply_mask(const CompoundEmbedding& compound, const MaskMatrix& mask);

/// Masks a batch of flattened compounds in place, one fresh mask per row.
/// Row r uses the stream derive_key(seed, {step, r}).
void mask_rows_inplace(MatrixD& flat_rows, double rho, std::uint64_t seed, std::uint64_t step);

}  // namespace adafusion
