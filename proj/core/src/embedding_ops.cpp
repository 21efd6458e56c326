// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/embedding_ops.hpp"

#include <random>
#include <set>

#include "adafusion/error.hpp"

namespace adafusion {
namespace {

void check_rho(double rho) {
  require(rho >= 0.0 && rho <= 1.0, ErrorKind::RhoOutOfRange,
          "rho must lie in [0, 1], got " + std::to_string(rho));
}

}  // namespace

RowVectorD CompoundEmbedding::flattened() const {
  return Eigen::Map<const RowVectorD>(values.data(), values.size());
}

CompoundEmbedding CompoundEmbedding::from_flat(const RowVectorD& flat,
                                               std::vector<std::string> source_ids, Index dim) {
  require(dim > 0 && flat.size() == static_cast<Index>(source_ids.size()) * dim,
          ErrorKind::ShapeMismatch, "flat compound length must equal N * d");
  CompoundEmbedding c;
  c.source_ids = std::move(source_ids);
  c.values = Eigen::Map<const MatrixD>(flat.data(), flat.size() / dim, dim);
  return c;
}

double MaskMatrix::retained_fraction() const {
  if (bits.size() == 0) return 0.0;
  return bits.cast<double>().sum() / static_cast<double>(bits.size());
}

std::vector<Index> pool_boundaries(Index in_dim, Index out_dim) {
  require(out_dim >= 1, ErrorKind::InvalidArgument, "pooled dimension must be >= 1");
  require(out_dim <= in_dim, ErrorKind::TargetDimTooLarge,
          "cannot pool " + std::to_string(in_dim) + " dims to " + std::to_string(out_dim));
  std::vector<Index> b(static_cast<std::size_t>(out_dim) + 1);
  for (Index k = 0; k <= out_dim; ++k) b[static_cast<std::size_t>(k)] = (k * in_dim) / out_dim;
  return b;
}

template <typename T>
RowVector<T> mean_pool(std::span<const T> raw, Index dim) {
  const auto bounds = pool_boundaries(static_cast<Index>(raw.size()), dim);
  RowVector<T> out(dim);
  for (Index k = 0; k < dim; ++k) {
    const Index lo = bounds[static_cast<std::size_t>(k)];
    const Index hi = bounds[static_cast<std::size_t>(k) + 1];
    T sum = T(0);
    for (Index j = lo; j < hi; ++j) sum += raw[static_cast<std::size_t>(j)];
    out(k) = sum / static_cast<T>(hi - lo);
  }
  return out;
}

template RowVector<double> mean_pool<double>(std::span<const double>, Index);
template RowVector<float> mean_pool<float>(std::span<const float>, Index);

PooledEmbedding mean_pool(std::span<const double> raw, Index dim, std::string source_id) {
  return {std::move(source_id), mean_pool<double>(raw, dim)};
}

FeatureTable pool_table(const FeatureTable& table, Index dim) {
  if (dim > table.dim())
    fail(ErrorKind::TargetDimTooLarge, "source '" + table.source.source_id + "' has native dim " +
                                           std::to_string(table.dim()) + " < " +
                                           std::to_string(dim));
  FeatureTable out;
  out.source = table.source;
  out.source.native_dim = dim;
  out.tile_ids = table.tile_ids;
  out.values.resize(table.tile_count(), dim);
  for (Index r = 0; r < table.tile_count(); ++r) {
    std::span<const float> row(table.values.row(r).data(), static_cast<std::size_t>(table.dim()));
    out.values.row(r) = mean_pool<float>(row, dim);
  }
  return out;
}

CompoundEmbedding compose_compound(const std::vector<PooledEmbedding>& pooled,
                                   const std::vector<std::string>& source_order) {
  require(!source_order.empty(), ErrorKind::MissingSource, "empty source order");
  std::set<std::string> seen;
  for (const auto& p : pooled)
    require(seen.insert(p.source_id).second, ErrorKind::DuplicateSource,
            "source '" + p.source_id + "' pooled twice");
  CompoundEmbedding c;
  c.source_ids = source_order;
  Index dim = -1;
  for (std::size_t i = 0; i < source_order.size(); ++i) {
    const PooledEmbedding* found = nullptr;
    for (const auto& p : pooled)
      if (p.source_id == source_order[i]) found = &p;
    require(found != nullptr, ErrorKind::MissingSource,
            "no pooled embedding for source '" + source_order[i] + "'");
    if (dim < 0) {
      dim = found->values.size();
      c.values.resize(static_cast<Index>(source_order.size()), dim);
    }
    require(found->values.size() == dim, ErrorKind::ShapeMismatch,
            "pooled embeddings differ in length");
    c.values.row(static_cast<Index>(i)) = found->values;
  }
  require(pooled.size() == source_order.size(), ErrorKind::DuplicateSource,
          "pooled embeddings for undeclared sources");
  return c;
}

MaskMatrix sample_mask(Index sources, Index dim, double rho, std::uint64_t seed) {
  check_rho(rho);
  MaskMatrix m;
  m.rho = rho;
  m.seed = seed;
  m.bits.resize(sources, dim);
  CounterRng rng(seed);
  std::bernoulli_distribution keep(1.0 - rho);
  for (Index i = 0; i < m.bits.size(); ++i) m.bits.data()[i] = keep(rng) ? 1 : 0;
  return m;
}

CompoundEmbedding apply_mask(const CompoundEmbedding& compound, const MaskMatrix& mask) {
  require(compound.values.rows() == mask.bits.rows() && compound.values.cols() == mask.bits.cols(),
          ErrorKind::ShapeMismatch, "mask shape differs from compound");
  CompoundEmbedding out = compound;
  out.values = compound.values.cwiseProduct(mask.bits.cast<double>());
  return out;
}

void mask_rows_inplace(MatrixD& flat_rows, double rho, std::uint64_t seed, std::uint64_t step) {
  check_rho(rho);
  if (rho == 0.0) return;
  for (Index r = 0; r < flat_rows.rows(); ++r) {
    CounterRng rng(derive_key(seed, {step, static_cast<std::uint64_t>(r)}));
    std::bernoulli_distribution keep(1.0 - rho);
    for (Index c = 0; c < flat_rows.cols(); ++c)
      if (!keep(rng)) flat_rows(r, c) *= 0.0;  // same signed zero as apply_mask
  }
}

}  // namespace adafusion
