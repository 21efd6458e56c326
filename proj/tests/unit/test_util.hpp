// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "adafusion/error.hpp"
#include "adafusion/feature_store.hpp"
#include "adafusion/rng.hpp"
#include "adafusion/tensor.hpp"

namespace adafusion::testing {

#define EXPECT_ERROR_KIND(stmt, expected_kind)                                      \
  do {                                                                              \
    try {                                                                           \
      stmt;                                                                         \
      ADD_FAILURE() << "expected " << ::adafusion::to_string(expected_kind);        \
    } catch (const ::adafusion::Error& e_) {                                        \
      EXPECT_EQ(e_.kind(), expected_kind) << e_.what();                             \
    }                                                                               \
  } while (0)

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("adafusion_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline MatrixD random_matrix(Index rows, Index cols, CounterRng& rng, double scale = 1.0) {
  MatrixD m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * rng.uniform() - 1.0);
  return m;
}

template <typename T>
bool bitwise_equal(const Matrix<T>& a, const Matrix<T>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<std::size_t>(a.size())) == 0;
}

template <typename T>
bool bitwise_equal(const RowVector<T>& a, const RowVector<T>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<std::size_t>(a.size())) == 0;
}

/// Five-point central difference of `f` with respect to every entry of `x`.
template <typename F>
MatrixD numeric_gradient(MatrixD& x, F&& f, double eps = 1e-3) {
  MatrixD g(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    auto at = [&](double h) {
      x.data()[i] = saved + h;
      return f();
    };
    const double d1 = at(eps) - at(-eps);
    const double d2 = at(2 * eps) - at(-2 * eps);
    x.data()[i] = saved;
    g.data()[i] = (8.0 * d1 - d2) / (12.0 * eps);
  }
  return g;
}

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-7)
inline double max_rel_error(const MatrixD& analytic, const MatrixD& numeric) {
  double worst = 0.0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-7}));
  }
  return worst;
}

inline FeatureTable make_table(const std::string& id, std::vector<std::uint64_t> ids,
                               const MatrixF& values) {
  FeatureTable t;
  t.source = {id, values.cols(), id};
  t.tile_ids = std::move(ids);
  t.values = values;
  return t;
}

}  // namespace adafusion::testing
