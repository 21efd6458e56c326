// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "adafusion/tensor.hpp"

namespace adafusion {

/// Fraction of positions where preds equals labels.
double accuracy(std::span<const int> preds, std::span<const int> labels);

/// Mann-Whitney AUC: probability that a random positive outscores a random
/// negative, ties credited one half. Labels are 0/1. Computed from average
/// ranks with exact integer arithmetic in units of half-pairs.
double auc(std::span<const double> scores, std::span<const int> labels);

/// One-vs-rest macro AUC over C classes; `scores` is n x C. For C == 2 this
/// is the binary AUC of the class-1 column.
double auc_macro(const MatrixD& scores, std::span<const int> labels);

/// Pearson correlation coefficient.
double pcc(std::span<const double> x, std::span<const double> y);

struct MetricReport {
  double acc = 0.0;
  double auc = 0.0;
  double pcc = 0.0;
  std::vector<double> per_class;  // per-class AUC (classification) or per-target PCC
  Index n = 0;
  bool has_classification = false;
  bool has_regression = false;
};

}  // namespace adafusion
