// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "adafusion/error.hpp"

namespace adafusion {

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  require(!preds.empty(), ErrorKind::EmptyInput, "accuracy of an empty sample");
  require(preds.size() == labels.size(), ErrorKind::ShapeMismatch, "accuracy length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorKind::ShapeMismatch, "AUC length mismatch");
  require(!scores.empty(), ErrorKind::EmptyInput, "AUC of an empty sample");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the rank sum of positives; a tie group spanning 1-based ranks
  // lo..hi gives every member the rank (lo + hi) / 2.
  std::int64_t twice_rank_sum = 0;
  std::int64_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const auto twice_rank = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      require(labels[order[k]] == 0 || labels[order[k]] == 1, ErrorKind::InvalidArgument,
              "AUC labels must be 0 or 1");
      if (labels[order[k]] == 1) {
        twice_rank_sum += twice_rank;
        ++positives;
      }
    }
    i = j + 1;
  }
  const std::int64_t negatives = static_cast<std::int64_t>(n) - positives;
  require(positives > 0 && negatives > 0, ErrorKind::DegenerateLabels,
          "AUC needs at least one positive and one negative");
  // 2U = 2 * rank_sum - n1 (n1 + 1)
  const std::int64_t twice_u = twice_rank_sum - positives * (positives + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * positives * negatives);
}

double auc_macro(const MatrixD& scores, std::span<const int> labels) {
  require(static_cast<std::size_t>(scores.rows()) == labels.size(), ErrorKind::ShapeMismatch,
          "AUC score rows differ from label count");
  const Index classes = scores.cols();
  require(classes >= 2, ErrorKind::InvalidArgument, "AUC needs at least two classes");
  std::vector<double> column(labels.size());
  std::vector<int> binary(labels.size());
  auto class_auc = [&](Index c) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      column[i] = scores(static_cast<Index>(i), c);
      binary[i] = labels[i] == c ? 1 : 0;
    }
    return auc(column, binary);
  };
  if (classes == 2) return class_auc(1);
  double sum = 0.0;
  for (Index c = 0; c < classes; ++c) sum += class_auc(c);
  return sum / static_cast<double>(classes);
}

double pcc(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::ShapeMismatch, "PCC length mismatch");
  require(x.size() >= 2, ErrorKind::EmptyInput, "PCC needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0, ErrorKind::ZeroVariance, "PCC undefined for constant input");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace adafusion
