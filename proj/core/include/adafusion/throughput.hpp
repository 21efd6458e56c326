// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "adafusion/fusion_model.hpp"

namespace adafusion {

struct ThroughputConfig {
  std::vector<VariantSpec> methods{{Variant::Fine, ""}, {Variant::SelfAttn, ""}};
  int sources = 6;
  Index dim = 512;
  std::vector<Index> bag_sizes = default_bag_sizes();
  int repeats = 5;
  int classes = 2;
  Index chunk = 256;  // tiles fused per block; bounds peak memory
  std::uint64_t seed = 0;

  /// 2,000 to 40,000 tiles in steps of 2,000.
  static std::vector<Index> default_bag_sizes();
};

struct ThroughputReport {
  std::string method;
  Index dim = 0;
  std::vector<Index> bag_sizes;
  std::vector<double> fps;  // 1 / median seconds per bag
  double mean_fps = 0.0;
};

/// Float inference (fusion + ABMIL head) on random features, single thread.
/// `progress` is called after each bag size.
std::vector<ThroughputReport> throughput_bench(
    const ThroughputConfig& cfg,
    const std::function<void(const std::string&, Index, double)>& progress = {});

/// Inference logits for one bag, fusing `chunk` tiles at a time.
RowVector<float> bag_logits_chunked(const BasicFusionModel<float>& model,
                                    const Matrix<float>& compound_rows, Index chunk);

/// method,d,bag_size,fps plus a mean row per method.
std::string throughput_csv(const std::vector<ThroughputReport>& reports);
std::string throughput_table(const std::vector<ThroughputReport>& reports);

}  // namespace adafusion
