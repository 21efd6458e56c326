// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/throughput.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "adafusion/error.hpp"
#include "adafusion/rng.hpp"

namespace adafusion {

std::vector<Index> ThroughputConfig::default_bag_sizes() {
  std::vector<Index> sizes;
  for (Index n = 2000; n <= 40000; n += 2000) sizes.push_back(n);
  return sizes;
}

RowVector<float> bag_logits_chunked(const BasicFusionModel<float>& model,
                                    const Matrix<float>& compound_rows, Index chunk) {
  require(model.abmil.has_value(), ErrorKind::VariantTaskMismatch, "model has no ABMIL head");
  require(chunk >= 1, ErrorKind::InvalidArgument, "chunk must be >= 1");
  const Index rows = compound_rows.rows();
  Matrix<float> fused(rows, model.spec.fused_width());
  for (Index start = 0; start < rows; start += chunk) {
    const Index n = std::min(chunk, rows - start);
    fused.middleRows(start, n) =
        fuse_rows_infer(model, Matrix<float>(compound_rows.middleRows(start, n)));
  }
  return abmil_logits(*model.abmil, fused);
}

std::vector<ThroughputReport> throughput_bench(
    const ThroughputConfig& cfg,
    const std::function<void(const std::string&, Index, double)>& progress) {
  require(cfg.repeats >= 1 && !cfg.bag_sizes.empty() && !cfg.methods.empty(),
          ErrorKind::ConfigInvalid, "throughput bench needs methods, bag sizes and repeats");
  ModelSpec base;
  base.task = TaskKind::Classification;
  base.dim = cfg.dim;
  base.outputs = cfg.classes;
  for (int s = 0; s < cfg.sources; ++s) base.source_ids.push_back("src" + std::to_string(s));

  std::vector<ThroughputReport> reports;
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    ModelSpec spec = base;
    spec.variant = cfg.methods[m];
    const auto model = to_float(init_model(spec, derive_key(cfg.seed, {1, m})));
    ThroughputReport rep;
    rep.method = spec.variant.to_string();
    rep.dim = cfg.dim;
    for (std::size_t b = 0; b < cfg.bag_sizes.size(); ++b) {
      const Index tiles = cfg.bag_sizes[b];
      CounterRng rng(derive_key(cfg.seed, {2, b}));
      std::normal_distribution<float> normal(0.0f, 1.0f);
      Matrix<float> feats(tiles, spec.flat_width());
      for (Index i = 0; i < feats.size(); ++i) feats.data()[i] = normal(rng);

      std::vector<double> seconds;
      float sink = 0.0f;
      for (int r = 0; r < cfg.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const RowVector<float> logits = bag_logits_chunked(model, feats, cfg.chunk);
        const auto t1 = std::chrono::steady_clock::now();
        sink += logits(0);
        seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
      }
      require(std::isfinite(sink), ErrorKind::NonFiniteValue, "non-finite logits in bench");
      std::nth_element(seconds.begin(), seconds.begin() + static_cast<std::ptrdiff_t>(seconds.size() / 2),
                       seconds.end());
      const double median = seconds[seconds.size() / 2];
      rep.bag_sizes.push_back(tiles);
      rep.fps.push_back(1.0 / median);
      if (progress) progress(rep.method, tiles, rep.fps.back());
    }
    double sum = 0.0;
    for (double f : rep.fps) sum += f;
    rep.mean_fps = sum / static_cast<double>(rep.fps.size());
    reports.push_back(std::move(rep));
  }
  return reports;
}

std::string throughput_csv(const std::vector<ThroughputReport>& reports) {
  std::string out = "method,d,bag_size,fps\n";
  char buf[128];
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.bag_sizes.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%.6g\n", r.method.c_str(),
                    static_cast<long long>(r.dim), static_cast<long long>(r.bag_sizes[i]), r.fps[i]);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "%s,%lld,mean,%.6g\n", r.method.c_str(),
                  static_cast<long long>(r.dim), r.mean_fps);
    out += buf;
  }
  return out;
}

std::string throughput_table(const std::vector<ThroughputReport>& reports) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%9s", "tiles");
  out += buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, " %12s", r.method.c_str());
    out += buf;
  }
  out += "\n";
  if (reports.empty()) return out;
  for (std::size_t i = 0; i < reports.front().bag_sizes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%9lld", static_cast<long long>(reports.front().bag_sizes[i]));
    out += buf;
    for (const auto& r : reports) {
      std::snprintf(buf, sizeof buf, " %12.4f", r.fps[i]);
      out += buf;
    }
    out += "\n";
  }
  std::snprintf(buf, sizeof buf, "%9s", "mean");
  out += buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, " %12.4f", r.mean_fps);
    out += buf;
  }
  out += "\n";
  return out;
}

}  // namespace adafusion
