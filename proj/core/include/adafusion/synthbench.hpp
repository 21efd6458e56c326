// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "adafusion/feature_store.hpp"
#include "adafusion/training.hpp"

namespace adafusion {

/// Synthetic bags with planted per-source specialization. Every tile draws a
/// phenotype; only the phenotype's informative source carries the tile's
/// class (or target) signal, the other sources emit pure noise for it.
struct SynthConfig {
  TaskKind task = TaskKind::Classification;
  int sources = 4;
  std::vector<Index> native_dims;  // empty: 128 for every source
  int phenotypes = 4;
  /// phenotype -> informative source; empty: p mod sources
  std::vector<int> specialization;
  int min_tiles = 4;
  int max_tiles = 8;
  int bags_per_class = 1200;  // regression: bags = bags_per_class * classes
  int classes = 2;
  int targets = 4;
  double signal = 1.0;
  double noise = 1.0;
  /// Class-independent part of the subspace shift; marks the informative source.
  double marker = 1.0;
  /// Probability that a tile's class equals the slide's drawn class.
  double tile_purity = 0.75;
  double test_fraction = 0.3;
  std::uint64_t seed = 0;

  Index native_dim(int source) const;
  int informative_source(int phenotype) const;
  void validate() const;
};

struct PlantedTile {
  std::uint64_t tile_id = 0;
  std::string slide_id;
  int phenotype = 0;
  int informative_source = 0;
};

struct SynthDataset {
  DatasetManifest manifest;
  std::vector<FeatureTable> tables;  // raw, native dims, manifest order
  std::vector<PlantedTile> planted;

  /// tile id -> informative source index
  std::map<std::uint64_t, int> truth() const;
};

std::string synth_source_id(int source);

/// Deterministic for a given config; bags are generated in parallel when
/// `threads` > 1 without changing the output.
SynthDataset generate_synthetic(const SynthConfig& cfg, int threads = 1);

/// Writes manifest.json, one PFT1 file per source and planted.csv into
/// `dir`. The manifest's source paths are rewritten to point there.
void write_synthetic(SynthDataset& data, const std::filesystem::path& dir);
std::vector<PlantedTile> read_planted(const std::filesystem::path& path);

/// Pools every table to `dim` and aligns bags.
Dataset pooled_dataset(const DatasetManifest& manifest, const std::vector<FeatureTable>& tables,
                       Index dim, int threads = 1);

struct BenchmarkRow {
  std::string method;
  EvalResult result;
};

/// Trains each method with the same config (seed, splits) and reports test
/// metrics. Single-source baselines are requested as "single:<id>".
std::vector<BenchmarkRow> run_benchmark(const Dataset& data,
                                        const std::vector<VariantSpec>& methods,
                                        const TrainConfig& cfg, int threads = 1);

/// method,n,acc,auc,pcc
std::string benchmark_csv(const std::vector<BenchmarkRow>& rows);
std::string benchmark_table(const std::vector<BenchmarkRow>& rows);

}  // namespace adafusion
