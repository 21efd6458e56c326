// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "adafusion/error.hpp"
#include "adafusion/synthbench.hpp"
#include "adafusion/training.hpp"

namespace adafusion::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kNumeric = 3, kIo = 4 };

int exit_code_for(ErrorKind kind);

/// Parses and runs one command line. Never throws; returns the exit code.
/// Every run writes <out>/run_config.toml; `adafusion --config <file>` replays it.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

inline constexpr const char* kConfigEcho = "run_config.toml";

struct PoolOptions {
  std::filesystem::path manifest;
  std::filesystem::path out;
  Index dim = 64;
  int threads = 1;
};

struct TrainOptions {
  std::filesystem::path manifest;
  std::filesystem::path out;
  std::string variant = "fine";
  Index dim = 0;  // 0: use the tables' common dim
  double rho = 0.2;
  double lr = 2e-4;
  double wd = 1e-5;
  int epochs = 0;
  Index batch = 0;
  Index hidden = 0;
  std::uint64_t seed = 0;
  int threads = 1;
  bool quiet = false;
};

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  std::filesystem::path out;
  std::string split = "test";
  int threads = 1;
};

struct ContribOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  std::filesystem::path out;
  std::string split = "test";
  std::string slide;  // empty: every slide of the split
  int block = 4;
  bool per_source = false;
  int threads = 1;
};

struct SynthOptions {
  std::filesystem::path out;
  std::string task = "classification";
  Index native_dim = 128;
  SynthConfig cfg;
  int threads = 1;
};

struct BenchOptions {
  std::filesystem::path out;
  std::vector<std::string> variants{"fine", "self-attn"};
  Index dim = 512;
  int sources = 6;
  Index min_tiles = 2000;
  Index max_tiles = 40000;
  Index step = 2000;
  int repeats = 5;
  Index chunk = 256;
  std::uint64_t seed = 0;
};

struct GradcheckOptions {
  std::filesystem::path out = ".";
  std::vector<std::string> variants{"coarse", "fine", "self-attn", "ensemble",
                                    "ensemble-mask", "moe-top3"};
  std::string task = "classification";
  std::uint64_t seed = 0;
  int seeds = 1;
  double eps = 1e-3;
  double tolerance = 1e-4;
};

/// Loads a manifest's tables, pools them to `dim` (0: keep) and aligns bags.
Dataset load_dataset(const std::filesystem::path& manifest, Index dim, int threads);

void cmd_pool(const PoolOptions& o, std::ostream& out);
void cmd_train(const TrainOptions& o, std::ostream& out);
MetricReport cmd_eval(const EvalOptions& o, std::ostream& out);
void cmd_contrib(const ContribOptions& o, std::ostream& out);
void cmd_synth(const SynthOptions& o, std::ostream& out);
void cmd_bench_fps(const BenchOptions& o, std::ostream& out);
/// Returns the worst relative error across variants and seeds.
double cmd_gradcheck(const GradcheckOptions& o, std::ostream& out);

}  // namespace adafusion::cli
