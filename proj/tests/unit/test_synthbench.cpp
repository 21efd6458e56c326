// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "adafusion/metrics.hpp"
#include "adafusion/synthbench.hpp"
#include "adafusion/throughput.hpp"
#include "test_util.hpp"

namespace adafusion {
namespace {

using testing::TempDir;

SynthConfig small_config(std::uint64_t seed) {
  SynthConfig c;
  c.native_dims.assign(4, 32);
  c.min_tiles = 4;
  c.max_tiles = 8;
  c.bags_per_class = 12;
  c.seed = seed;
  return c;
}

bool tables_equal(const SynthDataset& a, const SynthDataset& b) {
  if (a.tables.size() != b.tables.size()) return false;
  for (std::size_t s = 0; s < a.tables.size(); ++s) {
    if (a.tables[s].tile_ids != b.tables[s].tile_ids) return false;
    if (!testing::bitwise_equal(a.tables[s].values, b.tables[s].values)) return false;
  }
  return true;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Synth, DeterministicAndThreadIndependent) {
  const SynthDataset a = generate_synthetic(small_config(3));
  const SynthDataset b = generate_synthetic(small_config(3));
  const SynthDataset c = generate_synthetic(small_config(3), 3);
  EXPECT_TRUE(tables_equal(a, b));
  EXPECT_TRUE(tables_equal(a, c));
  EXPECT_EQ(a.manifest.splits, c.manifest.splits);
  EXPECT_FALSE(tables_equal(a, generate_synthetic(small_config(4))));
  ASSERT_EQ(a.planted.size(), c.planted.size());
  for (std::size_t i = 0; i < a.planted.size(); ++i)
    EXPECT_EQ(a.planted[i].informative_source, c.planted[i].informative_source);
}

TEST(Synth, ShapesAndSpecialization) {
  SynthConfig cfg = small_config(1);
  cfg.phenotypes = 6;
  const SynthDataset d = generate_synthetic(cfg);
  ASSERT_EQ(d.tables.size(), 4u);
  const Index tiles = d.tables[0].values.rows();
  EXPECT_EQ(static_cast<Index>(d.planted.size()), tiles);
  EXPECT_EQ(d.manifest.slides.size(), 24u);
  EXPECT_GE(tiles, 24 * 4);
  EXPECT_LE(tiles, 24 * 8);
  for (const auto& p : d.planted) EXPECT_EQ(p.informative_source, p.phenotype % 4);
  // stratified by the slide label
  int test[2] = {0, 0}, all[2] = {0, 0};
  for (const auto& [slide, split] : d.manifest.splits) {
    const int y = d.manifest.slides.at(slide).class_index;
    ++all[y];
    test[y] += split == Split::Test;
  }
  for (int y = 0; y < 2; ++y) EXPECT_EQ(test[y], std::lround(0.3 * all[y]));
}

TEST(Synth, ConfigValidation) {
  SynthConfig c = small_config(0);
  c.phenotypes = 3;
  EXPECT_ERROR_KIND(generate_synthetic(c), ErrorKind::ConfigInvalid);
  c = small_config(0);
  c.specialization = {0, 0, 1, 2};  // source 3 never informative
  EXPECT_ERROR_KIND(generate_synthetic(c), ErrorKind::ConfigInvalid);
  c = small_config(0);
  c.noise = -1;
  EXPECT_ERROR_KIND(generate_synthetic(c), ErrorKind::ConfigInvalid);
  c = small_config(0);
  c.native_dims.assign(4, 4);
  EXPECT_ERROR_KIND(generate_synthetic(c), ErrorKind::ConfigInvalid);
}

TEST(Synth, WriteIsByteIdenticalAndReadsBack) {
  TempDir a, b;
  SynthDataset d1 = generate_synthetic(small_config(5));
  SynthDataset d2 = generate_synthetic(small_config(5));
  write_synthetic(d1, a.path());
  write_synthetic(d2, b.path());
  for (const char* f : {"manifest.json", "planted.csv", "src0.pft", "src3.pft"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  const DatasetManifest m = read_manifest(a / "manifest.json");
  for (std::size_t s = 0; s < 4; ++s) {
    const FeatureTable t = read_feature_table(m.sources[s].path);
    EXPECT_EQ(t.tile_ids, d1.tables[s].tile_ids);
    EXPECT_TRUE(testing::bitwise_equal(t.values, d1.tables[s].values));
  }
  const auto planted = read_planted(a / "planted.csv");
  ASSERT_EQ(planted.size(), d1.planted.size());
  for (std::size_t i = 0; i < planted.size(); ++i) {
    EXPECT_EQ(planted[i].tile_id, d1.planted[i].tile_id);
    EXPECT_EQ(planted[i].informative_source, d1.planted[i].informative_source);
  }
}

// Probe direction = difference of class means on each tile's informative
// source, fit on the training slides only.
double probe_auc(const SynthDataset& d, bool tile_level) {
  const auto truth = d.truth();
  std::map<std::uint64_t, Index> row_of;
  for (Index r = 0; r < d.tables[0].values.rows(); ++r)
    row_of[d.tables[0].tile_ids[static_cast<std::size_t>(r)]] = r;
  const Index dim = d.tables[0].values.cols();
  std::map<std::string, std::vector<std::uint64_t>> tiles_of;
  for (const auto& t : d.manifest.tiles) tiles_of[t.slide_id].push_back(t.tile_id);
  auto informative_row = [&](std::uint64_t id) -> RowVectorD {
    const int s = truth.at(id);
    return d.tables[static_cast<std::size_t>(s)].values.row(row_of.at(id)).cast<double>();
  };
  RowVectorD sum[2] = {RowVectorD::Zero(dim), RowVectorD::Zero(dim)};
  double count[2] = {0, 0};
  for (const auto& [slide, split] : d.manifest.splits) {
    if (split != Split::Train) continue;
    const int y = d.manifest.slides.at(slide).class_index;
    for (auto id : tiles_of[slide]) sum[y] += informative_row(id), count[y] += 1;
  }
  const RowVectorD w = sum[1] / count[1] - sum[0] / count[0];
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& [slide, split] : d.manifest.splits) {
    if (split != Split::Test) continue;
    const int y = d.manifest.slides.at(slide).class_index;
    double bag = 0.0;
    for (auto id : tiles_of[slide]) {
      const double s = informative_row(id).dot(w);
      if (tile_level) {
        scores.push_back(s);
        labels.push_back(y);
      }
      bag += s;
    }
    if (!tile_level) {
      scores.push_back(bag / static_cast<double>(tiles_of[slide].size()));
      labels.push_back(y);
    }
  }
  return auc(scores, labels);
}

TEST(Synth, NoiselessProbeSeparatesPerfectly) {
  SynthConfig c = small_config(6);
  c.noise = 0.0;
  c.tile_purity = 1.0;
  EXPECT_EQ(probe_auc(generate_synthetic(c), true), 1.0);
}

TEST(Synth, NullSignalGivesChanceAuc) {
  SynthConfig c = small_config(7);
  c.signal = 0.0;
  c.bags_per_class = 1000;
  c.test_fraction = 0.5;
  const SynthDataset d = generate_synthetic(c);
  int test = 0;
  for (const auto& [slide, split] : d.manifest.splits) test += split == Split::Test;
  ASSERT_GE(test, 999);
  ASSERT_LE(test, 1001);
  EXPECT_NEAR(probe_auc(d, false), 0.5, 0.03);
}

TEST(Benchmark, DeterministicReports) {
  const SynthDataset d = generate_synthetic(small_config(8));
  const Dataset data = pooled_dataset(d.manifest, d.tables, 8);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.attention_width = 16;
  const std::vector<VariantSpec> methods{VariantSpec::parse("ensemble"), VariantSpec::parse("fine"),
                                         VariantSpec::parse("single:src0")};
  const std::string a = benchmark_csv(run_benchmark(data, methods, cfg));
  EXPECT_EQ(a, benchmark_csv(run_benchmark(data, methods, cfg)));
  EXPECT_EQ(a, benchmark_csv(run_benchmark(data, methods, cfg, 3)));
  EXPECT_EQ(a.substr(0, a.find('\n')), "method,n,acc,auc,pcc");
}

TEST(Benchmark, NoiselessFineIsPerfectOnTest) {
  SynthConfig c = small_config(9);
  c.noise = 0.0;
  c.tile_purity = 1.0;
  const SynthDataset d = generate_synthetic(c);
  const Dataset data = pooled_dataset(d.manifest, d.tables, 8);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 1e-3;
  const auto rows = run_benchmark(data, {VariantSpec::parse("fine")}, cfg);
  EXPECT_EQ(rows[0].result.report.acc, 1.0);
  EXPECT_EQ(rows[0].result.report.auc, 1.0);
}

TEST(Throughput, DefaultSizes) {
  const auto sizes = ThroughputConfig::default_bag_sizes();
  ASSERT_EQ(sizes.size(), 20u);
  EXPECT_EQ(sizes.front(), 2000);
  EXPECT_EQ(sizes.back(), 40000);
  for (std::size_t i = 1; i < sizes.size(); ++i) EXPECT_EQ(sizes[i] - sizes[i - 1], 2000);
}

TEST(Throughput, ChunkingDoesNotChangeLogits) {
  ModelSpec spec;
  spec.dim = 16;
  spec.outputs = 2;
  for (int s = 0; s < 3; ++s) spec.source_ids.push_back("s" + std::to_string(s));
  CounterRng rng(1);
  const MatrixF rows = testing::random_matrix(37, 48, rng).cast<float>();
  for (const char* v : {"fine", "self-attn", "coarse"}) {
    spec.variant = VariantSpec::parse(v);
    const auto model = to_float(init_model(spec, 2));
    const RowVector<float> whole = bag_logits(model, rows);
    for (Index chunk : {1, 5, 36, 37, 100})
      EXPECT_TRUE(testing::bitwise_equal(whole, bag_logits_chunked(model, rows, chunk))) << v << chunk;
  }
}

TEST(Throughput, FpsPositiveAndFallsWithBagSize) {
  ThroughputConfig cfg;
  cfg.dim = 64;
  cfg.bag_sizes = {250, 1000, 4000};
  const auto reports = throughput_bench(cfg);
  ASSERT_EQ(reports.size(), 2u);
  for (const auto& r : reports) {
    ASSERT_EQ(r.fps.size(), 3u);
    for (double f : r.fps) EXPECT_GT(f, 0.0);
    for (std::size_t i = 1; i < r.fps.size(); ++i) EXPECT_LT(r.fps[i], r.fps[i - 1]) << r.method;
    EXPECT_NEAR(r.mean_fps, (r.fps[0] + r.fps[1] + r.fps[2]) / 3.0, 1e-9 * r.mean_fps);
  }
  const std::string csv = throughput_csv(reports);
  EXPECT_NE(csv.find("fine,64,250,"), std::string::npos);
  EXPECT_NE(csv.find("self-attn,64,mean,"), std::string::npos);
}

}  // namespace
}  // namespace adafusion
