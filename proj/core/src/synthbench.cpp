// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/synthbench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <mutex>
#include <thread>

#include "adafusion/embedding_ops.hpp"
#include "adafusion/error.hpp"
#include "adafusion/rng.hpp"

namespace adafusion {
namespace {

constexpr std::uint64_t kBagStream = 1;
constexpr std::uint64_t kSplitStream = 2;

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct GeneratedBag {
  std::vector<int> phenotype;
  std::vector<int> tile_class;
  std::vector<std::vector<double>> latent;  // regression
  int label = 0;
  std::vector<MatrixF> rows;                // per source, tiles x native
};

std::string slide_name(int bag) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "slide%04d", bag);
  return buf;
}

}  // namespace

Index SynthConfig::native_dim(int source) const {
  if (!native_dims.empty()) return native_dims.at(static_cast<std::size_t>(source));
  return 128;
}

int SynthConfig::informative_source(int phenotype) const {
  if (!specialization.empty()) return specialization.at(static_cast<std::size_t>(phenotype));
  return phenotype % sources;
}

void SynthConfig::validate() const {
  require(sources >= 1, ErrorKind::ConfigInvalid, "need at least one source");
  require(phenotypes >= sources, ErrorKind::ConfigInvalid,
          "phenotype count must be >= source count");
  require(native_dims.empty() || native_dims.size() == static_cast<std::size_t>(sources),
          ErrorKind::ConfigInvalid, "native_dims must list one dim per source");
  require(specialization.empty() || specialization.size() == static_cast<std::size_t>(phenotypes),
          ErrorKind::ConfigInvalid, "specialization must map every phenotype");
  std::vector<bool> covered(static_cast<std::size_t>(sources), false);
  for (int p = 0; p < phenotypes; ++p) {
    const int s = informative_source(p);
    require(s >= 0 && s < sources, ErrorKind::ConfigInvalid,
            "phenotype " + std::to_string(p) + " maps to unknown source " + std::to_string(s));
    covered[static_cast<std::size_t>(s)] = true;
  }
  for (int s = 0; s < sources; ++s)
    require(covered[static_cast<std::size_t>(s)], ErrorKind::ConfigInvalid,
            "source " + std::to_string(s) + " is informative for no phenotype");
  const int chunks = task == TaskKind::Classification ? classes : targets;
  require(chunks >= (task == TaskKind::Classification ? 2 : 1), ErrorKind::ConfigInvalid,
          "need at least two classes (or one target)");
  for (int s = 0; s < sources; ++s)
    require(native_dim(s) / 4 >= chunks, ErrorKind::ConfigInvalid,
            "native dim of source " + std::to_string(s) + " too small for the signal subspace");
  require(min_tiles >= 1 && max_tiles >= min_tiles, ErrorKind::ConfigInvalid, "bad tile range");
  require(bags_per_class >= 1, ErrorKind::ConfigInvalid, "bags_per_class must be >= 1");
  require(noise >= 0.0 && signal >= 0.0, ErrorKind::ConfigInvalid, "noise and signal must be >= 0");
  require(tile_purity >= 0.0 && tile_purity <= 1.0, ErrorKind::ConfigInvalid,
          "tile_purity must lie in [0, 1]");
  require(test_fraction >= 0.0 && test_fraction < 1.0, ErrorKind::ConfigInvalid,
          "test_fraction must lie in [0, 1)");
}

std::map<std::uint64_t, int> SynthDataset::truth() const {
  std::map<std::uint64_t, int> out;
  for (const auto& p : planted) out[p.tile_id] = p.informative_source;
  return out;
}

std::string synth_source_id(int source) { return "src" + std::to_string(source); }

SynthDataset generate_synthetic(const SynthConfig& cfg, int threads) {
  cfg.validate();
  const bool classify = cfg.task == TaskKind::Classification;
  const int bag_count = cfg.bags_per_class * cfg.classes;
  const int chunks = classify ? cfg.classes : cfg.targets;

  std::vector<GeneratedBag> bags(static_cast<std::size_t>(bag_count));
  parallel_for(bags.size(), threads, [&](std::size_t b) {
    CounterRng rng(derive_key(cfg.seed, {kBagStream, b}));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> tiles_dist(cfg.min_tiles, cfg.max_tiles);
    std::uniform_int_distribution<int> pheno_dist(0, cfg.phenotypes - 1);
    std::bernoulli_distribution pure(cfg.tile_purity);
    GeneratedBag& g = bags[b];
    const int drawn = static_cast<int>(b) % cfg.classes;  // balanced
    const int m = tiles_dist(rng);
    for (int k = 0; k < m; ++k) {
      g.phenotype.push_back(pheno_dist(rng));
      int c = drawn;
      if (classify && !pure(rng)) {
        std::uniform_int_distribution<int> other(0, cfg.classes - 2);
        c = other(rng);
        if (c >= drawn) ++c;
      }
      g.tile_class.push_back(c);
      if (!classify) {
        std::vector<double> z(static_cast<std::size_t>(cfg.targets));
        for (auto& v : z) v = normal(rng);
        g.latent.push_back(std::move(z));
      }
    }
    if (classify) {
      std::vector<int> votes(static_cast<std::size_t>(cfg.classes), 0);
      for (int c : g.tile_class) ++votes[static_cast<std::size_t>(c)];
      g.label = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
    for (int s = 0; s < cfg.sources; ++s) {
      const Index dim = cfg.native_dim(s);
      const Index quarter = dim / 4;
      const Index width = quarter / chunks;
      MatrixF rows(m, dim);
      for (int k = 0; k < m; ++k) {
        for (Index j = 0; j < dim; ++j) rows(k, j) = static_cast<float>(cfg.noise * normal(rng));
        if (cfg.informative_source(g.phenotype[static_cast<std::size_t>(k)]) != s) continue;
        for (Index j = quarter; j < 2 * quarter; ++j)
          rows(k, j) += static_cast<float>(cfg.marker);
        for (int c = 0; c < chunks; ++c) {
          // Classification: +signal on the class's chunk, -signal on the rest.
          const double amp = classify ? (g.tile_class[static_cast<std::size_t>(k)] == c ? cfg.signal : -cfg.signal)
                                      : cfg.signal * g.latent[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
          for (Index j = c * width; j < (c + 1) * width; ++j) rows(k, j) += static_cast<float>(amp);
        }
      }
      g.rows.push_back(std::move(rows));
    }
  });

  SynthDataset out;
  DatasetManifest& man = out.manifest;
  man.task_kind = cfg.task;
  if (classify) man.num_classes = cfg.classes;
  else man.num_targets = cfg.targets;
  for (int s = 0; s < cfg.sources; ++s) {
    SourceDescriptor d;
    d.source_id = synth_source_id(s);
    d.native_dim = cfg.native_dim(s);
    d.display_name = "synthetic source " + std::to_string(s);
    man.sources.push_back({d, synth_source_id(s) + ".pft"});
    FeatureTable t;
    t.source = d;
    out.tables.push_back(std::move(t));
  }

  Index total = 0;
  for (const auto& g : bags) total += static_cast<Index>(g.phenotype.size());
  for (int s = 0; s < cfg.sources; ++s)
    out.tables[static_cast<std::size_t>(s)].values.resize(total, cfg.native_dim(s));

  std::uint64_t next_id = 1;
  Index row = 0;
  for (int b = 0; b < bag_count; ++b) {
    const GeneratedBag& g = bags[static_cast<std::size_t>(b)];
    const std::string slide = slide_name(b);
    const int m = static_cast<int>(g.phenotype.size());
    const int width = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m))));
    SlideLabel label;
    if (classify) label.class_index = g.label;
    for (int k = 0; k < m; ++k, ++row, ++next_id) {
      TileRef tile{next_id, slide, k % width, k / width};
      man.tiles.push_back(tile);
      for (int s = 0; s < cfg.sources; ++s) {
        auto& t = out.tables[static_cast<std::size_t>(s)];
        t.tile_ids.push_back(next_id);
        t.values.row(row) = g.rows[static_cast<std::size_t>(s)].row(k);
      }
      const int pheno = g.phenotype[static_cast<std::size_t>(k)];
      out.planted.push_back({next_id, slide, pheno, cfg.informative_source(pheno)});
      if (!classify) {
        std::vector<float> targets;
        for (double z : g.latent[static_cast<std::size_t>(k)]) targets.push_back(static_cast<float>(z));
        label.tile_targets[next_id] = std::move(targets);
      }
    }
    man.slides[slide] = std::move(label);
  }

  // Seeded split, stratified by class for classification.
  CounterRng split_rng(derive_key(cfg.seed, {kSplitStream}));
  const int groups = classify ? cfg.classes : 1;
  for (int c = 0; c < groups; ++c) {
    std::vector<int> members;
    for (int b = 0; b < bag_count; ++b)
      if (!classify || bags[static_cast<std::size_t>(b)].label == c) members.push_back(b);
    std::shuffle(members.begin(), members.end(), split_rng);
    const auto test_n = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < members.size(); ++i)
      man.splits[slide_name(members[i])] = i < test_n ? Split::Test : Split::Train;
  }
  validate_manifest(man);
  return out;
}

void write_synthetic(SynthDataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t s = 0; s < data.tables.size(); ++s) {
    auto& src = data.manifest.sources[s];
    src.path = dir / (src.descriptor.source_id + ".pft");
    write_feature_table(data.tables[s], src.path);
  }
  write_manifest(data.manifest, dir / "manifest.json");
  std::ofstream out(dir / "planted.csv", std::ios::trunc);
  if (!out) fail(ErrorKind::IoFailure, "cannot write planted.csv in " + dir.string());
  out << "tile_id,slide_id,phenotype,informative_source\n";
  for (const auto& p : data.planted)
    out << p.tile_id << ',' << p.slide_id << ',' << p.phenotype << ','
        << synth_source_id(p.informative_source) << '\n';
  if (!out) fail(ErrorKind::IoFailure, "write failed for planted.csv");
}

std::vector<PlantedTile> read_planted(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
  std::vector<PlantedTile> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, slide, pheno, src;
    std::getline(ss, id, ',');
    std::getline(ss, slide, ',');
    std::getline(ss, pheno, ',');
    std::getline(ss, src, ',');
    require(src.rfind("src", 0) == 0, ErrorKind::InvalidManifest, "bad planted row: " + line);
    out.push_back({std::stoull(id), slide, std::stoi(pheno), std::stoi(src.substr(3))});
  }
  return out;
}

Dataset pooled_dataset(const DatasetManifest& manifest, const std::vector<FeatureTable>& tables,
                       Index dim, int threads) {
  std::vector<FeatureTable> pooled(tables.size());
  parallel_for(tables.size(), threads, [&](std::size_t s) { pooled[s] = pool_table(tables[s], dim); });
  return build_dataset(manifest, pooled);
}

std::vector<BenchmarkRow> run_benchmark(const Dataset& data,
                                        const std::vector<VariantSpec>& methods,
                                        const TrainConfig& cfg, int threads) {
  require(!data.in_split(Split::Train).empty() && !data.in_split(Split::Test).empty(),
          ErrorKind::ConfigInvalid, "benchmark needs train and test splits");
  std::vector<BenchmarkRow> rows(methods.size());
  parallel_for(methods.size(), threads, [&](std::size_t i) {
    TrainConfig c = cfg;
    c.variant = methods[i];
    const TrainResult trained = train(data, c);
    rows[i] = {methods[i].to_string(), evaluate(trained.model, data, Split::Test)};
  });
  return rows;
}

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows) {
  std::string out = "method,n,acc,auc,pcc\n";
  char buf[256];
  for (const auto& r : rows) {
    const auto& m = r.result.report;
    std::snprintf(buf, sizeof buf, "%s,%lld,%.17g,%.17g,%.17g\n", r.method.c_str(),
                  static_cast<long long>(m.n), m.has_classification ? m.acc : NAN,
                  m.has_classification ? m.auc : NAN, m.has_regression ? m.pcc : NAN);
    out += buf;
  }
  return out;
}

std::string benchmark_table(const std::vector<BenchmarkRow>& rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.method.size());
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %6s %8s %8s %8s\n", static_cast<int>(width), "method", "n",
                "acc", "auc", "pcc");
  std::string out = buf;
  for (const auto& r : rows) {
    const auto& m = r.result.report;
    std::snprintf(buf, sizeof buf, "%-*s %6lld %8.4f %8.4f %8.4f\n", static_cast<int>(width),
                  r.method.c_str(), static_cast<long long>(m.n),
                  m.has_classification ? m.acc : NAN, m.has_classification ? m.auc : NAN,
                  m.has_regression ? m.pcc : NAN);
    out += buf;
  }
  return out;
}

}  // namespace adafusion
