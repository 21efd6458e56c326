// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. One PASS/FAIL line per criterion; exit status is the
// number of failures. `--only N` runs a single criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>

#include "adafusion/checkpoint.hpp"
#include "adafusion/embedding_ops.hpp"
#include "adafusion/metrics.hpp"
#include "adafusion/synthbench.hpp"
#include "adafusion/throughput.hpp"
#include "calibration.hpp"

namespace adafusion::acceptance {
namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <typename T>
bool same_bits(const Matrix<T>& a, const Matrix<T>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<std::size_t>(a.size())) == 0;
}

MatrixD uniform_matrix(Index rows, Index cols, CounterRng& rng, double scale) {
  MatrixD m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * rng.uniform() - 1.0);
  return m;
}

// ---------------------------------------------------------------- 1

Verdict gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  for (Variant v : {Variant::Coarse, Variant::Fine, Variant::SelfAttn, Variant::Ensemble}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const GradCheckReport r = grad_check_instance(v, seed);
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        where = variant_name(v) + " seed " + std::to_string(seed) + " " + r.worst_block;
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-4 && secs < 60.0,
          "max rel error " + fmt("%.2e", worst) + " at " + where + ", " + fmt("%.1f s", secs)};
}

// ---------------------------------------------------------------- 2

Verdict mask_statistics() {
  const MaskMatrix m = sample_mask(1000, 1000, 0.2, derive_key(2026, {2}));
  const double kept = m.retained_fraction();
  const MaskMatrix none = sample_mask(1000, 1000, 0.0, 1);
  const MaskMatrix all = sample_mask(1000, 1000, 1.0, 1);
  const bool ones = (none.bits.array() == 1).all();
  const bool zeros = (all.bits.array() == 0).all();
  return {kept >= 0.798 && kept <= 0.802 && ones && zeros,
          "retained " + fmt("%.6f", kept) + (ones ? ", rho 0 all ones" : ", rho 0 NOT all ones") +
              (zeros ? ", rho 1 all zeros" : ", rho 1 NOT all zeros")};
}

// ---------------------------------------------------------------- 3

Verdict coarse_fine_consistency() {
  const Index n = 6, d = 16, h = 48;
  long mismatched = 0, checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CounterRng rng(derive_key(seed, {31}));
    TunerParams coarse = init_tuner(TunerShape{n, d, h, GateVariant::Coarse}, rng);
    coarse.b1 = uniform_matrix(1, h, rng, 0.5);
    coarse.b2 = uniform_matrix(1, n, rng, 0.5);
    coarse.norm_scale = uniform_matrix(1, n * d, rng, 1.0).array() + 1.5;
    TunerParams fine = coarse;
    fine.shape.variant = GateVariant::Fine;
    fine.w2.resize(h, n * d);
    fine.b2.resize(1, n * d);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < d; ++j) {
        fine.w2.col(i * d + j) = coarse.w2.col(i);
        fine.b2(0, i * d + j) = coarse.b2(0, i);
      }
    const MatrixD rows = uniform_matrix(32, n * d, rng, 3.0);
    const MatrixD gc = tuner_forward_rows(coarse, rows);
    const MatrixD gf = tuner_forward_rows(fine, rows);
    if (!same_bits(gc, gf)) ++mismatched;
    const MatrixD sc = contribution_scores_rows(gc, n, d);
    const MatrixD sf = contribution_scores_rows(gf, n, d);
    for (Index r = 0; r < rows.rows(); ++r)
      for (Index i = 0; i < n; ++i) {
        ++checked;
        if (sc(r, i) != gc(r, i * d) || sf(r, i) != gc(r, i * d)) ++mismatched;
      }
  }
  return {mismatched == 0, std::to_string(checked) + " score checks over 20 seeds, " +
                               std::to_string(mismatched) + " mismatches"};
}

// ---------------------------------------------------------------- 4

Verdict permutation_invariance() {
  double worst = 0.0;
  const std::vector<const char*> variants{"fine", "coarse", "self-attn", "ensemble", "moe-top3"};
  for (const char* v : variants) {
    ModelSpec spec;
    spec.variant = VariantSpec::parse(v);
    spec.dim = 16;
    spec.outputs = 2;
    for (int s = 0; s < 4; ++s) spec.source_ids.push_back("s" + std::to_string(s));
    for (std::uint64_t bag = 0; bag < 50; ++bag) {
      const FusionModel model = init_model(spec, derive_key(bag, {41}));
      CounterRng rng(derive_key(bag, {42}));
      const Index tiles = 2 + static_cast<Index>(rng() % 199);
      const MatrixD rows = uniform_matrix(tiles, spec.flat_width(), rng, 2.0);
      std::vector<Index> perm(static_cast<std::size_t>(tiles));
      std::iota(perm.begin(), perm.end(), Index{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      MatrixD shuffled(tiles, rows.cols());
      for (Index k = 0; k < tiles; ++k) shuffled.row(k) = rows.row(perm[static_cast<std::size_t>(k)]);
      worst = std::max(worst, (bag_logits(model, rows) - bag_logits(model, shuffled)).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= 1e-6, "max |delta logit| " + fmt("%.2e", worst) + " over 50 bags x " +
                             std::to_string(variants.size()) + " variants"};
}

// ---------------------------------------------------------------- 5

double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double credit = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        credit += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return credit / pairs;
}

Verdict metric_oracles() {
  int auc_bad = 0;
  double pcc_err = 0.0, acc_err = 0.0;
  if (auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) != 0.75) ++auc_bad;
  CounterRng rng(derive_key(2026, {5}));
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng() % 300;
    std::vector<double> s(n), x(n), z(n);
    std::vector<int> y(n), p(n), q(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = t % 2 ? static_cast<double>(rng() % 8) : rng.uniform();
      y[i] = static_cast<int>(rng() % 2);
      x[i] = 10.0 * rng.uniform();
      z[i] = 0.5 * x[i] + rng.uniform();
      p[i] = static_cast<int>(rng() % 4);
      q[i] = static_cast<int>(rng() % 4);
    }
    y[0] = 0;
    y[1] = 1;
    if (auc(s, y) != pair_count_auc(s, y)) ++auc_bad;

    long double mx = 0, mz = 0;
    for (std::size_t i = 0; i < n; ++i) mx += x[i], mz += z[i];
    mx /= n;
    mz /= n;
    long double sxz = 0, sxx = 0, szz = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sxz += (x[i] - mx) * (z[i] - mz);
      sxx += (x[i] - mx) * (x[i] - mx);
      szz += (z[i] - mz) * (z[i] - mz);
    }
    pcc_err = std::max(pcc_err, std::abs(pcc(x, z) - static_cast<double>(sxz / std::sqrt(sxx * szz))));
    long hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += p[i] == q[i];
    acc_err = std::max(acc_err, std::abs(accuracy(p, q) - static_cast<double>(hits) / static_cast<double>(n)));
  }
  return {auc_bad == 0 && pcc_err <= 1e-12 && acc_err <= 1e-12,
          std::to_string(auc_bad) + " AUC mismatches in 101 cases, PCC err " + fmt("%.1e", pcc_err) +
              ", ACC err " + fmt("%.1e", acc_err)};
}

// ---------------------------------------------------------------- 6

Verdict overfit_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.noise = 0.0;
  sc.tile_purity = 1.0;
  sc.bags_per_class = 16;
  sc.test_fraction = 0.0;
  sc.seed = 6;
  const SynthDataset syn = generate_synthetic(sc);
  const Dataset data = pooled_dataset(syn.manifest, syn.tables, kBenchDim);
  TrainConfig cfg;
  cfg.variant = VariantSpec::parse("fine");
  cfg.epochs = 200;
  cfg.seed = 6;
  const TrainResult r = train(data, cfg);
  const EvalResult ev = evaluate(r.model, data, Split::Train);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {data.bags.size() == 32 && ev.report.acc == 1.0 && ev.loss < 1e-2 && secs < 120.0,
          std::to_string(data.bags.size()) + " bags, train ACC " + fmt("%.4f", ev.report.acc) +
              ", loss " + fmt("%.2e", ev.loss) + ", " + fmt("%.1f s", secs)};
}

// ---------------------------------------------------------------- 7, 8

struct SeedRun {
  double fine_auc = 0.0;
  std::vector<double> single_auc;
  long tiles = 0;
  long recovered = 0;
};

SeedRun benchmark_seed(std::uint64_t seed, bool with_singles) {
  SynthConfig sc = benchmark_synth_config(seed);
  const SynthDataset syn = generate_synthetic(sc);
  const Dataset data = pooled_dataset(syn.manifest, syn.tables, kBenchDim);
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.epochs = kBenchEpochs;
  SeedRun out;

  cfg.variant = VariantSpec::parse("fine");
  const TrainResult fine = train(data, cfg);
  out.fine_auc = evaluate(fine.model, data, Split::Test).report.auc;
  const auto truth = syn.truth();
  for (const SampleBag* bag : data.in_split(Split::Test)) {
    const MatrixD scores = contribution_scores_rows(tuner_forward_rows(*fine.model.tuner, bag->compound),
                                                    static_cast<Index>(data.source_ids.size()), data.dim);
    for (Index k = 0; k < scores.rows(); ++k) {
      ++out.tiles;
      out.recovered += argmax_lowest(scores.row(k)) ==
                       truth.at(bag->tiles[static_cast<std::size_t>(k)].tile_id);
    }
  }
  if (with_singles) {
    for (const std::string& id : data.source_ids) {
      cfg.variant = VariantSpec::parse("single:" + id);
      out.single_auc.push_back(evaluate(train(data, cfg).model, data, Split::Test).report.auc);
    }
  }
  std::printf("  seed %llu: fine AUC %.4f", static_cast<unsigned long long>(seed), out.fine_auc);
  for (std::size_t i = 0; i < out.single_auc.size(); ++i) std::printf(", src%zu %.4f", i, out.single_auc[i]);
  std::printf(", recovery %ld/%ld\n", out.recovered, out.tiles);
  std::fflush(stdout);
  return out;
}

Verdict fusion_benefit() {
  double fine = 0.0;
  std::vector<double> singles;
  for (std::uint64_t seed = 0; seed < kBenchSeeds; ++seed) {
    const SeedRun r = benchmark_seed(seed, true);
    fine += r.fine_auc / kBenchSeeds;
    singles.resize(r.single_auc.size(), 0.0);
    for (std::size_t i = 0; i < singles.size(); ++i) singles[i] += r.single_auc[i] / kBenchSeeds;
  }
  const double best = *std::max_element(singles.begin(), singles.end());
  const double margin = fine - best;
  return {kDelta > 0.0 && margin >= kDelta,
          "mean fine AUC " + fmt("%.4f", fine) + ", best single " + fmt("%.4f", best) + ", margin " +
              fmt("%.4f", margin) + " (delta " + fmt("%.3f", kDelta) + ")"};
}

// log P(X >= k) for X ~ Binomial(n, p), summed in log space.
double binomial_upper_tail(long k, long n, double p) {
  double acc = -INFINITY;
  for (long i = k; i <= n; ++i) {
    const double term = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
                        static_cast<double>(i) * std::log(p) + static_cast<double>(n - i) * std::log1p(-p);
    const double hi = std::max(acc, term);
    acc = hi + std::log(std::exp(acc - hi) + std::exp(term - hi));
  }
  return std::exp(acc);
}

Verdict interpretability_recovery() {
  long tiles = 0, hit = 0;
  for (std::uint64_t seed = 0; seed < kBenchSeeds; ++seed) {
    const SeedRun r = benchmark_seed(seed, false);
    tiles += r.tiles;
    hit += r.recovered;
  }
  const double rate = static_cast<double>(hit) / static_cast<double>(tiles);
  const double chance = 1.0 / benchmark_synth_config(0).sources;
  const long needed = static_cast<long>(std::ceil(kTau * static_cast<double>(tiles)));
  const double p_value = binomial_upper_tail(needed, tiles, chance);
  const bool in_band = kTau >= 0.7 && kTau <= 0.95;
  return {in_band && rate >= kTau && p_value < 0.01,
          "recovery " + fmt("%.4f", rate) + " on " + std::to_string(tiles) + " test tiles (tau " +
              fmt("%.2f", kTau) + ", chance " + fmt("%.2f", chance) + ", p(X >= tau n) " +
              fmt("%.1e", p_value) + ")"};
}

// ---------------------------------------------------------------- 9

Verdict throughput_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  ThroughputConfig cfg;  // N=6, d=512, 2,000..40,000 step 2,000, 5 repeats
  const auto reports = throughput_bench(cfg, [](const std::string& m, Index tiles, double fps) {
    std::printf("  %s %lld tiles: %.4f FPS\n", m.c_str(), static_cast<long long>(tiles), fps);
    std::fflush(stdout);
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double fine = reports[0].mean_fps, attn = reports[1].mean_fps;
  return {fine > attn && secs < 600.0,
          "fine mean FPS " + fmt("%.4f", fine) + ", self-attn " + fmt("%.4f", attn) + " (" +
              fmt("%.2fx", fine / attn) + "), " + fmt("%.0f s", secs) + " (limit 600 s)"};
}

// ---------------------------------------------------------------- 10

Verdict determinism_persistence() {
  std::vector<std::string> broken;
  auto check = [&](bool ok, const char* what) {
    if (!ok) broken.push_back(what);
  };
  SynthConfig sc;
  sc.bags_per_class = 20;
  sc.seed = 10;
  const SynthDataset a = generate_synthetic(sc), b = generate_synthetic(sc);
  bool synth_same = a.tables.size() == b.tables.size();
  for (std::size_t s = 0; synth_same && s < a.tables.size(); ++s)
    synth_same = a.tables[s].tile_ids == b.tables[s].tile_ids && same_bits(a.tables[s].values, b.tables[s].values);
  check(synth_same, "synth");

  const Dataset data = pooled_dataset(a.manifest, a.tables, 16);
  TrainConfig cfg;
  cfg.variant = VariantSpec::parse("fine");
  cfg.epochs = 3;
  cfg.seed = 10;
  TrainResult r1 = train(data, cfg), r2 = train(data, cfg);
  bool train_same = r1.curve.size() == r2.curve.size();
  for (std::size_t i = 0; train_same && i < r1.curve.size(); ++i)
    train_same = std::memcmp(&r1.curve[i].loss, &r2.curve[i].loss, sizeof(double)) == 0;
  auto t1 = tensors(r1.model), t2 = tensors(r2.model);
  for (std::size_t i = 0; train_same && i < t1.size(); ++i) train_same = same_bits(*t1[i].value, *t2[i].value);
  check(train_same, "train");

  const EvalResult e1 = evaluate(r1.model, data, Split::Test), e2 = evaluate(r1.model, data, Split::Test);
  check(same_bits(e1.scores, e2.scores) && e1.preds == e2.preds, "eval");

  const auto dir = std::filesystem::temp_directory_path() / ("adafusion_acc_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  bool tables_exact = true;
  for (const FeatureTable& t : a.tables) {
    write_feature_table(t, dir / "t.pft");
    const FeatureTable back = read_feature_table(dir / "t.pft");
    tables_exact = tables_exact && back.tile_ids == t.tile_ids && same_bits(back.values, t.values);
  }
  check(tables_exact, "feature tables");

  const ModelCheckpoint ck{r1.model, r1.adam, cfg, cfg.epochs};
  save_checkpoint(dir / "c.adfc", ck);
  const ModelCheckpoint back = load_checkpoint(dir / "c.adfc");
  bool ckpt_exact = encode_checkpoint(back) == encode_checkpoint(ck);
  FusionModel mb = back.model;
  auto tb = tensors(mb);
  for (std::size_t i = 0; ckpt_exact && i < t1.size(); ++i) ckpt_exact = same_bits(*t1[i].value, *tb[i].value);
  check(ckpt_exact, "checkpoint");
  std::filesystem::remove_all(dir);

  std::string detail = "synth, train, eval, feature table and checkpoint checks";
  if (!broken.empty()) {
    detail = "not reproducible:";
    for (const auto& b : broken) detail += " " + b;
  } else {
    detail += " bit-exact";
  }
  return {broken.empty(), detail};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Verdict()> run;
};

}  // namespace
}  // namespace adafusion::acceptance

int main(int argc, char** argv) {
  using namespace adafusion::acceptance;
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria (1-10)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "gradient fidelity", gradient_fidelity},
      {2, "mask statistics", mask_statistics},
      {3, "coarse/fine consistency", coarse_fine_consistency},
      {4, "MIL permutation invariance", permutation_invariance},
      {5, "metric oracles", metric_oracles},
      {6, "overfit sanity", overfit_sanity},
      {7, "fusion benefit", fusion_benefit},
      {8, "interpretability recovery", interpretability_recovery},
      {9, "throughput ordering", throughput_ordering},
      {10, "determinism and persistence", determinism_persistence},
  };
  int failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s %d %s: %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
