// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Per-bag inference cost of the fusion variants at N=6, d=512.

#include <random>

#include <benchmark/benchmark.h>

#include "adafusion/rng.hpp"
#include "adafusion/throughput.hpp"

namespace {

using namespace adafusion;

BasicFusionModel<float> make_model(Variant variant) {
  ModelSpec spec;
  spec.variant = {variant, ""};
  spec.dim = 512;
  spec.outputs = 2;
  for (int s = 0; s < 6; ++s) spec.source_ids.push_back("src" + std::to_string(s));
  return to_float(init_model(spec, 7));
}

Matrix<float> random_bag(Index tiles, Index width) {
  CounterRng rng(derive_key(3, {static_cast<std::uint64_t>(tiles)}));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Matrix<float> m(tiles, width);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

void run(benchmark::State& state, Variant variant) {
  const auto model = make_model(variant);
  const auto bag = random_bag(state.range(0), model.spec.flat_width());
  for (auto _ : state) {
    auto logits = bag_logits_chunked(model, bag, 2048);
    benchmark::DoNotOptimize(logits.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.counters["FPS"] = benchmark::Counter(static_cast<double>(state.iterations()),
                                             benchmark::Counter::kIsRate);
}

void BM_Coarse(benchmark::State& s) { run(s, Variant::Coarse); }
void BM_Fine(benchmark::State& s) { run(s, Variant::Fine); }
void BM_SelfAttn(benchmark::State& s) { run(s, Variant::SelfAttn); }
void BM_MoeTop3(benchmark::State& s) { run(s, Variant::MoeTop3); }
void BM_Ensemble(benchmark::State& s) { run(s, Variant::Ensemble); }

BENCHMARK(BM_Coarse)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Fine)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SelfAttn)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MoeTop3)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Ensemble)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
