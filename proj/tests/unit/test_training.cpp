// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <numeric>

#include "adafusion/training.hpp"
#include "toy_data.hpp"

namespace adafusion {
namespace {

using testing::bitwise_equal;
using testing::random_matrix;
using testing::toy_dataset;

TEST(CrossEntropy, Examples) {
  const LossAndGrad a = cross_entropy((RowVectorD(2) << 0, 0).finished(), 0);
  EXPECT_NEAR(a.loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(a.grad[0], -0.5, 1e-15);
  EXPECT_NEAR(a.grad[1], 0.5, 1e-15);

  const LossAndGrad b = cross_entropy((RowVectorD(2) << 1000, -1000).finished(), 0);
  EXPECT_TRUE(std::isfinite(b.loss));
  EXPECT_NEAR(b.loss, 0.0, 1e-300);
  EXPECT_TRUE(std::isfinite(cross_entropy((RowVectorD(2) << 1000, -1000).finished(), 1).loss));

  const LossAndGrad c = cross_entropy((RowVectorD(3) << 1, 2, 3).finished(), 2);
  const double direct = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  EXPECT_NEAR(c.loss, direct, 1e-15);
  EXPECT_NEAR(c.loss, 0.407606, 1e-6);
  EXPECT_NEAR(c.grad.sum(), 0.0, 1e-15);

  EXPECT_ERROR_KIND(cross_entropy(RowVectorD::Zero(2), 2), ErrorKind::LabelOutOfRange);
  EXPECT_ERROR_KIND(cross_entropy(RowVectorD::Zero(2), -1), ErrorKind::LabelOutOfRange);
}

TEST(CrossEntropy, GradientMatchesDifferences) {
  CounterRng rng(1);
  for (int t = 0; t < 20; ++t) {
    MatrixD z = random_matrix(1, 4, rng, 3.0);
    const int label = static_cast<int>(rng() % 4);
    const RowVectorD g = cross_entropy(RowVectorD(z.row(0)), label).grad;
    const MatrixD num = testing::numeric_gradient(z, [&] { return cross_entropy(RowVectorD(z.row(0)), label).loss; });
    EXPECT_LT(testing::max_rel_error(MatrixD(g), num), 1e-8);
  }
}

TEST(Mse, Examples) {
  const RowVectorD p = (RowVectorD(2) << 1, 3).finished();
  EXPECT_EQ(mse(p, p).loss, 0.0);
  const LossAndGrad l = mse(p, RowVectorD::Zero(2));
  EXPECT_EQ(l.loss, 5.0);
  EXPECT_EQ(l.grad, p);
  EXPECT_ERROR_KIND(mse(p, RowVectorD::Zero(3)), ErrorKind::ShapeMismatch);
}

TEST(Adam, ZeroGradientZeroDecayLeavesParams) {
  MatrixD w = MatrixD::Constant(2, 2, 0.7), g = MatrixD::Zero(2, 2);
  std::vector<TensorRef> p{{"w", &w}}, gr{{"w", &g}};
  AdamState s = init_adam(p);
  for (int i = 0; i < 5; ++i) adam_step(p, gr, s, 1e-2, 0.0);
  EXPECT_TRUE((w.array() == 0.7).all());
  EXPECT_EQ(s.step, 5);
}

TEST(Adam, FirstStepIsLearningRate) {
  const double lr = 3e-3;
  MatrixD w = MatrixD::Constant(1, 1, 2.0), g = MatrixD::Constant(1, 1, 1.0);
  std::vector<TensorRef> p{{"w", &w}}, gr{{"w", &g}};
  AdamState s = init_adam(p);
  adam_step(p, gr, s, lr, 0.0);
  EXPECT_NEAR(w(0, 0) - 2.0, -lr / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, MatchesDirectSimulation) {
  const double lr = 1e-2, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  MatrixD w = MatrixD::Constant(1, 1, 1.5), g(1, 1);
  std::vector<TensorRef> p{{"w", &w}}, gr{{"w", &g}};
  AdamState s = init_adam(p);
  double x = 1.5, m = 0.0, v = 0.0, prev_delta = std::numeric_limits<double>::infinity();
  for (int t = 1; t <= 10; ++t) {
    g(0, 0) = 0.5;  // identical gradient every step
    const double before = w(0, 0);
    adam_step(p, gr, s, lr, wd);
    m = b1 * m + (1 - b1) * 0.5;
    v = b2 * v + (1 - b2) * 0.25;
    x -= lr * wd * x;
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    EXPECT_NEAR(w(0, 0), x, 1e-14);
    const double delta = std::abs(w(0, 0) - before);
    EXPECT_LE(delta, prev_delta + 1e-12);
    prev_delta = delta;
  }
}

TEST(TrainConfig, DefaultsAndValidation) {
  TrainConfig c;
  EXPECT_EQ(c.learning_rate, 2e-4);
  EXPECT_EQ(c.weight_decay, 1e-5);
  EXPECT_EQ(c.rho, 0.2);
  EXPECT_EQ(c.resolved_epochs(TaskKind::Classification), 50);
  EXPECT_EQ(c.resolved_epochs(TaskKind::Regression), 20);
  EXPECT_EQ(c.resolved_batch(TaskKind::Classification), 1);
  EXPECT_EQ(c.resolved_batch(TaskKind::Regression), 256);
  c.learning_rate = 0.0;
  EXPECT_ERROR_KIND(c.validate(), ErrorKind::ConfigInvalid);
  c = TrainConfig{};
  c.rho = 1.2;
  EXPECT_ERROR_KIND(c.validate(), ErrorKind::RhoOutOfRange);
}

TEST(TrainConfig, JsonRoundTripAndFingerprint) {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.seed = 0xfeedfacecafebeefULL;
  c.variant = VariantSpec::parse("single:uni");
  c.epochs = 7;
  const TrainConfig r = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(r.to_json(), c.to_json());
  EXPECT_EQ(r.fingerprint(), c.fingerprint());
  EXPECT_EQ(r.seed, c.seed);
  EXPECT_EQ(r.variant.to_string(), "single:uni");
  c.epochs = 8;
  EXPECT_NE(r.fingerprint(), c.fingerprint());
  EXPECT_ERROR_KIND(TrainConfig::from_json("{]"), ErrorKind::ConfigInvalid);
}

TEST(Variants, ParseAndNames) {
  for (const char* name : {"coarse", "fine", "ensemble", "ensemble-mask", "self-attn", "moe-top3"})
    EXPECT_EQ(VariantSpec::parse(name).to_string(), name);
  EXPECT_EQ(VariantSpec::parse("single:abc").single_source, "abc");
  EXPECT_ERROR_KIND(VariantSpec::parse("transformer"), ErrorKind::InvalidArgument);
  EXPECT_TRUE(has_tuner(Variant::Fine));
  EXPECT_FALSE(has_tuner(Variant::Ensemble));
  EXPECT_TRUE(uses_mask(Variant::EnsembleMask));
  EXPECT_FALSE(uses_mask(Variant::Ensemble));
}

ModelSpec spec_for(const char* variant, TaskKind task = TaskKind::Classification, Index n = 3,
                   Index d = 8) {
  ModelSpec s;
  s.variant = VariantSpec::parse(variant);
  s.task = task;
  for (Index i = 0; i < n; ++i) s.source_ids.push_back("s" + std::to_string(i));
  s.dim = d;
  s.attention_width = 16;
  s.outputs = 2;
  return s;
}

TEST(FusionModel, FusedWidths) {
  EXPECT_EQ(init_model(spec_for("fine"), 1).spec.fused_width(), 24);
  EXPECT_EQ(init_model(spec_for("coarse"), 1).tuner->shape.hidden, 12);
  EXPECT_EQ(init_model(spec_for("moe-top3"), 1).spec.fused_width(), 24);
  EXPECT_EQ(init_model(spec_for("moe-top3", TaskKind::Classification, 5), 1).spec.fused_width(), 24);
  EXPECT_EQ(init_model(spec_for("single:s1"), 1).spec.fused_width(), 8);
  EXPECT_EQ(init_model(spec_for("self-attn"), 1).spec.fused_width(), 24);
  EXPECT_ERROR_KIND(init_model(spec_for("moe-top3", TaskKind::Classification, 2), 1),
                    ErrorKind::TooFewSources);
  EXPECT_ERROR_KIND(init_model(spec_for("single:zz"), 1), ErrorKind::MissingSource);
}

TEST(FusionModel, EnsembleHasNoTunerAndSinglePicksItsBlock) {
  const FusionModel e = init_model(spec_for("ensemble"), 1);
  EXPECT_FALSE(e.tuner.has_value());
  EXPECT_FALSE(e.self_attn.has_value());
  EXPECT_FALSE(e.moe.has_value());
  CounterRng rng(2);
  const MatrixD rows = random_matrix(4, 24, rng);
  EXPECT_TRUE(bitwise_equal(fuse_rows(e, rows, {}), rows));
  const FusionModel s = init_model(spec_for("single:s2"), 1);
  EXPECT_TRUE(bitwise_equal(fuse_rows(s, rows, {}), MatrixD(rows.rightCols(8))));
}

TEST(FusionModel, FineGatesRowsAtInference) {
  const FusionModel m = init_model(spec_for("fine"), 3);
  CounterRng rng(3);
  const MatrixD rows = random_matrix(4, 24, rng);
  const MatrixD gate = tuner_forward_rows(*m.tuner, rows);
  EXPECT_TRUE(bitwise_equal(fuse_rows(m, rows, {}), MatrixD(rows.cwiseProduct(gate))));
}

TEST(FusionModel, TrainModeMasksBothTunerInputAndGatedTensor) {
  const FusionModel m = init_model(spec_for("fine"), 3);
  CounterRng rng(3);
  const MatrixD rows = random_matrix(4, 24, rng) + MatrixD::Constant(4, 24, 5.0);
  FuseContext ctx{Mode::Train, 0.5, 99, 7};
  FusionCache cache;
  const MatrixD out = fuse_rows(m, rows, ctx, &cache);
  MatrixD masked = rows;
  mask_rows_inplace(masked, 0.5, 99, 7);
  EXPECT_TRUE(bitwise_equal(cache.input, masked));
  EXPECT_TRUE(bitwise_equal(out, MatrixD(masked.cwiseProduct(tuner_forward_rows(*m.tuner, masked)))));
  // infer mode ignores rho entirely
  EXPECT_TRUE(bitwise_equal(fuse_rows(m, rows, FuseContext{Mode::Infer, 0.5, 99, 7}),
                            fuse_rows(m, rows, FuseContext{})));
}

TEST(FusionModel, FloatInferenceTracksDouble) {
  for (const char* v : {"coarse", "fine", "self-attn", "moe-top3", "ensemble", "single:s0"}) {
    const FusionModel m = init_model(spec_for(v), 4);
    CounterRng rng(4);
    const MatrixD rows = random_matrix(6, 24, rng);
    const RowVectorD ld = bag_logits(m, rows);
    const RowVector<float> lf = bag_logits(to_float(m), MatrixF(rows.cast<float>()));
    EXPECT_LT((ld - lf.cast<double>()).cwiseAbs().maxCoeff(), 1e-4) << v;
  }
}

TEST(FusionModel, BagLogitsArePermutationInvariant) {
  for (const char* v : {"coarse", "fine", "self-attn", "moe-top3", "ensemble", "ensemble-mask"}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const FusionModel m = init_model(spec_for(v, TaskKind::Classification, 4, 8), seed);
      CounterRng rng(derive_key(seed, {5}));
      const Index tiles = 2 + static_cast<Index>(rng() % 30);
      const MatrixD rows = random_matrix(tiles, 32, rng, 2.0);
      std::vector<Index> perm(static_cast<std::size_t>(tiles));
      std::iota(perm.begin(), perm.end(), Index{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      MatrixD shuffled(tiles, 32);
      for (Index k = 0; k < tiles; ++k) shuffled.row(k) = rows.row(perm[static_cast<std::size_t>(k)]);
      EXPECT_LT((bag_logits(m, rows) - bag_logits(m, shuffled)).cwiseAbs().maxCoeff(), 1e-6) << v;
    }
  }
}

TEST(GradCheck, EveryVariantOnTinyInstances) {
  for (Variant v : {Variant::Coarse, Variant::Fine, Variant::SelfAttn, Variant::Ensemble,
                    Variant::EnsembleMask, Variant::MoeTop3, Variant::Single}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const GradCheckReport r = grad_check_instance(v, seed);
      EXPECT_LT(r.max_rel_error, 1e-4) << variant_name(v) << " seed " << seed << " worst "
                                       << r.worst_block;
      for (const auto& b : r.blocks)
        EXPECT_EQ(b.skipped, b.name.rfind("moe.gate_", 0) == 0) << b.name;
    }
    const GradCheckReport reg = grad_check_instance(v, 7, 1e-3, TaskKind::Regression);
    EXPECT_LT(reg.max_rel_error, 1e-4) << variant_name(v) << " regression";
  }
}

TEST(GradCheck, LinearModelIsNearlyExact) {
  // ensemble + regression head is linear in every parameter
  const GradCheckReport r = grad_check_instance(Variant::Ensemble, 3, 1e-3, TaskKind::Regression);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, StepOutOfRangeIsRejected) {
  const FusionModel m = init_model(spec_for("fine"), 1);
  CounterRng rng(1);
  const GradSample s{random_matrix(4, 24, rng), 1, MatrixD()};
  EXPECT_ERROR_KIND(grad_check(m, s, 1e-2, {}), ErrorKind::InvalidArgument);
  EXPECT_ERROR_KIND(grad_check(m, s, 1e-9, {}), ErrorKind::InvalidArgument);
  EXPECT_ERROR_KIND(grad_check(m, s, -1e-4, {}), ErrorKind::InvalidArgument);
}

TEST(GradRelError, Floor) {
  EXPECT_EQ(grad_rel_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(grad_rel_error(1e-9, 0.0), 1e-9 / kGradCheckFloor);
  EXPECT_DOUBLE_EQ(grad_rel_error(2.0, 1.0), 0.5);
}

TEST(Train, DeterministicCurvesAndParams) {
  const Dataset data = toy_dataset(TaskKind::Classification, 12, 3, 8, 1);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 5;
  cfg.attention_width = 16;
  const TrainResult a = train(data, cfg);
  const TrainResult b = train(data, cfg);
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(std::memcmp(&a.curve[i].loss, &b.curve[i].loss, sizeof(double)), 0);
    EXPECT_EQ(a.curve[i].split, b.curve[i].split);
  }
  FusionModel ma = a.model, mb = b.model;
  auto ta = tensors(ma), tb = tensors(mb);
  for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_TRUE(bitwise_equal(*ta[i].value, *tb[i].value));
  cfg.seed = 6;
  const TrainResult c = train(data, cfg);
  EXPECT_NE(a.curve.back().loss, c.curve.back().loss);
}

TEST(Train, DoesNotModifyFeatures) {
  const Dataset data = toy_dataset(TaskKind::Classification, 6, 3, 8, 2);
  const Dataset before = data;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.attention_width = 16;
  train(data, cfg);
  for (std::size_t i = 0; i < data.bags.size(); ++i)
    EXPECT_TRUE(bitwise_equal(data.bags[i].compound, before.bags[i].compound));
}

TEST(Train, EnsembleTrainsOnlyTheHead) {
  const Dataset data = toy_dataset(TaskKind::Classification, 6, 3, 8, 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.attention_width = 16;
  cfg.variant = VariantSpec::parse("ensemble");
  TrainResult r = train(data, cfg);
  EXPECT_FALSE(r.model.tuner.has_value());
  for (const auto& t : tensors(r.model)) EXPECT_EQ(t.name.rfind("abmil.", 0), 0u) << t.name;
}

TEST(Train, NonFiniteLossNamesTheStep) {
  const Dataset data = toy_dataset(TaskKind::Classification, 6, 3, 8, 4);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.attention_width = 16;
  cfg.learning_rate = 1e300;
  try {
    train(data, cfg);
    FAIL() << "expected NonFiniteLoss";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Train, SingleBagConvergesMonotonically) {
  Dataset data = toy_dataset(TaskKind::Classification, 1, 2, 8, 5);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.rho = 0.0;
  cfg.learning_rate = 1e-2;
  cfg.weight_decay = 0.0;
  cfg.attention_width = 16;
  const TrainResult r = train(data, cfg);
  ASSERT_EQ(r.curve.size(), 200u);
  for (std::size_t i = 1; i < r.curve.size(); ++i) EXPECT_LE(r.curve[i].loss, r.curve[i - 1].loss) << i;
  EXPECT_LT(r.curve.back().loss, 1e-3);
  EXPECT_LT(evaluate(r.model, data, Split::Train).loss, 1e-3);
}

TEST(Train, RegressionLearnsLinearTargets) {
  const Dataset data = toy_dataset(TaskKind::Regression, 12, 2, 4, 6, 20, 3);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.rho = 0.0;
  cfg.learning_rate = 1e-2;
  cfg.variant = VariantSpec::parse("ensemble");
  const TrainResult r = train(data, cfg);
  const EvalResult ev = evaluate(r.model, data, Split::Test);
  EXPECT_TRUE(ev.report.has_regression);
  EXPECT_EQ(ev.report.per_class.size(), 3u);
  EXPECT_GT(ev.report.pcc, 0.95);
  EXPECT_EQ(ev.report.n, 4 * 20);
}

TEST(Evaluate, ReportsAndMismatch) {
  const Dataset data = toy_dataset(TaskKind::Classification, 12, 3, 8, 7);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.learning_rate = 5e-3;
  cfg.attention_width = 16;
  const TrainResult r = train(data, cfg);
  const EvalResult a = evaluate(r.model, data, Split::Test);
  const EvalResult b = evaluate(r.model, data, Split::Test);
  EXPECT_EQ(a.report.n, 4);
  EXPECT_TRUE(bitwise_equal(a.scores, b.scores));
  for (Index i = 0; i < a.scores.rows(); ++i) EXPECT_NEAR(a.scores.row(i).sum(), 1.0, 1e-12);
  EXPECT_EQ(a.report.acc, 1.0);

  const Dataset reg = toy_dataset(TaskKind::Regression, 3, 3, 8, 7);
  EXPECT_ERROR_KIND(evaluate(r.model, reg, Split::Test), ErrorKind::VariantTaskMismatch);
  Dataset empty = data;
  for (auto& bag : empty.bags) bag.split = Split::Train;
  EXPECT_ERROR_KIND(evaluate(r.model, empty, Split::Val), ErrorKind::EmptyInput);
}

}  // namespace
}  // namespace adafusion
