// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "adafusion/feature_store.hpp"
#include "adafusion/fusion_model.hpp"
#include "adafusion/metrics.hpp"

namespace adafusion {

struct TrainConfig {
  double learning_rate = 2e-4;
  double weight_decay = 1e-5;
  int epochs = 0;  // 0: 50 for classification, 20 for regression
  Index batch = 0;  // 0: 1 bag per step (classification), 256 tiles (regression)
  double rho = 0.2;
  std::uint64_t seed = 0;
  VariantSpec variant;
  Index dim = 0;  // 0: take it from the dataset
  Index tuner_hidden = 0;
  Index attention_width = kDefaultAttentionWidth;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  int resolved_epochs(TaskKind task) const;
  Index resolved_batch(TaskKind task) const;
  void validate() const;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  /// Hash of the canonical JSON form.
  std::uint64_t fingerprint() const;
};

struct LossAndGrad {
  double loss = 0.0;
  RowVectorD grad;
};

/// loss = logsumexp(logits) - logits[label]; grad = softmax(logits) - onehot(label).
LossAndGrad cross_entropy(const RowVectorD& logits, int label);
/// loss = mean((pred - target)^2); grad = 2 (pred - target) / G.
LossAndGrad mse(const RowVectorD& pred, const RowVectorD& target);

struct AdamState {
  std::vector<MatrixD> first_moment;
  std::vector<MatrixD> second_moment;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState init_adam(const std::vector<TensorRef>& params, double beta1 = 0.9,
                    double beta2 = 0.999, double eps = 1e-8);

/// Decoupled weight decay (p -= lr * wd * p) followed by the bias-corrected
/// Adam update.
void adam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
               AdamState& state, double learning_rate, double weight_decay);

/// One slide: compound rows (tiles x N*d, pooled features in source order).
struct SampleBag {
  std::string slide_id;
  std::vector<TileRef> tiles;
  MatrixD compound;
  int label = -1;   // classification
  MatrixD targets;  // regression, tiles x G
  Split split = Split::Train;
};

struct Dataset {
  TaskKind task = TaskKind::Classification;
  int outputs = 0;  // classes or targets
  std::vector<std::string> source_ids;
  Index dim = 0;
  std::vector<SampleBag> bags;

  std::vector<const SampleBag*> in_split(Split split) const;
};

/// Aligns pooled tables (all with the same dim) into bags of compound rows.
/// Slides without a split assignment default to train.
Dataset build_dataset(const DatasetManifest& manifest, const std::vector<FeatureTable>& pooled);

ModelSpec model_spec_for(const Dataset& data, const TrainConfig& cfg);

/// One training/grad-check sample.
struct GradSample {
  MatrixD compound;
  int label = -1;
  MatrixD targets;
};

/// Loss of one sample (CE for a bag, mean per-tile MSE for tile rows);
/// accumulates analytic gradients into `grads` when given.
double sample_loss(const FusionModel& model, const GradSample& sample, const FuseContext& ctx,
                   FusionModel* grads = nullptr, RowVectorD* outputs = nullptr);

struct CurvePoint {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double metric = 0.0;  // ACC (classification) or mean PCC (regression)
};

struct TrainResult {
  FusionModel model;
  AdamState adam;
  std::vector<CurvePoint> curve;
  int epochs = 0;
};

/// Trains fusion block and head on the train split. Deterministic for a
/// given config. Throws NonFiniteLoss naming the step.
TrainResult train(const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(const CurvePoint&)>& on_epoch = {});

struct EvalResult {
  MetricReport report;
  double loss = 0.0;
  MatrixD scores;  // class probabilities per bag, or predictions per tile
  std::vector<int> preds;
  std::vector<int> labels;
};

EvalResult evaluate(const FusionModel& model, const std::vector<const SampleBag*>& bags);
EvalResult evaluate(const FusionModel& model, const Dataset& data, Split split);

struct GradCheckBlock {
  std::string name;
  double max_rel_error = 0.0;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  bool skipped = false;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_rel_error = 0.0;
  std::string worst_block;
  Index worst_index = -1;
};

/// Relative error used by grad_check: |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradCheckFloor = 1e-7;
double grad_rel_error(double analytic, double numeric);

/// Central differences (five-point stencil) on every scalar parameter. MoE gating tensors are
/// reported as skipped (hard routing has no gradient path to them).
GradCheckReport grad_check(const FusionModel& model, const GradSample& sample, double eps,
                           const FuseContext& ctx);

/// Tiny random instance (N=3, d=8, h=16, 4-tile bag, C=2 or G=2 targets)
/// for the given variant, checked in train mode with rho = 0.2.
GradCheckReport grad_check_instance(Variant variant, std::uint64_t seed, double eps = 1e-3,
                                    TaskKind task = TaskKind::Classification);

}  // namespace adafusion
