// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adafusion/baselines.hpp"
#include "adafusion/feature_store.hpp"
#include "adafusion/prompt_tuner.hpp"
#include "adafusion/task_heads.hpp"

namespace adafusion {

enum class Variant { Coarse, Fine, Ensemble, EnsembleMask, SelfAttn, MoeTop3, Single };

/// CLI spelling: coarse | fine | ensemble | ensemble-mask | self-attn | moe-top3 | single:<id>.
std::string variant_name(Variant variant);
bool has_tuner(Variant variant);
bool uses_mask(Variant variant);

struct VariantSpec {
  Variant kind = Variant::Fine;
  std::string single_source;  // only for Variant::Single

  std::string to_string() const;
  static VariantSpec parse(const std::string& text);
};

struct ModelSpec {
  VariantSpec variant;
  TaskKind task = TaskKind::Classification;
  std::vector<std::string> source_ids;
  Index dim = 0;
  Index tuner_hidden = 0;  // 0 -> N*d/2
  Index attention_width = kDefaultAttentionWidth;
  Index outputs = 2;  // classes or regression targets

  Index sources() const { return static_cast<Index>(source_ids.size()); }
  Index flat_width() const { return sources() * dim; }
  /// Width of the per-tile vector the task head consumes.
  Index fused_width() const;
  /// Index of the single source (Variant::Single).
  Index single_index() const;
};

template <typename T>
struct BasicFusionModel {
  ModelSpec spec;
  std::optional<BasicTunerParams<T>> tuner;
  std::optional<BasicSelfAttnParams<T>> self_attn;
  std::optional<BasicMoeParams<T>> moe;
  std::optional<BasicAbmilParams<T>> abmil;
  std::optional<BasicRegressorParams<T>> regressor;
};

using FusionModel = BasicFusionModel<double>;

/// Validates the spec (e.g. TooFewSources for moe-top3 with N < 3) and
/// draws all parameters from `seed`.
FusionModel init_model(const ModelSpec& spec, std::uint64_t seed);
FusionModel zeros_like(const FusionModel& model);
/// All trainable tensors in a stable order: fusion block first, head last.
std::vector<TensorRef> tensors(FusionModel& model);
BasicFusionModel<float> to_float(const FusionModel& model);

enum class Mode { Train, Infer };

struct FuseContext {
  Mode mode = Mode::Infer;
  double rho = 0.0;
  std::uint64_t mask_seed = 0;
  std::uint64_t step = 0;
};

struct FusionCache {
  MatrixD input;  // after masking
  MatrixD gate;   // tuner variants
  TunerCache tuner;
  SelfAttnCache self_attn;
  MoeCache moe;
  bool valid = false;
};

/// Maps compound rows (tiles x N*d) to the head's input rows.
MatrixD fuse_rows(const FusionModel& model, const MatrixD& compound_rows, const FuseContext& ctx,
                  FusionCache* cache = nullptr);

/// Inference-only fusion for any scalar type (no mask).
template <typename T>
Matrix<T> fuse_rows_infer(const BasicFusionModel<T>& model, const Matrix<T>& compound_rows);

/// Accumulates parameter gradients into `grads` and returns the gradient
/// w.r.t. the fusion input as seen after masking.
MatrixD fuse_backward(const FusionModel& model, const FusionCache& cache, const MatrixD& fused_grad,
                      FusionModel& grads);

/// End-to-end inference logits for one bag (classification models).
template <typename T>
RowVector<T> bag_logits(const BasicFusionModel<T>& model, const Matrix<T>& compound_rows);

}  // namespace adafusion
