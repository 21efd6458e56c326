// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/prompt_tuner.hpp"

#include <type_traits>

#include "adafusion/error.hpp"

namespace adafusion {

TunerShape TunerShape::with_default_hidden(Index sources, Index dim, GateVariant variant) {
  return {sources, dim, std::max<Index>(1, sources * dim / 2), variant};
}

TunerParams init_tuner(const TunerShape& shape, CounterRng& rng) {
  require(shape.sources >= 1 && shape.dim >= 1 && shape.hidden >= 1, ErrorKind::ConfigInvalid,
          "tuner shape must be positive");
  TunerParams p;
  p.shape = shape;
  p.norm_scale = MatrixD::Ones(1, shape.flat());
  p.norm_shift = MatrixD::Zero(1, shape.flat());
  p.w1 = nn::glorot_uniform(shape.flat(), shape.hidden, rng);
  p.b1 = MatrixD::Zero(1, shape.hidden);
  p.w2 = nn::glorot_uniform(shape.hidden, shape.outputs(), rng);
  p.b2 = MatrixD::Zero(1, shape.outputs());
  return p;
}

TunerParams zeros_like(const TunerParams& params) {
  TunerParams z;
  z.shape = params.shape;
  z.norm_scale = MatrixD::Zero(1, params.norm_scale.cols());
  z.norm_shift = MatrixD::Zero(1, params.norm_shift.cols());
  z.w1 = MatrixD::Zero(params.w1.rows(), params.w1.cols());
  z.b1 = MatrixD::Zero(1, params.b1.cols());
  z.w2 = MatrixD::Zero(params.w2.rows(), params.w2.cols());
  z.b2 = MatrixD::Zero(1, params.b2.cols());
  return z;
}

std::vector<TensorRef> tensors(TunerParams& p) {
  return {{"tuner.norm_scale", &p.norm_scale}, {"tuner.norm_shift", &p.norm_shift},
          {"tuner.w1", &p.w1},                 {"tuner.b1", &p.b1},
          {"tuner.w2", &p.w2},                 {"tuner.b2", &p.b2}};
}

template <typename T>
Matrix<T> tuner_forward_rows(const BasicTunerParams<T>& params, const Matrix<T>& flat_rows,
                             TunerCache* cache) {
  const TunerShape& s = params.shape;
  require(flat_rows.cols() == s.flat(), ErrorKind::ShapeMismatch,
          "tuner expects rows of length " + std::to_string(s.flat()));
  constexpr bool kCache = std::is_same_v<T, double>;

  nn::LayerNormCache* norm_cache = nullptr;
  if constexpr (kCache) {
    if (cache) norm_cache = &cache->norm;
  }
  Matrix<T> normed = nn::layer_norm_forward(flat_rows, params.norm_scale, params.norm_shift,
                                            norm_cache);
  Matrix<T> pre = nn::dense_forward(normed, params.w1, params.b1);
  Matrix<T> hidden = pre.unaryExpr([](T v) { return nn::gelu(v); });
  Matrix<T> raw = nn::dense_forward(hidden, params.w2, params.b2);
  raw = raw.unaryExpr([](T v) { return nn::sigmoid(v); });

  Matrix<T> gate;
  if (s.variant == GateVariant::Coarse) {
    gate.resize(flat_rows.rows(), s.flat());
    for (Index r = 0; r < gate.rows(); ++r)
      for (Index i = 0; i < s.sources; ++i)
        gate.row(r).segment(i * s.dim, s.dim).setConstant(raw(r, i));
  } else {
    gate = raw;
  }

  if constexpr (kCache) {
    if (cache) {
      cache->normed = std::move(normed);
      cache->pre_hidden = std::move(pre);
      cache->hidden = std::move(hidden);
      cache->raw_gate = std::move(raw);
      cache->valid = true;
    }
  }
  return gate;
}

template MatrixD tuner_forward_rows<double>(const TunerParams&, const MatrixD&, TunerCache*);
template MatrixF tuner_forward_rows<float>(const BasicTunerParams<float>&, const MatrixF&,
                                           TunerCache*);

GateMatrix tuner_forward(const TunerParams& params, const CompoundEmbedding& masked) {
  require(masked.sources() == params.shape.sources && masked.dim() == params.shape.dim,
          ErrorKind::ShapeMismatch, "compound shape differs from tuner shape");
  TunerCache cache;
  const MatrixD row = masked.flattened();
  const MatrixD flat_gate = tuner_forward_rows(params, row, &cache);
  GateMatrix g;
  g.values = Eigen::Map<const MatrixD>(flat_gate.data(), params.shape.sources, params.shape.dim);
  if (params.shape.variant == GateVariant::Coarse) g.source_gates = cache.raw_gate.row(0);
  return g;
}

TunedPrompt apply_gate(const CompoundEmbedding& compound, const GateMatrix& gate) {
  require(compound.values.rows() == gate.values.rows() &&
              compound.values.cols() == gate.values.cols(),
          ErrorKind::ShapeMismatch, "gate shape differs from compound");
  return {compound.values.cwiseProduct(gate.values)};
}

Index argmax_lowest(const RowVectorD& values) {
  Index best = 0;
  for (Index i = 1; i < values.size(); ++i)
    if (values(i) > values(best)) best = i;
  return best;
}

namespace {

// Mean taken around the first element, so a constant row returns that
// constant exactly.
template <typename Row>
double shifted_mean(const Row& row) {
  const double first = row(0);
  double sum = 0.0;
  for (Index j = 0; j < row.size(); ++j) sum += row(j) - first;
  return first + sum / static_cast<double>(row.size());
}

}  // namespace

ContributionVector contribution_scores(const GateMatrix& gate) {
  ContributionVector c;
  c.scores.resize(gate.values.rows());
  for (Index i = 0; i < gate.values.rows(); ++i) c.scores(i) = shifted_mean(gate.values.row(i));
  c.argmax_source = argmax_lowest(c.scores);
  return c;
}

MatrixD contribution_scores_rows(const MatrixD& gate_rows, Index sources, Index dim) {
  require(gate_rows.cols() == sources * dim, ErrorKind::ShapeMismatch, "gate row length");
  MatrixD s(gate_rows.rows(), sources);
  for (Index r = 0; r < gate_rows.rows(); ++r)
    for (Index i = 0; i < sources; ++i) s(r, i) = shifted_mean(gate_rows.row(r).segment(i * dim, dim));
  return s;
}

TunerGradients tuner_backward(const TunerParams& params, const TunerCache& cache,
                              const MatrixD& gate_grad) {
  const TunerShape& s = params.shape;
  require(cache.valid && cache.raw_gate.rows() == gate_grad.rows(),
          ErrorKind::MissingForwardCache, "tuner backward needs the matching forward cache");
  require(gate_grad.cols() == s.flat(), ErrorKind::ShapeMismatch, "gate gradient width");

  MatrixD draw;
  if (s.variant == GateVariant::Coarse) {
    draw.resize(gate_grad.rows(), s.sources);
    for (Index r = 0; r < gate_grad.rows(); ++r)
      for (Index i = 0; i < s.sources; ++i)
        draw(r, i) = gate_grad.row(r).segment(i * s.dim, s.dim).sum();
  } else {
    draw = gate_grad;
  }
  const MatrixD dz2 =
      draw.cwiseProduct(cache.raw_gate.cwiseProduct((1.0 - cache.raw_gate.array()).matrix()));

  TunerGradients g{zeros_like(params), MatrixD()};
  const MatrixD dhidden = nn::dense_backward(cache.hidden, params.w2, dz2, g.params.w2, g.params.b2);
  const MatrixD dpre =
      dhidden.cwiseProduct(cache.pre_hidden.unaryExpr([](double v) { return nn::gelu_grad(v); }));
  const MatrixD dnormed = nn::dense_backward(cache.normed, params.w1, dpre, g.params.w1, g.params.b1);
  g.input = nn::layer_norm_backward(cache.norm, params.norm_scale, dnormed, g.params.norm_scale,
                                    g.params.norm_shift);
  return g;
}

}  // namespace adafusion
