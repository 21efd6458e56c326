// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/task_heads.hpp"

#include <cmath>

#include "adafusion/error.hpp"
#include "adafusion/nn.hpp"

namespace adafusion {

AbmilParams init_abmil(Index input_dim, Index attention_width, Index classes, CounterRng& rng) {
  require(input_dim >= 1 && attention_width >= 1 && classes >= 1, ErrorKind::ConfigInvalid,
          "ABMIL shape must be positive");
  AbmilParams p;
  p.attn_v = nn::glorot_uniform(input_dim, attention_width, rng);
  p.attn_w = nn::glorot_uniform(1, attention_width, rng);
  p.classifier_w = nn::glorot_uniform(input_dim, classes, rng);
  p.classifier_b = MatrixD::Zero(1, classes);
  return p;
}

AbmilParams zeros_like(const AbmilParams& p) {
  return {MatrixD::Zero(p.attn_v.rows(), p.attn_v.cols()), MatrixD::Zero(1, p.attn_w.cols()),
          MatrixD::Zero(p.classifier_w.rows(), p.classifier_w.cols()),
          MatrixD::Zero(1, p.classifier_b.cols())};
}

std::vector<TensorRef> tensors(AbmilParams& p) {
  return {{"abmil.attn_v", &p.attn_v},
          {"abmil.attn_w", &p.attn_w},
          {"abmil.classifier_w", &p.classifier_w},
          {"abmil.classifier_b", &p.classifier_b}};
}

RegressorParams init_regressor(Index input_dim, Index targets, CounterRng& rng) {
  require(input_dim >= 1 && targets >= 1, ErrorKind::ConfigInvalid, "regressor shape");
  return {nn::glorot_uniform(input_dim, targets, rng), MatrixD::Zero(1, targets)};
}

RegressorParams zeros_like(const RegressorParams& p) {
  return {MatrixD::Zero(p.w.rows(), p.w.cols()), MatrixD::Zero(1, p.b.cols())};
}

std::vector<TensorRef> tensors(RegressorParams& p) {
  return {{"regressor.w", &p.w}, {"regressor.b", &p.b}};
}

namespace {

template <typename T>
struct AbmilPass {
  Matrix<T> hidden;
  RowVector<T> attention;
  RowVector<T> bag;
  RowVector<T> logits;
};

template <typename T>
AbmilPass<T> run_abmil(const BasicAbmilParams<T>& params, const Matrix<T>& tiles) {
  require(tiles.rows() >= 1, ErrorKind::EmptyBag, "ABMIL needs at least one tile");
  require(tiles.cols() == params.input_dim(), ErrorKind::ShapeMismatch,
          "tile width " + std::to_string(tiles.cols()) + " differs from ABMIL input " +
              std::to_string(params.input_dim()));
  AbmilPass<T> pass;
  pass.hidden = nn::matmul(tiles, params.attn_v).array().tanh().matrix();
  const Matrix<T> scores = (pass.hidden * params.attn_w.transpose()).transpose();  // 1 x M
  pass.attention = nn::softmax_rows(scores).row(0);
  pass.bag = pass.attention * tiles;
  pass.logits = pass.bag * params.classifier_w + params.classifier_b.row(0);
  return pass;
}

}  // namespace

Prediction abmil_forward(const MatrixD& tiles, const AbmilParams& params, AbmilCache* cache) {
  AbmilPass<double> pass = run_abmil(params, tiles);
  Prediction pred{pass.logits, pass.attention};
  if (cache) {
    cache->tiles = tiles;
    cache->hidden = std::move(pass.hidden);
    cache->attention = std::move(pass.attention);
    cache->bag = std::move(pass.bag);
    cache->valid = true;
  }
  return pred;
}

template <typename T>
RowVector<T> abmil_logits(const BasicAbmilParams<T>& params, const Matrix<T>& tiles) {
  return run_abmil(params, tiles).logits;
}

template RowVector<double> abmil_logits<double>(const AbmilParams&, const MatrixD&);
template RowVector<float> abmil_logits<float>(const BasicAbmilParams<float>&, const MatrixF&);

AbmilGradients abmil_backward(const AbmilParams& params, const AbmilCache& cache,
                              const RowVectorD& logit_grad) {
  require(cache.valid, ErrorKind::MissingForwardCache, "ABMIL backward without forward cache");
  require(logit_grad.size() == params.classes(), ErrorKind::ShapeMismatch, "logit gradient width");
  AbmilGradients g{zeros_like(params), MatrixD()};
  g.params.classifier_w = cache.bag.transpose() * logit_grad;
  g.params.classifier_b = logit_grad;
  const RowVectorD dbag = logit_grad * params.classifier_w.transpose();

  // bag = attention * H
  g.tiles = cache.attention.transpose() * dbag;
  const RowVectorD dattention = (cache.tiles * dbag.transpose()).transpose();
  const double centre = cache.attention.dot(dattention);
  const RowVectorD dscores =
      cache.attention.cwiseProduct((dattention.array() - centre).matrix());

  // scores = tanh(H V) w^T
  g.params.attn_w = dscores * cache.hidden;
  const MatrixD dhidden = dscores.transpose() * params.attn_w;
  const MatrixD dpre =
      dhidden.cwiseProduct((1.0 - cache.hidden.array().square()).matrix());
  g.params.attn_v = cache.tiles.transpose() * dpre;
  g.tiles += dpre * params.attn_v.transpose();
  return g;
}

template <typename T>
Matrix<T> regress_rows(const BasicRegressorParams<T>& params, const Matrix<T>& rows) {
  require(rows.cols() == params.w.rows(), ErrorKind::ShapeMismatch,
          "regressor input width " + std::to_string(rows.cols()) + " expected " +
              std::to_string(params.w.rows()));
  return nn::dense_forward(rows, params.w, params.b);
}

template MatrixD regress_rows<double>(const RegressorParams&, const MatrixD&);
template MatrixF regress_rows<float>(const BasicRegressorParams<float>&, const MatrixF&);

Prediction regress_forward(const RowVectorD& tile_prompt, const RegressorParams& params) {
  const MatrixD row = tile_prompt;
  return {regress_rows(params, row).row(0), RowVectorD()};
}

RegressorGradients regress_backward(const RegressorParams& params, const MatrixD& rows,
                                    const MatrixD& output_grad) {
  require(rows.rows() == output_grad.rows() && output_grad.cols() == params.w.cols(),
          ErrorKind::ShapeMismatch, "regressor gradient shape");
  RegressorGradients g{zeros_like(params), MatrixD()};
  g.rows = nn::dense_backward(rows, params.w, output_grad, g.params.w, g.params.b);
  return g;
}

}  // namespace adafusion
