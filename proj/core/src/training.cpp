// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "adafusion/error.hpp"
#include "adafusion/rng.hpp"

namespace adafusion {
namespace {

using json = nlohmann::json;

// Stream tags under the run seed.
constexpr std::uint64_t kInitStream = 11;
constexpr std::uint64_t kMaskStream = 12;
constexpr std::uint64_t kShuffleStream = 13;

void check_finite_loss(double loss, std::int64_t step) {
  if (!std::isfinite(loss))
    fail(ErrorKind::NonFiniteLoss, "loss became non-finite at step " + std::to_string(step));
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

/// Mean PCC over target columns with nonzero variance; NaN if none.
double mean_column_pcc(const MatrixD& pred, const MatrixD& target, std::vector<double>* per_col) {
  double sum = 0.0;
  int used = 0;
  std::vector<double> x(static_cast<std::size_t>(pred.rows())), y(x.size());
  for (Index g = 0; g < pred.cols(); ++g) {
    for (Index r = 0; r < pred.rows(); ++r) {
      x[static_cast<std::size_t>(r)] = pred(r, g);
      y[static_cast<std::size_t>(r)] = target(r, g);
    }
    double value = nan();
    try {
      value = pcc(x, y);
      sum += value;
      ++used;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ZeroVariance && e.kind() != ErrorKind::EmptyInput) throw;
    }
    if (per_col) per_col->push_back(value);
  }
  return used ? sum / used : nan();
}

}  // namespace

// ------------------------------ config ------------------------------------

int TrainConfig::resolved_epochs(TaskKind task) const {
  if (epochs > 0) return epochs;
  return task == TaskKind::Classification ? 50 : 20;
}

Index TrainConfig::resolved_batch(TaskKind task) const {
  if (batch > 0) return batch;
  return task == TaskKind::Classification ? 1 : 256;
}

void TrainConfig::validate() const {
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::ConfigInvalid,
          "learning rate must be positive");
  require(weight_decay >= 0.0, ErrorKind::ConfigInvalid, "weight decay must be >= 0");
  require(rho >= 0.0 && rho <= 1.0, ErrorKind::RhoOutOfRange, "rho must lie in [0, 1]");
  require(epochs >= 0 && batch >= 0, ErrorKind::ConfigInvalid, "epochs and batch must be >= 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0,
          ErrorKind::ConfigInvalid, "Adam betas must lie in [0, 1) and eps > 0");
}

std::string TrainConfig::to_json() const {
  json j;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["epochs"] = epochs;
  j["batch"] = batch;
  j["rho"] = rho;
  j["seed"] = seed;
  j["variant"] = variant.to_string();
  j["d"] = dim;
  j["tuner_hidden"] = tuner_hidden;
  j["attention_width"] = attention_width;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    c.learning_rate = j.at("learning_rate").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch = j.at("batch").get<Index>();
    c.rho = j.at("rho").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.variant = VariantSpec::parse(j.at("variant").get<std::string>());
    c.dim = j.at("d").get<Index>();
    c.tuner_hidden = j.at("tuner_hidden").get<Index>();
    c.attention_width = j.at("attention_width").get<Index>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigInvalid, std::string("bad train config: ") + e.what());
  }
  return c;
}

std::uint64_t TrainConfig::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json()) h = mix64(h ^ ch);
  return h;
}

// ------------------------------ losses ------------------------------------

LossAndGrad cross_entropy(const RowVectorD& logits, int label) {
  require(label >= 0 && label < logits.size(), ErrorKind::LabelOutOfRange,
          "label " + std::to_string(label) + " outside [0, " + std::to_string(logits.size()) + ")");
  const double m = logits.maxCoeff();
  const RowVectorD shifted = logits.array() - m;
  const double sum = shifted.array().exp().sum();
  LossAndGrad out;
  out.loss = std::log(sum) - shifted(label);
  out.grad = shifted.array().exp() / sum;
  out.grad(label) -= 1.0;
  return out;
}

LossAndGrad mse(const RowVectorD& pred, const RowVectorD& target) {
  require(pred.size() == target.size() && pred.size() > 0, ErrorKind::ShapeMismatch,
          "MSE needs equal, nonzero lengths");
  const RowVectorD diff = pred - target;
  const double g = static_cast<double>(pred.size());
  return {diff.squaredNorm() / g, diff * (2.0 / g)};
}

// ------------------------------- Adam -------------------------------------

AdamState init_adam(const std::vector<TensorRef>& params, double beta1, double beta2, double eps) {
  AdamState s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  for (const auto& p : params) {
    s.first_moment.push_back(MatrixD::Zero(p.value->rows(), p.value->cols()));
    s.second_moment.push_back(MatrixD::Zero(p.value->rows(), p.value->cols()));
  }
  return s;
}

void adam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
               AdamState& state, double learning_rate, double weight_decay) {
  require(params.size() == grads.size() && params.size() == state.first_moment.size(),
          ErrorKind::ShapeMismatch, "Adam: parameter, gradient and state counts differ");
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    MatrixD& p = *params[i].value;
    const MatrixD& g = *grads[i].value;
    MatrixD& m = state.first_moment[i];
    MatrixD& v = state.second_moment[i];
    require(p.rows() == g.rows() && p.cols() == g.cols() && m.rows() == p.rows() &&
                m.cols() == p.cols(),
            ErrorKind::ShapeMismatch, "Adam: shape mismatch for " + params[i].name);
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseAbs2();
    if (weight_decay != 0.0) p -= (learning_rate * weight_decay) * p;
    p.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

// ------------------------------ dataset -----------------------------------

std::vector<const SampleBag*> Dataset::in_split(Split split) const {
  std::vector<const SampleBag*> out;
  for (const auto& b : bags)
    if (b.split == split) out.push_back(&b);
  return out;
}

Dataset build_dataset(const DatasetManifest& manifest, const std::vector<FeatureTable>& pooled) {
  require(pooled.size() == manifest.sources.size(), ErrorKind::MissingSource,
          "expected one pooled table per source");
  const Index dim = pooled.front().dim();
  for (const auto& t : pooled)
    require(t.dim() == dim, ErrorKind::ShapeMismatch,
            "source '" + t.source.source_id + "' has dim " + std::to_string(t.dim()) +
                "; pool all sources to a common d first");
  Dataset data;
  data.task = manifest.task_kind;
  data.outputs = manifest.task_kind == TaskKind::Classification ? manifest.num_classes
                                                                : manifest.num_targets;
  data.source_ids = manifest.source_ids();
  data.dim = dim;
  const Index n = static_cast<Index>(pooled.size());
  for (auto& aligned : align_bags(pooled, manifest)) {
    SampleBag b;
    b.slide_id = aligned.bag.slide_id;
    b.tiles = aligned.bag.tiles;
    const Index m = aligned.bag.tile_count();
    b.compound.resize(m, n * dim);
    for (Index s = 0; s < n; ++s)
      for (Index k = 0; k < m; ++k)
        b.compound.row(k).segment(s * dim, dim) =
            pooled[static_cast<std::size_t>(s)]
                .values.row(aligned.row_index[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)])
                .cast<double>();
    if (data.task == TaskKind::Classification) {
      b.label = *aligned.bag.class_index;
    } else {
      b.targets.resize(m, data.outputs);
      for (Index k = 0; k < m; ++k)
        for (Index g = 0; g < data.outputs; ++g)
          b.targets(k, g) = aligned.bag.tile_targets[static_cast<std::size_t>(k)][static_cast<std::size_t>(g)];
    }
    const auto it = manifest.splits.find(b.slide_id);
    b.split = it == manifest.splits.end() ? Split::Train : it->second;
    data.bags.push_back(std::move(b));
  }
  return data;
}

ModelSpec model_spec_for(const Dataset& data, const TrainConfig& cfg) {
  require(cfg.dim == 0 || cfg.dim == data.dim, ErrorKind::ConfigInvalid,
          "configured d=" + std::to_string(cfg.dim) + " but features have d=" +
              std::to_string(data.dim));
  ModelSpec spec;
  spec.variant = cfg.variant;
  spec.task = data.task;
  spec.source_ids = data.source_ids;
  spec.dim = data.dim;
  spec.tuner_hidden = cfg.tuner_hidden;
  spec.attention_width = cfg.attention_width;
  spec.outputs = data.outputs;
  return spec;
}

// ------------------------------ training ----------------------------------

double sample_loss(const FusionModel& model, const GradSample& sample, const FuseContext& ctx,
                   FusionModel* grads, RowVectorD* outputs) {
  FusionCache cache;
  const MatrixD fused = fuse_rows(model, sample.compound, ctx, grads ? &cache : nullptr);
  if (model.spec.task == TaskKind::Classification) {
    AbmilCache head_cache;
    const Prediction pred = abmil_forward(fused, *model.abmil, grads ? &head_cache : nullptr);
    const LossAndGrad ce = cross_entropy(pred.outputs, sample.label);
    if (outputs) *outputs = pred.outputs;
    if (grads) {
      AbmilGradients hg = abmil_backward(*model.abmil, head_cache, ce.grad);
      grads->abmil->attn_v += hg.params.attn_v;
      grads->abmil->attn_w += hg.params.attn_w;
      grads->abmil->classifier_w += hg.params.classifier_w;
      grads->abmil->classifier_b += hg.params.classifier_b;
      fuse_backward(model, cache, hg.tiles, *grads);
    }
    return ce.loss;
  }
  require(sample.targets.rows() == sample.compound.rows() &&
              sample.targets.cols() == model.spec.outputs,
          ErrorKind::ShapeMismatch, "regression targets shape");
  const MatrixD pred = regress_rows(*model.regressor, fused);
  const Index rows = pred.rows();
  double loss = 0.0;
  MatrixD dpred(rows, pred.cols());
  for (Index r = 0; r < rows; ++r) {
    const LossAndGrad l = mse(pred.row(r), sample.targets.row(r));
    loss += l.loss;
    dpred.row(r) = l.grad / static_cast<double>(rows);
  }
  loss /= static_cast<double>(rows);
  if (outputs) *outputs = Eigen::Map<const RowVectorD>(pred.data(), pred.size());
  if (grads) {
    RegressorGradients hg = regress_backward(*model.regressor, fused, dpred);
    grads->regressor->w += hg.params.w;
    grads->regressor->b += hg.params.b;
    fuse_backward(model, cache, hg.rows, *grads);
  }
  return loss;
}

TrainResult train(const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(const CurvePoint&)>& on_epoch) {
  cfg.validate();
  const auto train_bags = data.in_split(Split::Train);
  require(!train_bags.empty(), ErrorKind::ConfigInvalid, "training split is empty");
  const auto val_bags = data.in_split(Split::Val);

  TrainResult result;
  result.model = init_model(model_spec_for(data, cfg), derive_key(cfg.seed, {kInitStream}));
  FusionModel& model = result.model;
  std::vector<TensorRef> params = tensors(model);
  result.adam = init_adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps);
  FusionModel grads = zeros_like(model);
  std::vector<TensorRef> grad_refs = tensors(grads);

  FuseContext ctx;
  ctx.mode = Mode::Train;
  ctx.rho = cfg.rho;
  ctx.mask_seed = derive_key(cfg.seed, {kMaskStream});

  const int epochs = cfg.resolved_epochs(data.task);
  const Index batch = cfg.resolved_batch(data.task);
  std::int64_t step = 0;

  auto apply = [&](double loss) {
    check_finite_loss(loss, step);
    adam_step(params, grad_refs, result.adam, cfg.learning_rate, cfg.weight_decay);
    for (auto& g : grad_refs) g.value->setZero();
    ++step;
  };

  // Regression trains on tiles pooled across the training slides.
  MatrixD tile_rows, tile_targets;
  if (data.task == TaskKind::Regression) {
    Index total = 0;
    for (const auto* b : train_bags) total += b->compound.rows();
    tile_rows.resize(total, data.dim * static_cast<Index>(data.source_ids.size()));
    tile_targets.resize(total, data.outputs);
    Index at = 0;
    for (const auto* b : train_bags) {
      tile_rows.middleRows(at, b->compound.rows()) = b->compound;
      tile_targets.middleRows(at, b->compound.rows()) = b->targets;
      at += b->compound.rows();
    }
  }

  for (int epoch = 0; epoch < epochs; ++epoch) {
    CounterRng shuffle_rng(derive_key(cfg.seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)}));
    double loss_sum = 0.0;
    Index loss_count = 0;
    double metric = nan();

    if (data.task == TaskKind::Classification) {
      std::vector<std::size_t> order(train_bags.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      std::vector<int> preds, labels;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch));
        double step_loss = 0.0;
        for (std::size_t i = start; i < stop; ++i) {
          const SampleBag& bag = *train_bags[order[i]];
          ctx.step = static_cast<std::uint64_t>(step) * 1'000'003ULL + (i - start);
          GradSample sample{bag.compound, bag.label, MatrixD()};
          RowVectorD logits;
          step_loss += sample_loss(model, sample, ctx, &grads, &logits);
          Index best = 0;
          logits.maxCoeff(&best);
          preds.push_back(static_cast<int>(best));
          labels.push_back(bag.label);
        }
        const double scale = 1.0 / static_cast<double>(stop - start);
        if (stop - start > 1)
          for (auto& g : grad_refs) *g.value *= scale;
        step_loss *= scale;
        loss_sum += step_loss;
        ++loss_count;
        apply(step_loss);
      }
      metric = accuracy(preds, labels);
    } else {
      std::vector<Index> order(static_cast<std::size_t>(tile_rows.rows()));
      std::iota(order.begin(), order.end(), Index{0});
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      MatrixD all_pred(tile_rows.rows(), data.outputs), all_target(tile_rows.rows(), data.outputs);
      Index seen = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch));
        const Index rows = static_cast<Index>(stop - start);
        GradSample sample{MatrixD(rows, tile_rows.cols()), -1, MatrixD(rows, data.outputs)};
        for (Index r = 0; r < rows; ++r) {
          sample.compound.row(r) = tile_rows.row(order[start + static_cast<std::size_t>(r)]);
          sample.targets.row(r) = tile_targets.row(order[start + static_cast<std::size_t>(r)]);
        }
        ctx.step = static_cast<std::uint64_t>(step);
        RowVectorD out;
        const double loss = sample_loss(model, sample, ctx, &grads, &out);
        all_pred.middleRows(seen, rows) = Eigen::Map<const MatrixD>(out.data(), rows, data.outputs);
        all_target.middleRows(seen, rows) = sample.targets;
        seen += rows;
        loss_sum += loss;
        ++loss_count;
        apply(loss);
      }
      metric = mean_column_pcc(all_pred, all_target, nullptr);
    }

    const CurvePoint point{epoch + 1, "train", loss_sum / static_cast<double>(loss_count), metric};
    result.curve.push_back(point);
    if (on_epoch) on_epoch(point);
    if (!val_bags.empty()) {
      const EvalResult ev = evaluate(model, val_bags);
      const CurvePoint vp{epoch + 1, "val", ev.loss,
                          data.task == TaskKind::Classification ? ev.report.acc : ev.report.pcc};
      result.curve.push_back(vp);
      if (on_epoch) on_epoch(vp);
    }
    result.epochs = epoch + 1;
  }
  return result;
}

// ----------------------------- evaluation ---------------------------------

EvalResult evaluate(const FusionModel& model, const std::vector<const SampleBag*>& bags) {
  require(!bags.empty(), ErrorKind::EmptyInput, "no bags to evaluate");
  EvalResult out;
  FuseContext ctx;  // inference: no mask
  if (model.spec.task == TaskKind::Classification) {
    const Index classes = model.spec.outputs;
    out.scores.resize(static_cast<Index>(bags.size()), classes);
    double loss = 0.0;
    for (std::size_t i = 0; i < bags.size(); ++i) {
      const SampleBag& bag = *bags[i];
      require(bag.label >= 0, ErrorKind::VariantTaskMismatch,
              "classification model evaluated on unlabeled bags");
      const RowVectorD logits = bag_logits(model, bag.compound);
      loss += cross_entropy(logits, bag.label).loss;
      const RowVectorD probs = nn::softmax_rows(MatrixD(logits)).row(0);
      out.scores.row(static_cast<Index>(i)) = probs;
      out.preds.push_back(static_cast<int>(argmax_lowest(logits)));
      out.labels.push_back(bag.label);
    }
    out.loss = loss / static_cast<double>(bags.size());
    out.report.has_classification = true;
    out.report.n = static_cast<Index>(bags.size());
    out.report.acc = accuracy(out.preds, out.labels);
    try {
      out.report.auc = auc_macro(out.scores, out.labels);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateLabels) throw;
      out.report.auc = nan();
    }
    if (classes > 2) {
      for (Index c = 0; c < classes; ++c) {
        std::vector<double> col(bags.size());
        std::vector<int> bin(bags.size());
        for (std::size_t i = 0; i < bags.size(); ++i) {
          col[i] = out.scores(static_cast<Index>(i), c);
          bin[i] = out.labels[i] == c ? 1 : 0;
        }
        double value = nan();
        try {
          value = auc(col, bin);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::DegenerateLabels) throw;
        }
        out.report.per_class.push_back(value);
      }
    }
    return out;
  }

  Index total = 0;
  for (const auto* b : bags) {
    require(b->targets.rows() == b->compound.rows(), ErrorKind::VariantTaskMismatch,
            "regression model evaluated on bags without tile targets");
    total += b->compound.rows();
  }
  out.scores.resize(total, model.spec.outputs);
  MatrixD targets(total, model.spec.outputs);
  Index at = 0;
  double loss = 0.0;
  for (const auto* b : bags) {
    const MatrixD pred = regress_rows(*model.regressor, fuse_rows_infer(model, b->compound));
    for (Index r = 0; r < pred.rows(); ++r) loss += mse(pred.row(r), b->targets.row(r)).loss;
    out.scores.middleRows(at, pred.rows()) = pred;
    targets.middleRows(at, pred.rows()) = b->targets;
    at += pred.rows();
  }
  out.loss = loss / static_cast<double>(total);
  out.report.has_regression = true;
  out.report.n = total;
  out.report.pcc = mean_column_pcc(out.scores, targets, &out.report.per_class);
  return out;
}

EvalResult evaluate(const FusionModel& model, const Dataset& data, Split split) {
  require(model.spec.task == data.task, ErrorKind::VariantTaskMismatch,
          "model trained for " + to_string(model.spec.task) + " but dataset is " +
              to_string(data.task));
  const auto bags = data.in_split(split);
  require(!bags.empty(), ErrorKind::EmptyInput, "split '" + to_string(split) + "' is empty");
  return evaluate(model, bags);
}

// ----------------------------- grad check ---------------------------------

double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const FusionModel& model, const GradSample& sample, double eps,
                           const FuseContext& ctx) {
  require(eps >= 1e-6 && eps <= 1e-3, ErrorKind::InvalidArgument,
          "finite-difference step must lie in [1e-6, 1e-3]");
  FusionModel analytic = zeros_like(model);
  sample_loss(model, sample, ctx, &analytic);

  FusionModel probe = model;
  std::vector<TensorRef> probe_refs = tensors(probe);
  std::vector<TensorRef> grad_refs = tensors(analytic);
  GradCheckReport report;
  for (std::size_t b = 0; b < probe_refs.size(); ++b) {
    GradCheckBlock block;
    block.name = probe_refs[b].name;
    if (block.name.rfind("moe.gate_", 0) == 0) {
      block.skipped = true;
      report.blocks.push_back(block);
      continue;
    }
    MatrixD& p = *probe_refs[b].value;
    for (Index i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      auto at = [&](double offset) {
        p.data()[i] = saved + offset;
        return sample_loss(probe, sample, ctx);
      };
      // Five-point central stencil, O(eps^4) truncation.
      const double near = at(eps) - at(-eps);
      const double far = at(2.0 * eps) - at(-2.0 * eps);
      p.data()[i] = saved;
      const double numeric = (8.0 * near - far) / (12.0 * eps);
      const double a = grad_refs[b].value->data()[i];
      const double rel = grad_rel_error(a, numeric);
      if (rel > block.max_rel_error || block.worst_index < 0) {
        block.max_rel_error = rel;
        block.worst_index = i;
        block.analytic = a;
        block.numeric = numeric;
      }
    }
    if (block.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = block.max_rel_error;
      report.worst_block = block.name;
      report.worst_index = block.worst_index;
    }
    report.blocks.push_back(block);
  }
  return report;
}

GradCheckReport grad_check_instance(Variant variant, std::uint64_t seed, double eps,
                                    TaskKind task) {
  ModelSpec spec;
  spec.variant = {variant, variant == Variant::Single ? "s0" : ""};
  spec.task = task;
  spec.source_ids = {"s0", "s1", "s2"};
  spec.dim = 8;
  spec.tuner_hidden = 16;
  spec.attention_width = 16;
  spec.outputs = 2;
  const FusionModel model = init_model(spec, derive_key(seed, {21}));

  CounterRng rng(derive_key(seed, {22}));
  std::normal_distribution<double> normal(0.0, 1.0);
  GradSample sample;
  sample.compound.resize(4, spec.flat_width());
  for (Index i = 0; i < sample.compound.size(); ++i) sample.compound.data()[i] = normal(rng);
  if (task == TaskKind::Classification) {
    sample.label = static_cast<int>(rng() % 2);
  } else {
    sample.targets.resize(4, spec.outputs);
    for (Index i = 0; i < sample.targets.size(); ++i) sample.targets.data()[i] = normal(rng);
  }
  FuseContext ctx;
  ctx.mode = Mode::Train;
  ctx.rho = 0.2;
  ctx.mask_seed = derive_key(seed, {23});
  return grad_check(model, sample, eps, ctx);
}

}  // namespace adafusion
