// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/fusion_model.hpp"

#include "adafusion/error.hpp"

namespace adafusion {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Coarse: return "coarse";
    case Variant::Fine: return "fine";
    case Variant::Ensemble: return "ensemble";
    case Variant::EnsembleMask: return "ensemble-mask";
    case Variant::SelfAttn: return "self-attn";
    case Variant::MoeTop3: return "moe-top3";
    case Variant::Single: return "single";
  }
  return "fine";
}

bool has_tuner(Variant v) { return v == Variant::Coarse || v == Variant::Fine; }

bool uses_mask(Variant v) {
  return v == Variant::Coarse || v == Variant::Fine || v == Variant::EnsembleMask;
}

std::string VariantSpec::to_string() const {
  return kind == Variant::Single ? "single:" + single_source : variant_name(kind);
}

VariantSpec VariantSpec::parse(const std::string& text) {
  for (Variant v : {Variant::Coarse, Variant::Fine, Variant::Ensemble, Variant::EnsembleMask,
                    Variant::SelfAttn, Variant::MoeTop3}) {
    if (text == variant_name(v)) return {v, ""};
  }
  // Underscore spellings are accepted too (ensemble_mask, self_attn, moe_top3).
  std::string dashed = text;
  for (char& c : dashed)
    if (c == '_') c = '-';
  if (dashed != text) {
    for (Variant v : {Variant::EnsembleMask, Variant::SelfAttn, Variant::MoeTop3})
      if (dashed == variant_name(v)) return {v, ""};
  }
  if (text.rfind("single:", 0) == 0 && text.size() > 7) return {Variant::Single, text.substr(7)};
  fail(ErrorKind::InvalidArgument, "unknown variant '" + text + "'");
}

Index ModelSpec::fused_width() const {
  switch (variant.kind) {
    case Variant::MoeTop3: return kMoeTopK * dim;
    case Variant::Single: return dim;
    default: return flat_width();
  }
}

Index ModelSpec::single_index() const {
  for (std::size_t i = 0; i < source_ids.size(); ++i)
    if (source_ids[i] == variant.single_source) return static_cast<Index>(i);
  fail(ErrorKind::MissingSource, "single-source variant names unknown source '" +
                                     variant.single_source + "'");
}

FusionModel init_model(const ModelSpec& spec, std::uint64_t seed) {
  require(spec.sources() >= 1 && spec.dim >= 1, ErrorKind::ConfigInvalid,
          "model needs at least one source and a positive dim");
  require(spec.outputs >= 1, ErrorKind::ConfigInvalid, "model needs at least one output");
  FusionModel m;
  m.spec = spec;
  CounterRng fusion_rng(derive_key(seed, {1}));
  CounterRng head_rng(derive_key(seed, {2}));
  switch (spec.variant.kind) {
    case Variant::Coarse:
    case Variant::Fine: {
      const GateVariant gv =
          spec.variant.kind == Variant::Coarse ? GateVariant::Coarse : GateVariant::Fine;
      TunerShape shape = TunerShape::with_default_hidden(spec.sources(), spec.dim, gv);
      if (spec.tuner_hidden > 0) shape.hidden = spec.tuner_hidden;
      m.spec.tuner_hidden = shape.hidden;
      m.tuner = init_tuner(shape, fusion_rng);
      break;
    }
    case Variant::SelfAttn:
      m.self_attn = init_self_attn(spec.sources(), spec.dim, fusion_rng);
      break;
    case Variant::MoeTop3:
      m.moe = init_moe(spec.sources(), spec.dim, fusion_rng);
      break;
    case Variant::Single:
      (void)spec.single_index();
      break;
    case Variant::Ensemble:
    case Variant::EnsembleMask:
      break;
  }
  if (spec.task == TaskKind::Classification)
    m.abmil = init_abmil(spec.fused_width(), spec.attention_width, spec.outputs, head_rng);
  else
    m.regressor = init_regressor(spec.fused_width(), spec.outputs, head_rng);
  return m;
}

FusionModel zeros_like(const FusionModel& model) {
  FusionModel z = model;
  for (auto& t : tensors(z)) t.value->setZero();
  return z;
}

std::vector<TensorRef> tensors(FusionModel& m) {
  std::vector<TensorRef> out;
  auto append = [&out](std::vector<TensorRef> more) {
    out.insert(out.end(), more.begin(), more.end());
  };
  if (m.tuner) append(tensors(*m.tuner));
  if (m.self_attn) append(tensors(*m.self_attn));
  if (m.moe) append(tensors(*m.moe));
  if (m.abmil) append(tensors(*m.abmil));
  if (m.regressor) append(tensors(*m.regressor));
  return out;
}

BasicFusionModel<float> to_float(const FusionModel& m) {
  BasicFusionModel<float> f;
  f.spec = m.spec;
  if (m.tuner) f.tuner = m.tuner->cast<float>();
  if (m.self_attn) f.self_attn = m.self_attn->cast<float>();
  if (m.moe) f.moe = m.moe->cast<float>();
  if (m.abmil) f.abmil = m.abmil->cast<float>();
  if (m.regressor) f.regressor = m.regressor->cast<float>();
  return f;
}

MatrixD fuse_rows(const FusionModel& model, const MatrixD& compound_rows, const FuseContext& ctx,
                  FusionCache* cache) {
  const ModelSpec& spec = model.spec;
  require(compound_rows.cols() == spec.flat_width(), ErrorKind::ShapeMismatch,
          "compound rows have width " + std::to_string(compound_rows.cols()) + ", model expects " +
              std::to_string(spec.flat_width()));
  MatrixD input = compound_rows;
  if (ctx.mode == Mode::Train && uses_mask(spec.variant.kind))
    mask_rows_inplace(input, ctx.rho, ctx.mask_seed, ctx.step);

  MatrixD fused;
  switch (spec.variant.kind) {
    case Variant::Coarse:
    case Variant::Fine: {
      TunerCache* tc = cache ? &cache->tuner : nullptr;
      MatrixD gate = tuner_forward_rows(*model.tuner, input, tc);
      fused = input.cwiseProduct(gate);
      if (cache) cache->gate = std::move(gate);
      break;
    }
    case Variant::Ensemble:
    case Variant::EnsembleMask:
      fused = input;
      break;
    case Variant::SelfAttn:
      fused = self_attn_rows(*model.self_attn, input, cache ? &cache->self_attn : nullptr);
      break;
    case Variant::MoeTop3:
      fused = moe_rows(*model.moe, input, cache ? &cache->moe : nullptr);
      break;
    case Variant::Single:
      fused = input.middleCols(spec.single_index() * spec.dim, spec.dim);
      break;
  }
  if (cache) {
    cache->input = std::move(input);
    cache->valid = true;
  }
  return fused;
}

template <typename T>
Matrix<T> fuse_rows_infer(const BasicFusionModel<T>& model, const Matrix<T>& rows) {
  const ModelSpec& spec = model.spec;
  require(rows.cols() == spec.flat_width(), ErrorKind::ShapeMismatch, "compound row width");
  switch (spec.variant.kind) {
    case Variant::Coarse:
    case Variant::Fine:
      return rows.cwiseProduct(tuner_forward_rows(*model.tuner, rows));
    case Variant::Ensemble:
    case Variant::EnsembleMask:
      return rows;
    case Variant::SelfAttn:
      return self_attn_rows(*model.self_attn, rows);
    case Variant::MoeTop3:
      return moe_rows(*model.moe, rows);
    case Variant::Single:
      return rows.middleCols(spec.single_index() * spec.dim, spec.dim);
  }
  return rows;
}

template MatrixD fuse_rows_infer<double>(const FusionModel&, const MatrixD&);
template MatrixF fuse_rows_infer<float>(const BasicFusionModel<float>&, const MatrixF&);

MatrixD fuse_backward(const FusionModel& model, const FusionCache& cache, const MatrixD& fused_grad,
                      FusionModel& grads) {
  require(cache.valid, ErrorKind::MissingForwardCache, "fusion backward without forward cache");
  const ModelSpec& spec = model.spec;
  auto add = [](std::vector<TensorRef> into, std::vector<TensorRef> from) {
    for (std::size_t i = 0; i < into.size(); ++i) *into[i].value += *from[i].value;
  };
  MatrixD dinput;
  switch (spec.variant.kind) {
    case Variant::Coarse:
    case Variant::Fine: {
      const MatrixD dgate = fused_grad.cwiseProduct(cache.input);
      TunerGradients g = tuner_backward(*model.tuner, cache.tuner, dgate);
      add(tensors(*grads.tuner), tensors(g.params));
      dinput = fused_grad.cwiseProduct(cache.gate) + g.input;
      break;
    }
    case Variant::Ensemble:
    case Variant::EnsembleMask:
      dinput = fused_grad;
      break;
    case Variant::SelfAttn: {
      SelfAttnGradients g = self_attn_backward(*model.self_attn, cache.self_attn, fused_grad);
      add(tensors(*grads.self_attn), tensors(g.params));
      dinput = std::move(g.input);
      break;
    }
    case Variant::MoeTop3: {
      MoeGradients g = moe_backward(*model.moe, cache.moe, fused_grad);
      add(tensors(*grads.moe), tensors(g.params));
      dinput = std::move(g.input);
      break;
    }
    case Variant::Single:
      dinput = MatrixD::Zero(fused_grad.rows(), spec.flat_width());
      dinput.middleCols(spec.single_index() * spec.dim, spec.dim) = fused_grad;
      break;
  }
  return dinput;
}

template <typename T>
RowVector<T> bag_logits(const BasicFusionModel<T>& model, const Matrix<T>& compound_rows) {
  require(model.abmil.has_value(), ErrorKind::VariantTaskMismatch,
          "bag logits need a classification model");
  return abmil_logits(*model.abmil, fuse_rows_infer(model, compound_rows));
}

template RowVector<double> bag_logits<double>(const FusionModel&, const MatrixD&);
template RowVector<float> bag_logits<float>(const BasicFusionModel<float>&, const MatrixF&);

}  // namespace adafusion
