// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion_cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "adafusion/checkpoint.hpp"
#include "adafusion/embedding_ops.hpp"
#include "adafusion/interp_export.hpp"
#include "adafusion/synthbench.hpp"
#include "adafusion/throughput.hpp"

namespace adafusion::cli {
namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoFailure, "cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<FeatureTable> pool_all(const std::vector<FeatureTable>& tables, Index dim, int threads) {
  std::vector<FeatureTable> pooled(tables.size());
  std::vector<std::exception_ptr> errors(tables.size());
  auto work = [&](std::size_t i) {
    try {
      pooled[i] = pool_table(tables[i], dim);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(tables.size(), static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < tables.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < tables.size(); i += workers) work(i);
      });
    for (auto& t : pool) t.join();
  }
  // Report the first failing source in manifest order.
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return pooled;
}

void check_sources(const ModelSpec& spec, const Dataset& data) {
  require(spec.source_ids == data.source_ids, ErrorKind::MissingSource,
          "checkpoint sources do not match the manifest's sources");
  require(spec.task == data.task, ErrorKind::VariantTaskMismatch,
          "checkpoint was trained for " + to_string(spec.task) + " but the manifest is " +
              to_string(data.task));
}

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFiniteLoss: return kNumeric;
    case ErrorKind::IoFailure:
    case ErrorKind::BadMagic:
    case ErrorKind::UnsupportedVersion:
    case ErrorKind::TruncatedFile: return kIo;
    default: return kValidation;
  }
}

Dataset load_dataset(const fs::path& manifest_path, Index dim, int threads) {
  const DatasetManifest manifest = read_manifest(manifest_path);
  std::vector<FeatureTable> tables = load_tables(manifest);
  if (dim > 0) {
    const bool all_match = std::all_of(tables.begin(), tables.end(),
                                       [&](const FeatureTable& t) { return t.dim() == dim; });
    if (!all_match) tables = pool_all(tables, dim, threads);
  }
  return build_dataset(manifest, tables);
}

// ------------------------------- pool --------------------------------------

void cmd_pool(const PoolOptions& o, std::ostream& out) {
  DatasetManifest manifest = read_manifest(o.manifest);
  const auto pooled = pool_all(load_tables(manifest), o.dim, o.threads);
  ensure_dir(o.out);
  for (std::size_t s = 0; s < pooled.size(); ++s) {
    auto& src = manifest.sources[s];
    src.path = o.out / (src.descriptor.source_id + ".pft");
    src.descriptor.native_dim = o.dim;
    write_feature_table(pooled[s], src.path);
    out << "pooled " << src.descriptor.source_id << " -> " << src.path.string() << " (d=" << o.dim
        << ")\n";
  }
  write_manifest(manifest, o.out / "manifest.json");
}

// ------------------------------- train -------------------------------------

void cmd_train(const TrainOptions& o, std::ostream& out) {
  TrainConfig cfg;
  cfg.variant = VariantSpec::parse(o.variant);
  cfg.learning_rate = o.lr;
  cfg.weight_decay = o.wd;
  cfg.rho = o.rho;
  cfg.epochs = o.epochs;
  cfg.batch = o.batch;
  cfg.tuner_hidden = o.hidden;
  cfg.seed = o.seed;
  cfg.validate();
  const Dataset data = load_dataset(o.manifest, o.dim, o.threads);
  cfg.dim = data.dim;
  ensure_dir(o.out);

  std::string curve = "epoch,split,loss,metric\n";
  const TrainResult result = train(data, cfg, [&](const CurvePoint& p) {
    curve += std::to_string(p.epoch) + "," + p.split + "," + fmt17(p.loss) + "," + fmt17(p.metric) + "\n";
    if (!o.quiet) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "epoch %3d %-5s loss %.6f %s %.4f\n", p.epoch, p.split.c_str(),
                    p.loss, data.task == TaskKind::Classification ? "acc" : "pcc", p.metric);
      out << buf;
    }
  });
  ModelCheckpoint ckpt{result.model, result.adam, cfg, result.epochs};
  save_checkpoint(o.out / "checkpoint.adfc", ckpt);
  write_text(o.out / "loss_curve.csv", curve);
  out << "wrote " << (o.out / "checkpoint.adfc").string() << "\n";
}

// -------------------------------- eval -------------------------------------

MetricReport cmd_eval(const EvalOptions& o, std::ostream& out) {
  const ModelCheckpoint ckpt = load_checkpoint(o.checkpoint);
  const Split split = parse_split(o.split);
  const Dataset data = load_dataset(o.manifest, ckpt.model.spec.dim, o.threads);
  check_sources(ckpt.model.spec, data);
  const EvalResult ev = evaluate(ckpt.model, data, split);
  const MetricReport& m = ev.report;

  std::string csv = "metric,value\n";
  csv += "split," + o.split + "\n";
  csv += "n," + std::to_string(m.n) + "\n";
  csv += "loss," + fmt17(ev.loss) + "\n";
  if (m.has_classification) {
    csv += "acc," + fmt17(m.acc) + "\n";
    csv += "auc," + fmt17(m.auc) + "\n";
    for (std::size_t c = 0; c < m.per_class.size(); ++c)
      csv += "auc_class" + std::to_string(c) + "," + fmt17(m.per_class[c]) + "\n";
  }
  if (m.has_regression) {
    csv += "pcc," + fmt17(m.pcc) + "\n";
    for (std::size_t g = 0; g < m.per_class.size(); ++g)
      csv += "pcc_target" + std::to_string(g) + "," + fmt17(m.per_class[g]) + "\n";
  }
  ensure_dir(o.out);
  write_text(o.out / "metrics.csv", csv);
  out << csv;
  return m;
}

// ------------------------------- contrib -----------------------------------

void cmd_contrib(const ContribOptions& o, std::ostream& out) {
  const ModelCheckpoint ckpt = load_checkpoint(o.checkpoint);
  require(has_tuner(ckpt.model.spec.variant.kind), ErrorKind::VariantHasNoTuner,
          "variant '" + ckpt.model.spec.variant.to_string() + "' has no prompt tuner");
  const Dataset data = load_dataset(o.manifest, ckpt.model.spec.dim, o.threads);
  check_sources(ckpt.model.spec, data);

  std::vector<const SampleBag*> bags;
  if (!o.slide.empty()) {
    for (const auto& b : data.bags)
      if (b.slide_id == o.slide) bags.push_back(&b);
    require(!bags.empty(), ErrorKind::InvalidArgument, "no slide named '" + o.slide + "'");
  } else {
    bags = data.in_split(parse_split(o.split));
  }
  require(!bags.empty(), ErrorKind::EmptyMap, "no bags selected");

  std::vector<ContributionMap> maps;
  for (const auto* b : bags) maps.push_back(compute_contribution_map(ckpt.model, *b));
  ensure_dir(o.out / "heatmaps");
  write_contribution_csv(maps, o.out / "contributions.csv");
  for (const auto& m : maps) {
    write_ppm(render_heatmap(m, HeatmapMode::Argmax, 0, o.block),
              o.out / "heatmaps" / (m.slide_id + "_argmax.ppm"));
    if (o.per_source)
      for (std::size_t s = 0; s < m.source_ids.size(); ++s)
        write_ppm(render_heatmap(m, HeatmapMode::PerSource, static_cast<int>(s), o.block),
                  o.out / "heatmaps" / (m.slide_id + "_" + m.source_ids[s] + ".ppm"));
  }
  out << "wrote " << maps.size() << " contribution maps to " << o.out.string() << "\n";
}

// -------------------------------- synth ------------------------------------

void cmd_synth(const SynthOptions& o, std::ostream& out) {
  SynthConfig cfg = o.cfg;
  cfg.task = parse_task_kind(o.task);
  cfg.native_dims.assign(static_cast<std::size_t>(std::max(cfg.sources, 0)), o.native_dim);
  SynthDataset data = generate_synthetic(cfg, o.threads);
  write_synthetic(data, o.out);
  out << "wrote " << data.manifest.slides.size() << " slides, " << data.planted.size()
      << " tiles, " << data.tables.size() << " sources to " << o.out.string() << "\n";
}

// ------------------------------ bench-fps ----------------------------------

void cmd_bench_fps(const BenchOptions& o, std::ostream& out) {
  require(o.step > 0 && o.min_tiles > 0 && o.max_tiles >= o.min_tiles, ErrorKind::ConfigInvalid,
          "bag size range must be positive and increasing");
  ThroughputConfig cfg;
  cfg.methods.clear();
  for (const auto& v : o.variants) cfg.methods.push_back(VariantSpec::parse(v));
  cfg.dim = o.dim;
  cfg.sources = o.sources;
  cfg.repeats = o.repeats;
  cfg.chunk = o.chunk;
  cfg.seed = o.seed;
  cfg.bag_sizes.clear();
  for (Index n = o.min_tiles; n <= o.max_tiles; n += o.step) cfg.bag_sizes.push_back(n);
  ensure_dir(o.out);
  const auto reports = throughput_bench(cfg, [&](const std::string& m, Index tiles, double fps) {
    out << m << " " << tiles << " tiles: " << fps << " FPS\n";
    out.flush();
  });
  write_text(o.out / "throughput.csv", throughput_csv(reports));
  const std::string table = throughput_table(reports);
  write_text(o.out / "throughput.txt", table);
  out << table;
}

// ------------------------------ gradcheck ----------------------------------

double cmd_gradcheck(const GradcheckOptions& o, std::ostream& out) {
  require(o.seeds >= 1, ErrorKind::InvalidArgument, "--seeds must be >= 1");
  const TaskKind task = parse_task_kind(o.task);
  double worst = 0.0;
  std::string report = "variant,seed,max_rel_error,worst_block,worst_index\n";
  for (const auto& name : o.variants) {
    const VariantSpec v = VariantSpec::parse(name);
    double variant_worst = 0.0;
    for (int i = 0; i < o.seeds; ++i) {
      const std::uint64_t seed = o.seed + static_cast<std::uint64_t>(i);
      const GradCheckReport r = grad_check_instance(v.kind, seed, o.eps, task);
      report += v.to_string() + "," + std::to_string(seed) + "," + fmt17(r.max_rel_error) + "," +
                r.worst_block + "," + std::to_string(r.worst_index) + "\n";
      variant_worst = std::max(variant_worst, r.max_rel_error);
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-14s max relative error %.3e\n", v.to_string().c_str(),
                  variant_worst);
    out << buf;
    worst = std::max(worst, variant_worst);
  }
  ensure_dir(o.out);
  write_text(o.out / "gradcheck.csv", report);
  char buf[96];
  std::snprintf(buf, sizeof buf, "max relative error %.3e (tolerance %.1e)\n", worst, o.tolerance);
  out << buf;
  return worst;
}

// --------------------------------- run -------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prompt-guided multi-source embedding fusion", "adafusion"};
  app.require_subcommand(1);
  app.allow_extras(false);

  PoolOptions pool;
  TrainOptions tr;
  EvalOptions ev;
  ContribOptions co;
  SynthOptions sy;
  BenchOptions be;
  GradcheckOptions gc;

  app.set_config("--config", "", "Replay a run_config.toml written by an earlier run");
  auto add_config = [](CLI::App* sub) { sub->configurable(); };

  auto* p = app.add_subcommand("pool", "Mean-pool every source to a common dim d");
  p->add_option("--manifest", pool.manifest, "Dataset manifest")->required();
  p->add_option("--out", pool.out, "Output directory")->required();
  p->add_option("--d", pool.dim, "Target dim")->capture_default_str();
  p->add_option("--threads", pool.threads, "Worker threads")->capture_default_str();
  add_config(p);

  auto* t = app.add_subcommand("train", "Train a fusion variant and its task head");
  t->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--variant", tr.variant,
                "coarse|fine|ensemble|ensemble-mask|self-attn|moe-top3|single:<source_id>")
      ->capture_default_str();
  t->add_option("--d", tr.dim, "Pool to this dim first (0: tables must share a dim)")
      ->capture_default_str();
  t->add_option("--rho", tr.rho, "Mask probability")->capture_default_str();
  t->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
  t->add_option("--wd", tr.wd, "Decoupled weight decay")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "Epochs (0: 50 classification, 20 regression)")
      ->capture_default_str();
  t->add_option("--batch", tr.batch, "Bags (classification) or tiles (regression) per step; 0: 1 / 256")
      ->capture_default_str();
  t->add_option("--hidden", tr.hidden, "Tuner hidden width (0: N*d/2)")->capture_default_str();
  t->add_option("--seed", tr.seed, "Seed")->capture_default_str();
  t->add_option("--threads", tr.threads, "Threads for pooling; training itself is serial")
      ->capture_default_str();
  t->add_flag("--quiet", tr.quiet, "No per-epoch output");
  add_config(t);

  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--split", ev.split, "train|val|test")->capture_default_str();
  e->add_option("--threads", ev.threads, "Threads for pooling")->capture_default_str();
  add_config(e);

  auto* c = app.add_subcommand("contrib", "Export per-tile source contribution maps");
  c->add_option("--checkpoint", co.checkpoint, "Checkpoint file (coarse or fine)")->required();
  c->add_option("--manifest", co.manifest, "Dataset manifest")->required();
  c->add_option("--out", co.out, "Output directory")->required();
  c->add_option("--split", co.split, "train|val|test")->capture_default_str();
  c->add_option("--slide", co.slide, "Only this slide");
  c->add_option("--block", co.block, "Pixels per tile edge")->capture_default_str();
  c->add_flag("--per-source", co.per_source, "Also write one grayscale map per source");
  c->add_option("--threads", co.threads, "Threads for pooling")->capture_default_str();
  add_config(c);

  auto* s = app.add_subcommand("synth", "Generate a planted-specialization synthetic dataset");
  s->add_option("--out", sy.out, "Output directory")->required();
  s->add_option("--task", sy.task, "classification|regression")->capture_default_str();
  s->add_option("--sources", sy.cfg.sources, "Number of sources")->capture_default_str();
  s->add_option("--phenotypes", sy.cfg.phenotypes, "Number of phenotypes")->capture_default_str();
  s->add_option("--bags-per-class", sy.cfg.bags_per_class, "Bags per class")->capture_default_str();
  s->add_option("--min-tiles", sy.cfg.min_tiles, "Fewest tiles per bag")->capture_default_str();
  s->add_option("--max-tiles", sy.cfg.max_tiles, "Most tiles per bag")->capture_default_str();
  s->add_option("--classes", sy.cfg.classes, "Classes")->capture_default_str();
  s->add_option("--targets", sy.cfg.targets, "Regression targets")->capture_default_str();
  s->add_option("--native-dim", sy.native_dim, "Raw dim of every source")->capture_default_str();
  s->add_option("--signal", sy.cfg.signal, "Signal strength")->capture_default_str();
  s->add_option("--noise", sy.cfg.noise, "Noise sigma")->capture_default_str();
  s->add_option("--marker", sy.cfg.marker, "Informative-source marker shift")->capture_default_str();
  s->add_option("--purity", sy.cfg.tile_purity, "P(tile class == slide class)")->capture_default_str();
  s->add_option("--test-fraction", sy.cfg.test_fraction, "Fraction of slides in test")
      ->capture_default_str();
  s->add_option("--seed", sy.cfg.seed, "Seed")->capture_default_str();
  s->add_option("--threads", sy.threads, "Worker threads (output does not depend on it)")
      ->capture_default_str();
  add_config(s);

  auto* b = app.add_subcommand("bench-fps", "Inference throughput over bag sizes");
  b->add_option("--out", be.out, "Output directory")->required();
  b->add_option("--variant", be.variants, "Methods to time")->capture_default_str();
  b->add_option("--d", be.dim, "Unified dim")->capture_default_str();
  b->add_option("--sources", be.sources, "Number of sources")->capture_default_str();
  b->add_option("--min-tiles", be.min_tiles, "Smallest bag")->capture_default_str();
  b->add_option("--max-tiles", be.max_tiles, "Largest bag")->capture_default_str();
  b->add_option("--step", be.step, "Bag size step")->capture_default_str();
  b->add_option("--repeats", be.repeats, "Timed repeats per bag size (median)")->capture_default_str();
  b->add_option("--chunk", be.chunk, "Tiles fused per block")->capture_default_str();
  b->add_option("--seed", be.seed, "Seed")->capture_default_str();
  add_config(b);

  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient check on tiny instances");
  g->add_option("--out", gc.out, "Output directory")->capture_default_str();
  g->add_option("--variant", gc.variants, "Variants to check")->capture_default_str();
  g->add_option("--task", gc.task, "classification|regression")->capture_default_str();
  g->add_option("--seed", gc.seed, "First seed")->capture_default_str();
  g->add_option("--seeds", gc.seeds, "Number of seeds")->capture_default_str();
  g->add_option("--eps", gc.eps, "Finite-difference step")->capture_default_str();
  g->add_option("--tolerance", gc.tolerance, "Pass threshold")->capture_default_str();
  add_config(g);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kOk : kValidation;
  }

  CLI::App* sub = app.get_subcommands().front();
  auto echo = [&](const fs::path& dir) {
    ensure_dir(dir);
    const std::string text = "[" + sub->get_name() + "]\n" + sub->config_to_str(true, false);
    write_text(dir / kConfigEcho, text);
  };

  try {
    if (sub == p) {
      echo(pool.out);
      cmd_pool(pool, out);
    } else if (sub == t) {
      echo(tr.out);
      cmd_train(tr, out);
    } else if (sub == e) {
      echo(ev.out);
      cmd_eval(ev, out);
    } else if (sub == c) {
      echo(co.out);
      cmd_contrib(co, out);
    } else if (sub == s) {
      echo(sy.out);
      cmd_synth(sy, out);
    } else if (sub == b) {
      echo(be.out);
      cmd_bench_fps(be, out);
    } else if (sub == g) {
      echo(gc.out);
      const double worst = cmd_gradcheck(gc, out);
      if (!(worst < gc.tolerance)) {
        err << "gradient check failed\n";
        return kNumeric;
      }
    }
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code_for(ex.kind());
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return kOk;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace adafusion::cli
