// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "riformer/analysis.hpp"
#include "riformer/bench.hpp"
#include "riformer/checkpoint.hpp"
#include "riformer/config.hpp"
#include "riformer/experiment.hpp"
#include "riformer/reparam.hpp"

namespace fs = std::filesystem;
using namespace riformer;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> batch;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& seed_help, const std::string& out_help) {
  cmd->add_option("--config", c.config, "experiment JSON (blocks: model, data, train, imitation, bench)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, seed_help);
  cmd->add_option("--epochs", c.epochs, "override train.epochs (imitation phases rescale)")->check(CLI::PositiveNumber);
  cmd->add_option("--batch", c.batch, "override train.batch_size and bench.batch_size")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, out_help);
}

void notice(const std::string& what) { std::cerr << "note: " << what << '\n'; }

template <typename T>
void override_value(T& slot, const std::optional<T>& flag, const std::string& name, bool from_file) {
  if (!flag) return;
  if (from_file && slot != *flag) {
    std::ostringstream os;
    os << "flag value " << *flag << " overrides " << name << " = " << slot << " from the config file";
    notice(os.str());
  }
  slot = *flag;
}

ExperimentConfig resolve(const Common& c) {
  const bool from_file = !c.config.empty();
  ExperimentConfig cfg = from_file ? load_config(c.config) : ExperimentConfig{};
  override_value(cfg.train.seed, c.seed, "train.seed", from_file);
  if (c.epochs) {
    const int old = cfg.train.epochs;
    override_value(cfg.train.epochs, c.epochs, "train.epochs", from_file);
    auto& im = cfg.imitation;
    if (old != cfg.train.epochs && old > 0) {
      im.feat_epochs = static_cast<int>(std::lround(static_cast<double>(im.feat_epochs) * cfg.train.epochs / old));
      im.rel_epochs = static_cast<int>(std::lround(static_cast<double>(im.rel_epochs) * cfg.train.epochs / old));
      im.rel_epochs = std::min(im.rel_epochs, cfg.train.epochs - im.feat_epochs);
      cfg.train.warmup_epochs = std::min(cfg.train.warmup_epochs, cfg.train.epochs - 1);
    }
    im.total_epochs = cfg.train.epochs;
  }
  if (c.batch) {
    override_value(cfg.train.batch_size, c.batch, "train.batch_size", from_file);
    cfg.bench.batch_size = *c.batch;
  }
  override_value(cfg.train.out, c.out, "train.out", from_file);
  cfg.validate();
  return cfg;
}

BenchProtocol protocol_from(const ExperimentConfig& cfg, int resolution) {
  BenchProtocol p;
  p.batch_size = cfg.bench.batch_size;
  p.resolution = resolution;
  p.warmup_runs = cfg.bench.warmup_runs;
  p.timed_runs = cfg.bench.timed_runs;
  p.repeats = cfg.bench.repeats;
  p.validate();
  return p;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

Tensor probe_images(const ExperimentConfig& cfg, const Model& model, int count) {
  if (count < 1) throw UsageError("--probes must be >= 1");
  SynthSpec s = cfg.data.synth;
  s.resolution = model.spec.input_resolution;
  s.num_classes = std::min(10, std::max(2, model.spec.num_classes));
  s.samples_per_class = (count + s.num_classes - 1) / s.num_classes;
  const Dataset d = synth_dataset(s, Split::val, cfg.data.norm);
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i;
  return d.gather(idx);
}

int do_train(const Common& c, const std::optional<std::string>& teacher, bool distill) {
  ExperimentConfig cfg = resolve(c);
  if (teacher) {
    if (!c.config.empty() && !cfg.train.teacher.empty() && cfg.train.teacher != *teacher) {
      notice("flag value " + *teacher + " overrides train.teacher = " + cfg.train.teacher + " from the config file");
    }
    cfg.train.teacher = *teacher;
  }
  if (distill && cfg.train.recipe == Recipe::ce) {
    throw UsageError("distill needs a distillation recipe (hard_kd, soft_kd or soft_kd_mi); use train for ce");
  }
  cfg.validate();
  const Splits splits = load_splits(cfg.data);
  TrainOptions opts;
  opts.on_epoch = [](const EpochLog& r) {
    std::printf("epoch %d lr %.6g loss %.6g val_top1 %.4f\n", r.epoch, r.lr, r.loss_total, r.val_top1);
    std::fflush(stdout);
  };
  const TrainResult result = run_experiment(cfg, splits, opts);
  write_run(cfg.train.out, cfg, result);
  std::printf("wrote %s (final val_top1 %.4f)\n", (fs::path(cfg.train.out) / "model.ckpt").string().c_str(),
              result.log.empty() ? result.initial_val_top1 : result.log.back().val_top1);
  return kOk;
}

int do_fuse(const std::string& in, const Common& c) {
  if (!c.out) throw UsageError("fuse needs --out");
  const Checkpoint ck = load_checkpoint(in);
  const Model deploy = switch_to_deploy(ck.model);
  save_checkpoint(deploy, ck.meta, *c.out);
  const auto before = count_ops(ck.model, 1);
  const auto after = count_ops(deploy, 1);
  std::printf("fused %zu blocks: %s -> %s (flops/image %llu -> %llu)\n", deploy.blocks.size(), in.c_str(),
              c.out->c_str(), static_cast<unsigned long long>(before.total()),
              static_cast<unsigned long long>(after.total()));
  return kOk;
}

int do_verify(const std::string& train_path, const std::string& deploy_path, int probes, double tol,
              const Common& c) {
  const Model a = load_checkpoint(train_path).model;
  const Model b = load_checkpoint(deploy_path).model;
  const EquivalenceReport r = verify_equivalence(a, b, probes, tol, c.seed.value_or(0));
  std::cout << r.to_json() << '\n';
  if (c.out) write_text(*c.out, r.to_json() + "\n");
  return r.pass ? kOk : kValidation;
}

struct BenchFlags {
  std::vector<std::string> ckpts;
  std::optional<int> warmup, runs, repeats;
  std::string raw;
};

BenchProtocol bench_protocol(const Common& c, const BenchFlags& f, const Model& first) {
  ExperimentConfig cfg = resolve(c);
  const bool from_file = !c.config.empty();
  override_value(cfg.bench.warmup_runs, f.warmup, "bench.warmup_runs", from_file);
  override_value(cfg.bench.timed_runs, f.runs, "bench.timed_runs", from_file);
  override_value(cfg.bench.repeats, f.repeats, "bench.repeats", from_file);
  cfg.validate();
  return protocol_from(cfg, first.spec.input_resolution);
}

int do_bench(const Common& c, const BenchFlags& f) {
  std::vector<Model> models;
  for (const auto& p : f.ckpts) models.push_back(load_checkpoint(p).model);
  const BenchProtocol protocol = bench_protocol(c, f, models.front());
  std::vector<std::pair<std::string, const Model*>> entries;
  for (std::size_t i = 0; i < models.size(); ++i) entries.emplace_back(fs::path(f.ckpts[i]).stem().string(), &models[i]);
  const auto reports = compare_throughput(entries, protocol);
  write_text(c.out.value_or(""), bench_csv(reports));
  if (!f.raw.empty()) write_text(f.raw, bench_json(reports) + "\n");
  return kOk;
}

int do_breakdown(const Common& c, const BenchFlags& f) {
  const Model m = load_checkpoint(f.ckpts.front()).model;
  const BenchProtocol protocol = bench_protocol(c, f, m);
  const std::string name = fs::path(f.ckpts.front()).stem().string();
  const auto rows = latency_breakdown(m, protocol, name);
  for (const auto& r : rows) {
    if (r.negative) {
      std::fprintf(stderr, "note: %s delta %.4f ms is negative (spread %.4f ms): measurement noise\n",
                   r.component.c_str(), r.delta_ms, r.delta_spread_ms);
    }
  }
  write_text(c.out.value_or(""), breakdown_csv(name, rows));
  if (!f.raw.empty()) {
    std::vector<BenchReport> reps;
    for (const auto& r : rows) reps.push_back(r.cumulative);
    write_text(f.raw, bench_json(reps) + "\n");
  }
  return kOk;
}

int do_erf(const Common& c, const std::string& ckpt, int probes, double threshold) {
  const ExperimentConfig cfg = resolve(c);
  const Model m = load_checkpoint(ckpt).model;
  const Grid g = erf_map(m, probe_images(cfg, m, probes));
  std::fprintf(stderr, "pixels above %g: %d of %d\n", threshold, count_above(g, threshold), g.h * g.w);
  write_text(c.out.value_or(""), grid_csv(g));
  return kOk;
}

int do_featdist(const Common& c, const std::string& ckpt, const std::string& reference, int stage, int bins,
                int probes) {
  const ExperimentConfig cfg = resolve(c);
  const Model m = load_checkpoint(ckpt).model;
  if (stage < 1 || stage > static_cast<int>(m.spec.stages.size())) {
    throw UsageError("--stage must be in [1, " + std::to_string(m.spec.stages.size()) + "]");
  }
  const Tensor x = probe_images(cfg, m, probes);
  if (reference.empty()) {
    write_text(c.out.value_or(""), histogram_csv(feature_histogram(m, x, stage, bins)));
    return kOk;
  }
  const Model r = load_checkpoint(reference).model;
  const Tensor a = stage_output(m, x, stage);
  const Tensor b = stage_output(r, x, stage);
  const auto [amin, amax] = std::minmax_element(a.data().begin(), a.data().end());
  const auto [bmin, bmax] = std::minmax_element(b.data().begin(), b.data().end());
  const double lo = std::min(*amin, *bmin);
  const double hi = std::max(*amax, *bmax);
  const Histogram ha = make_histogram(a.data(), bins, lo, hi);
  const Histogram hb = make_histogram(b.data(), bins, lo, hi);
  std::fprintf(stderr, "stage %d wasserstein1 %.6g\n", stage, wasserstein1(ha, hb));
  write_text(c.out.value_or(""), histogram_csv(ha));
  return kOk;
}

int do_inspect(const std::string& ckpt) {
  const Checkpoint ck = load_checkpoint(ckpt);
  nlohmann::ordered_json j;
  j["spec"] = spec_to_json(ck.model.spec);
  j["deployed"] = ck.model.deployed;
  j["metadata"] = {{"seed", ck.meta.seed}, {"recipe", ck.meta.recipe}, {"epoch", ck.meta.epoch}};
  j["parameter_count"] = ck.model.parameter_count();
  j["tensors"] = nlohmann::ordered_json::array();
  for (const auto& [name, t] : ck.model.named_tensors()) j["tensors"].push_back({{"name", name}, {"shape", t.shape().dims()}});
  std::cout << j.dump(2) << '\n';
  return kOk;
}

int do_gen_data(const Common& c, const std::string& split, int per_class, int resolution, std::optional<float> noise) {
  if (!c.out) throw UsageError("gen-data needs --out");
  const ExperimentConfig cfg = resolve(c);
  SynthSpec s = cfg.data.synth;
  if (c.seed) s.seed = *c.seed;
  if (per_class > 0) s.samples_per_class = per_class;
  s.resolution = resolution;
  if (noise) s.noise = *noise;
  if (split != "train" && split != "val") throw UsageError("--split must be train or val");
  const RawImages raw = synth_images(s, split == "train" ? Split::train : Split::val);
  if (fs::path(*c.out).has_parent_path()) fs::create_directories(fs::path(*c.out).parent_path());
  write_cifar10_records(*c.out, raw);
  std::printf("wrote %zu records of %d bytes to %s\n", raw.labels.size(), 1 + 3 * resolution * resolution,
              c.out->c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"riformer: train, distill, fuse and profile token-mixer-free MetaFormer models"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "print help for every subcommand");
  app.footer("exit codes: 0 success, 1 usage error, 2 validation failure, 3 runtime error\n"
             "environment: RIFORMER_THREADS caps kernel threads, RIFORMER_KERNELS=scalar|avx2 forces an ISA");

  Common common;
  std::optional<std::string> teacher;
  std::string in_path, train_path, deploy_path, ckpt, reference, split = "train";
  int probes = 100, stage = 1, bins = 101, per_class = 0, resolution = 32;
  double tol = 1e-5, threshold = 0.01;
  std::optional<float> noise;
  BenchFlags bf;

  auto* train = app.add_subcommand("train", "train a model from a config; writes model.ckpt, log.csv, config.json");
  add_common(train, common, "override train.seed", "run directory (overrides train.out)");
  train->add_option("--teacher", teacher, "teacher checkpoint (overrides train.teacher)");

  auto* distill = app.add_subcommand("distill", "train a student against a frozen teacher (hard_kd, soft_kd, soft_kd_mi)");
  add_common(distill, common, "override train.seed", "run directory (overrides train.out)");
  distill->add_option("--teacher", teacher, "teacher checkpoint (overrides train.teacher)");

  auto* fuse = app.add_subcommand("fuse", "fold affine mixers into the preceding norm; writes a deploy checkpoint");
  add_common(fuse, common, "unused", "deploy checkpoint path (required)");
  fuse->add_option("--in", in_path, "train-form affine checkpoint")->required()->check(CLI::ExistingFile);

  auto* verify = app.add_subcommand("verify", "compare train and deploy forms on random probes; exit 2 over tolerance");
  add_common(verify, common, "probe seed", "also write the JSON report here");
  verify->add_option("--train", train_path, "train-form checkpoint")->required()->check(CLI::ExistingFile);
  verify->add_option("--deploy", deploy_path, "deploy-form checkpoint")->required()->check(CLI::ExistingFile);
  verify->add_option("--probes", probes, "number of N(0,1) probe images")->capture_default_str();
  verify->add_option("--tol", tol, "max-abs tolerance")->capture_default_str();

  auto add_bench_flags = [&](CLI::App* cmd, bool many) {
    auto* opt = cmd->add_option("--ckpt", bf.ckpts, many ? "checkpoint to time (repeatable; repeats interleave)"
                                                         : "checkpoint to decompose")
                    ->required()
                    ->check(CLI::ExistingFile);
    if (!many) opt->expected(1);
    cmd->add_option("--warmup", bf.warmup, "override bench.warmup_runs");
    cmd->add_option("--runs", bf.runs, "override bench.timed_runs");
    cmd->add_option("--repeats", bf.repeats, "override bench.repeats (odd)");
    cmd->add_option("--raw", bf.raw, "write raw per-run timings as JSON");
  };
  auto* bench = app.add_subcommand("bench", "throughput (images/s) with the median-of-repeats protocol; CSV output");
  add_common(bench, common, "unused", "CSV path (default stdout)");
  add_bench_flags(bench, true);

  auto* breakdown = app.add_subcommand("breakdown", "per-component latency: embed, +norm, +mixer, +mlp; CSV output");
  add_common(breakdown, common, "unused", "CSV path (default stdout)");
  add_bench_flags(breakdown, false);

  auto* erf = app.add_subcommand("erf", "effective receptive field map of the final feature centre; CSV grid");
  add_common(erf, common, "unused (probe data come from data.seed)", "CSV path (default stdout)");
  erf->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  erf->add_option("--probes", probes, "number of synthetic validation images")->capture_default_str();
  erf->add_option("--threshold", threshold, "report the pixel count above this value")->capture_default_str();

  auto* featdist = app.add_subcommand("featdist", "stage-output histogram; with --reference also the 1-Wasserstein distance");
  add_common(featdist, common, "unused (probe data come from data.seed)", "CSV path (default stdout)");
  featdist->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  featdist->add_option("--reference", reference, "second checkpoint sharing the bin range")->check(CLI::ExistingFile);
  featdist->add_option("--stage", stage, "stage 1..4")->capture_default_str();
  featdist->add_option("--bins", bins, "bin count")->capture_default_str()->check(CLI::PositiveNumber);
  featdist->add_option("--probes", probes, "number of synthetic validation images")->capture_default_str();

  auto* dump = app.add_subcommand("dump-affine", "CSV of learned affine coefficients: stage, block, channel, s, t");
  add_common(dump, common, "unused", "CSV path (default stdout)");
  dump->add_option("--ckpt", ckpt, "train-form affine checkpoint")->required()->check(CLI::ExistingFile);

  auto* inspect = app.add_subcommand("inspect-ckpt", "print the checkpoint header and tensor manifest as JSON");
  add_common(inspect, common, "unused", "unused");
  inspect->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);

  auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset as CIFAR-10 style binary records");
  add_common(gen, common, "override data.seed", "record file path (required)");
  gen->add_option("--split", split, "train or val")->capture_default_str();
  gen->add_option("--per-class", per_class, "samples per class (default data.samples_per_class)");
  gen->add_option("--resolution", resolution, "image side; 32 gives 3073-byte records")->capture_default_str();
  gen->add_option("--noise", noise, "override data.noise");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return do_train(common, teacher, false);
    if (*distill) return do_train(common, teacher, true);
    if (*fuse) return do_fuse(in_path, common);
    if (*verify) return do_verify(train_path, deploy_path, probes, tol, common);
    if (*bench) return do_bench(common, bf);
    if (*breakdown) return do_breakdown(common, bf);
    if (*erf) return do_erf(common, ckpt, probes, threshold);
    if (*featdist) return do_featdist(common, ckpt, reference, stage, bins, probes);
    if (*dump) {
      write_text(common.out.value_or(""), affine_csv(dump_affine_coefficients(load_checkpoint(ckpt).model)));
      return kOk;
    }
    if (*inspect) return do_inspect(ckpt);
    if (*gen) return do_gen_data(common, split, per_class, resolution, noise);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
