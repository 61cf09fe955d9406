// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

// Prints one PASS/FAIL line per acceptance criterion and exits non-zero when
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "riformer/analysis.hpp"
#include "riformer/bench.hpp"
#include "riformer/checkpoint.hpp"
#include "riformer/config.hpp"
#include "riformer/data.hpp"
#include "riformer/experiment.hpp"
#include "riformer/imitation.hpp"
#include "riformer/reparam.hpp"
#include "riformer/train.hpp"
#include "support/gradcheck.hpp"

using namespace riformer;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(double(a.data()[i]) - b.data()[i]));
  return m;
}

Tensor randn(Shape s, std::mt19937_64& rng, float scale = 1.0f) {
  std::normal_distribution<float> g(0.0f, scale);
  Tensor t(std::move(s));
  for (float& v : t.data()) v = g(rng);
  return t;
}

void perturb(Model& m, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 0.5f);
  for (auto& b : m.blocks) {
    for (Tensor* t : {&b.s, &b.t, &b.norm1_gamma, &b.norm1_beta}) {
      if (!t->defined()) continue;
      for (float& v : t->data()) v += g(rng);
    }
    for (float& v : b.layer_scale_1.data()) v = 0.5f + 0.2f * g(rng);
    for (float& v : b.layer_scale_2.data()) v = 0.5f + 0.2f * g(rng);
  }
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

struct Run {
  std::string name;
  std::uint64_t seed = 0;
  TrainResult result;
  double final_val() const { return result.log.empty() ? result.initial_val_top1 : result.log.back().val_top1; }
};

std::string losses(const EpochLog& e) {
  std::ostringstream os;
  os << "total=" << e.loss_total;
  if (e.loss_soft) os << " soft=" << *e.loss_soft;
  if (e.loss_in_prime) os << " in'=" << *e.loss_in_prime;
  if (e.loss_out) os << " out=" << *e.loss_out;
  if (e.loss_rel) os << " rel=" << *e.loss_rel;
  return os.str();
}

// Trains (or reloads) the teacher and every student the training criteria share.
class Experiments {
 public:
  Experiments(fs::path configs, fs::path runs, bool reuse, std::vector<std::uint64_t> seeds)
      : configs_(std::move(configs)), runs_(std::move(runs)), reuse_(reuse), seeds_(std::move(seeds)) {}

  const std::vector<std::uint64_t>& seeds() const { return seeds_; }

  ExperimentConfig preset(const std::string& name) const { return load_config((configs_ / (name + ".json")).string()); }

  const Model& teacher() {
    if (!teacher_) {
      const ExperimentConfig cfg = preset("teacher_pooling");
      teacher_ = std::make_unique<Run>(get("teacher", cfg, cfg.train.seed, {}));
      std::fprintf(stderr, "teacher val top-1 %.4f\n", teacher_->final_val());
    }
    return teacher_->result.model;
  }

  const Splits& student_splits() {
    if (!splits_) {
      const ExperimentConfig cfg = preset("guideline1_ce");
      splits_ = std::make_unique<Splits>(load_splits(cfg.data));
    }
    return *splits_;
  }

  // preset: config file stem; options.max_epochs may cut the run short.
  const Run& student(const std::string& preset, std::uint64_t seed, const TrainOptions& options = {}) {
    const std::string key = preset + "_seed" + std::to_string(seed);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    ExperimentConfig cfg = this->preset(preset);
    cfg.train.seed = seed;
    const Model* t = cfg.train.recipe == Recipe::ce && !cfg.train.init_from_teacher ? nullptr : &teacher();
    Run r = get(key, cfg, seed, options, t);
    std::fprintf(stderr, "%s val top-1 %.4f (%zu epochs)\n", key.c_str(), r.final_val(), r.result.log.size());
    return cache_.emplace(key, std::move(r)).first->second;
  }

 private:
  Run get(const std::string& key, ExperimentConfig cfg, std::uint64_t seed, const TrainOptions& options,
          const Model* teacher = nullptr) {
    const fs::path dir = runs_ / key;
    Run r;
    r.name = key;
    r.seed = seed;
    if (reuse_ && fs::exists(dir / "model.ckpt") && fs::exists(dir / "log.csv")) {
      r.result.model = load_checkpoint((dir / "model.ckpt").string()).model;
      r.result.log = read_log(dir / "log.csv");
      return r;
    }
    const auto t0 = Clock::now();
    TrainOptions o = options;
    o.on_epoch = [&](const EpochLog& e) {
      if ((e.epoch + 1) % 10 == 0) std::fprintf(stderr, "  %s epoch %d val %.4f %s\n", key.c_str(), e.epoch + 1, e.val_top1, losses(e).c_str());
    };
    const Splits& splits = key == "teacher" ? teacher_splits(cfg) : student_splits();
    r.result = run_experiment(cfg, splits, o, teacher);
    cfg.train.out = dir.string();
    write_run(dir.string(), cfg, r.result);
    std::fprintf(stderr, "  %s trained in %.0f s\n", key.c_str(), seconds_since(t0));
    return r;
  }

  const Splits& teacher_splits(const ExperimentConfig& cfg) {
    teacher_split_store_ = std::make_unique<Splits>(load_splits(cfg.data));
    return *teacher_split_store_;
  }

  static std::vector<EpochLog> read_log(const fs::path& path) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    std::vector<EpochLog> log;
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (line.back() == ',') cells.emplace_back();
      EpochLog e;
      e.epoch = std::stoi(cells.at(0));
      e.lr = std::stod(cells.at(1));
      e.loss_total = std::stod(cells.at(2));
      auto opt = [&](std::size_t i) { return cells.at(i).empty() ? std::nullopt : std::optional<double>(std::stod(cells[i])); };
      e.loss_soft = opt(3);
      e.loss_in_prime = opt(4);
      e.loss_out = opt(5);
      e.loss_rel = opt(6);
      e.val_top1 = std::stod(cells.at(7));
      log.push_back(e);
    }
    return log;
  }

  fs::path configs_, runs_;
  bool reuse_;
  std::vector<std::uint64_t> seeds_;
  std::unique_ptr<Run> teacher_;
  std::unique_ptr<Splits> splits_, teacher_split_store_;
  std::map<std::string, Run> cache_;
};

Outcome fusion_exactness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2026);
  double worst = 0.0;
  int passed = 0;
  for (int i = 0; i < 100; ++i) {
    Model m = build_model(ModelSpec::nano(MixerKind::affine), static_cast<std::uint64_t>(i));
    perturb(m, rng);
    const Model d = switch_to_deploy(m);
    const EquivalenceReport r = verify_equivalence(m, d, 1, 1e-5, static_cast<std::uint64_t>(i));
    worst = std::max(worst, r.max_abs_diff);
    passed += r.pass;
  }
  const double secs = seconds_since(t0);
  return {passed == 100 && secs < 60.0,
          fmt("%d/100 models within 1e-5, worst max-abs %.3g, %.1f s", passed, worst, secs)};
}

Outcome symbolic_fusion() {
  struct Row {
    float g, b, s, t, g2, b2;
  };
  const Row rows[] = {{1, 0, 1, 0, 0, 0}, {2, 0.5f, 3, 0.1f, 4.0f, 1.1f}, {1, 0, 0, 0, -1, 0}};
  int ok = 0;
  std::string got;
  for (const auto& r : rows) {
    const FusedNorm f = fuse_affine(Tensor::from(Shape{1}, {r.g}), Tensor::from(Shape{1}, {r.b}),
                                    Tensor::from(Shape{1}, {r.s}), Tensor::from(Shape{1}, {r.t}));
    const float g2 = f.gamma_prime.data()[0], b2 = f.beta_prime.data()[0];
    ok += g2 == r.g2 && b2 == r.b2;
    got += fmt(" (%g, %g)", g2, b2);
  }
  return {ok == 3, fmt("%d/3 tabulated rows exact:%s", ok, got.c_str())};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  int failures = 0, checks = 0;
  for (const auto& c : testing::gradient_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto r = testing::check_gradient(c, seed);
      ++checks;
      failures += !(r.rel_err <= 1e-3);
      if (r.rel_err > worst) {
        worst = r.rel_err;
        worst_name = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 120.0, fmt("%d kernels x 10 seeds, %d failures, worst rel-err %.2g (%s), %.1f s",
                                             checks / 10, failures, worst, worst_name.c_str(), secs)};
}

Outcome loss_identities() {
  std::mt19937_64 rng(4);
  const Tensor f = randn(Shape{2, 8, 4, 4}, rng);
  const Tensor z = randn(Shape{4, 10}, rng, 3.0f);
  const float vals[] = {loss_in(nullptr, f, f).item(), loss_in_prime(nullptr, f, f).item(),
                        loss_out(nullptr, f, f).item(), loss_rel(nullptr, f, f).item(),
                        loss_soft(nullptr, z, z, 4.0f).item()};
  const bool zeros = std::all_of(std::begin(vals), std::end(vals), [](float v) { return v == 0.0f; });

  const Tensor g = randn(Shape{2, 8, 4, 4}, rng);
  const float base = loss_rel(nullptr, f, g).item();
  double worst_scale = 0.0;
  for (float k : {0.01f, 0.5f, 3.0f, 100.0f}) {
    worst_scale = std::max(worst_scale, double(std::fabs(loss_rel(nullptr, ops::scale(nullptr, f, k), g).item() - base)));
    worst_scale = std::max(worst_scale, double(std::fabs(loss_rel(nullptr, f, ops::scale(nullptr, g, k)).item() - base)));
  }

  // Tokens (1, 0) and (1, 1): off-diagonal entry 1/sqrt(2).
  const Tensor x = Tensor::from(Shape{1, 2, 1, 2}, {1.0f, 1.0f, 0.0f, 1.0f});
  const Tensor r = ops::relation_matrix(nullptr, x);
  const double hand = std::fabs(r.data()[1] - 1.0 / std::sqrt(2.0));
  const bool diag = std::fabs(r.data()[0] - 1.0f) <= 1e-5f && std::fabs(r.data()[3] - 1.0f) <= 1e-5f;
  return {zeros && worst_scale <= 1e-6 && hand <= 1e-5 && diag,
          fmt("identical inputs all zero: %s; rel scale drift %.2g; 1/sqrt2 error %.2g", zeros ? "yes" : "no",
              worst_scale, hand)};
}

Outcome identity_equivalence() {
  std::mt19937_64 rng(5);
  const Model affine = build_model(ModelSpec::nano(MixerKind::affine), 11);
  const Model ident = build_model(ModelSpec::nano(MixerKind::identity), 11);
  const Tensor x = randn(Shape{4, 3, 64, 64}, rng);
  const double d_affine = max_abs_diff(logits(affine, x), logits(ident, x));

  Tensor c(Shape{2, 16, 9, 7});
  std::fill(c.data().begin(), c.data().end(), 0.37f);
  const Tensor p = ops::pooling_mixer(nullptr, c, 3);
  const bool pool_zero = std::all_of(p.data().begin(), p.data().end(), [](float v) { return v == 0.0f; });

  Model teacher = build_model(ModelSpec::nano(MixerKind::pooling), 12);
  perturb(teacher, rng);
  Model student = build_model(ModelSpec::nano(MixerKind::affine), 13);
  load_from_teacher(student, teacher);
  const Tensor probe(Shape{3, 3, 64, 64}, 0.25f);
  const bool same = bit_equal(logits(student, probe), logits(teacher, probe));
  return {d_affine == 0.0 && pool_zero && same,
          fmt("affine vs identity max diff %g; pooling on constant zero: %s; loaded student logits equal: %s",
              d_affine, pool_zero ? "yes" : "no", same ? "yes" : "no")};
}

Outcome guideline_ordering(Experiments& ex) {
  const auto t0 = Clock::now();
  std::vector<double> ce, kd, mi;
  std::string per_seed;
  for (auto seed : ex.seeds()) {
    ce.push_back(ex.student("guideline1_ce", seed).final_val());
    kd.push_back(ex.student("guideline1_soft", seed).final_val());
    mi.push_back(ex.student("guideline3_MI", seed).final_val());
    per_seed += fmt(" [seed %llu: %.4f %.4f %.4f]", static_cast<unsigned long long>(seed), ce.back(), kd.back(), mi.back());
  }
  const double mce = median(ce), mkd = median(kd), mmi = median(mi);
  const bool pass = mkd - mce >= 0.01 && mmi - mkd >= 0.01;
  if (!pass) {
    for (auto seed : ex.seeds()) {
      for (const char* p : {"guideline1_ce", "guideline1_soft", "guideline3_MI"}) {
        const Run& r = ex.student(p, seed);
        std::fprintf(stderr, "  diagnosis %s: final %s\n", r.name.c_str(), losses(r.result.log.back()).c_str());
      }
    }
  }
  return {pass, fmt("median val top-1 CE %.4f < soft-KD %.4f < soft-KD+MI %.4f%s (%.0f s)", mce, mkd, mmi,
                    per_seed.c_str(), seconds_since(t0))};
}

Outcome guideline5(Experiments& ex) {
  std::vector<double> reach;
  std::string per_seed;
  const int total = ex.preset("guideline5_init").train.epochs;
  const int budget = static_cast<int>(std::floor(0.6 * total));
  for (auto seed : ex.seeds()) {
    const double target = ex.student("guideline1_soft", seed).final_val();
    TrainOptions o;
    o.max_epochs = budget;
    const Run& r = ex.student("guideline5_init", seed, o);
    double epochs = std::numeric_limits<double>::infinity();
    if (r.result.initial_val_top1 >= target) epochs = 0;
    for (const auto& e : r.result.log) {
      if (epochs == std::numeric_limits<double>::infinity() && e.val_top1 >= target) epochs = e.epoch + 1;
    }
    reach.push_back(epochs);
    per_seed += fmt(" [seed %llu: target %.4f reached after %g epochs]", static_cast<unsigned long long>(seed), target,
                    epochs);
  }
  const double m = median(reach);
  return {m <= budget, fmt("median epochs to reach soft-KD final %g <= %d of %d:%s", m, budget, total, per_seed.c_str())};
}

Outcome throughput_direction(Experiments& ex) {
  const ExperimentConfig cfg = ex.preset("guideline3_MI");
  const Model& train_form = ex.student("guideline3_MI", ex.seeds().front()).result.model;
  const Model deploy = switch_to_deploy(train_form);
  const Model& teacher = ex.teacher();
  BenchProtocol p;
  p.batch_size = cfg.bench.batch_size;
  p.resolution = cfg.bench.resolution;
  p.warmup_runs = cfg.bench.warmup_runs;
  p.timed_runs = cfg.bench.timed_runs;
  p.repeats = cfg.bench.repeats;
  const auto reports = compare_throughput({{"deploy", &deploy}, {"train", &train_form}, {"pooling", &teacher}}, p);
  const double vs_train = reports[0].images_per_s / reports[1].images_per_s;
  const double vs_pool = reports[0].images_per_s / reports[2].images_per_s;
  const auto ops_train = count_ops(train_form, p.batch_size).total();
  const auto ops_deploy = count_ops(deploy, p.batch_size).total();
  return {vs_train >= 1.02 && vs_pool >= 1.02 && ops_deploy < ops_train,
          fmt("images/s deploy %.1f, train %.1f (x%.3f), pooling %.1f (x%.3f); ops deploy %.4g < train %.4g",
              reports[0].images_per_s, reports[1].images_per_s, vs_train, reports[2].images_per_s, vs_pool,
              double(ops_deploy), double(ops_train))};
}

Tensor probe_images(Experiments& ex, int n) {
  const Dataset& val = ex.student_splits().val;
  std::vector<int> idx;
  for (int i = 0; i < n; ++i) idx.push_back(static_cast<int>((static_cast<std::int64_t>(i) * val.size()) / n));
  return val.gather(idx);
}

Outcome erf_direction(Experiments& ex) {
  const Tensor x = probe_images(ex, 16);
  std::vector<double> mi, ce;
  std::string per_seed;
  for (auto seed : ex.seeds()) {
    mi.push_back(count_above(erf_map(ex.student("guideline3_MI", seed).result.model, x), 0.01));
    ce.push_back(count_above(erf_map(ex.student("guideline1_ce", seed).result.model, x), 0.01));
    per_seed += fmt(" [seed %llu: %g vs %g]", static_cast<unsigned long long>(seed), mi.back(), ce.back());
  }
  return {median(mi) > median(ce),
          fmt("median pixels above 0.01: MI %g > CE %g%s", median(mi), median(ce), per_seed.c_str())};
}

Outcome feature_direction(Experiments& ex) {
  const Tensor x = probe_images(ex, 64);
  const Model& teacher = ex.teacher();
  std::vector<std::vector<double>> mi(4), ce(4);
  for (auto seed : ex.seeds()) {
    const Model& m = ex.student("guideline3_MI", seed).result.model;
    const Model& c = ex.student("guideline1_ce", seed).result.model;
    for (int stage = 1; stage <= 4; ++stage) {
      const Tensor ft = stage_output(teacher, x, stage);
      const Tensor fm = stage_output(m, x, stage);
      const Tensor fc = stage_output(c, x, stage);
      double lo = 0.0, hi = 0.0;
      bool first = true;
      for (const Tensor* t : {&ft, &fm, &fc}) {
        const auto [a, b] = std::minmax_element(t->data().begin(), t->data().end());
        lo = first ? *a : std::min(lo, double(*a));
        hi = first ? *b : std::max(hi, double(*b));
        first = false;
      }
      const Histogram ht = make_histogram(ft.data(), 101, lo, hi);
      mi[stage - 1].push_back(wasserstein1(make_histogram(fm.data(), 101, lo, hi), ht));
      ce[stage - 1].push_back(wasserstein1(make_histogram(fc.data(), 101, lo, hi), ht));
    }
  }
  int wins = 0;
  std::string detail;
  for (int s = 0; s < 4; ++s) {
    const double a = median(mi[s]), b = median(ce[s]);
    wins += a < b;
    detail += fmt(" [stage %d: MI %.4g vs CE %.4g]", s + 1, a, b);
  }
  return {wins >= 3, fmt("MI closer to the teacher in %d/4 stages%s", wins, detail.c_str())};
}

Outcome checkpoint_and_loader(const fs::path& scratch) {
  std::mt19937_64 rng(11);
  int exact = 0;
  const MixerKind kinds[] = {MixerKind::pooling, MixerKind::affine, MixerKind::identity, MixerKind::affine};
  for (int i = 0; i < 4; ++i) {
    Model m = build_model(ModelSpec::nano(kinds[i]), static_cast<std::uint64_t>(i));
    perturb(m, rng);
    if (i == 3) m = switch_to_deploy(m);
    const fs::path p = scratch / ("roundtrip_" + std::to_string(i) + ".ckpt");
    save_checkpoint(m, {static_cast<std::uint64_t>(i), "ce", i}, p.string());
    const Checkpoint back = load_checkpoint(p.string());
    const auto a = m.named_tensors(), b = back.model.named_tensors();
    bool same = a.size() == b.size() && back.model.spec == m.spec && back.model.deployed == m.deployed;
    for (std::size_t k = 0; same && k < a.size(); ++k) same = a[k].first == b[k].first && bit_equal(a[k].second, b[k].second);
    exact += same;
  }

  SynthSpec spec;
  spec.resolution = 32;
  spec.samples_per_class = 5;
  const RawImages raw = synth_images(spec, Split::train);
  const fs::path fixture = scratch / "data_batch_1.bin";
  write_cifar10_records(fixture.string(), raw);
  const auto bytes = fs::file_size(fixture);
  const RawImages back = read_cifar10_records(fixture.string());
  const bool loader_ok = bytes == raw.labels.size() * 3073 && back.labels == raw.labels && back.pixels == raw.pixels;
  bool truncated_rejected = false;
  fs::resize_file(fixture, bytes - 5);
  try {
    (void)read_cifar10_records(fixture.string());
  } catch (const DataError&) {
    truncated_rejected = true;
  }
  return {exact == 4 && loader_ok && truncated_rejected,
          fmt("%d/4 checkpoints bit-exact; fixture %llu bytes = %zu records x 3073, reload %s, truncation %s", exact,
              static_cast<unsigned long long>(bytes), raw.labels.size(), loader_ok ? "identical" : "differs",
              truncated_rejected ? "rejected" : "accepted")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks; one PASS/FAIL line per criterion"};
  std::string configs = std::string(RIFORMER_SOURCE_DIR) + "/configs";
  std::string runs = "acceptance_runs";
  std::vector<int> only;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  bool reuse = false;
  app.add_option("--configs", configs, "preset directory")->capture_default_str();
  app.add_option("--runs", runs, "directory for trained runs")->capture_default_str();
  app.add_option("--only", only, "criteria to run (default all)");
  app.add_option("--seeds", seeds, "student seeds")->capture_default_str();
  app.add_flag("--reuse", reuse, "load runs already present under --runs instead of training");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(runs);
  Experiments ex(configs, runs, reuse, seeds);
  const std::vector<Criterion> criteria{
      {1, "fusion exactness", fusion_exactness},
      {2, "symbolic fusion", symbolic_fusion},
      {3, "gradient suite", gradient_suite},
      {4, "loss identities", loss_identities},
      {5, "identity equivalence at init", identity_equivalence},
      {6, "guideline ordering", [&] { return guideline_ordering(ex); }},
      {7, "init from teacher convergence", [&] { return guideline5(ex); }},
      {8, "throughput direction", [&] { return throughput_direction(ex); }},
      {9, "ERF direction", [&] { return erf_direction(ex); }},
      {10, "feature distribution direction", [&] { return feature_direction(ex); }},
      {11, "checkpoint and CIFAR-10 loader", [&] { return checkpoint_and_loader(runs); }},
  };

  const auto t0 = Clock::now();
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s %s: %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %d failed, %.0f s\n", failed, seconds_since(t0));
  return failed ? 1 : 0;
}
