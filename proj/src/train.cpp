// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "riformer/ops.hpp"
#include "riformer/optim.hpp"

namespace riformer {

int argmax(std::span<const float> row) {
  if (row.empty()) throw ShapeError("argmax of an empty row");
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::vector<int> predict(const Model& model, const Tensor& images, int batch) {
  if (batch < 1) throw ShapeError("predict: batch must be >= 1");
  const std::int64_t n = images.dim(0);
  const std::int64_t per = images.numel() / std::max<std::int64_t>(1, n);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t start = 0; start < n; start += batch) {
    const std::int64_t m = std::min<std::int64_t>(batch, n - start);
    std::vector<float> chunk(images.data().begin() + start * per, images.data().begin() + (start + m) * per);
    Tensor x = Tensor::from(Shape{m, images.dim(1), images.dim(2), images.dim(3)}, std::move(chunk));
    const Tensor y = logits(model, x);
    const std::int64_t k = y.dim(1);
    for (std::int64_t i = 0; i < m; ++i) out.push_back(argmax(y.data().subspan(i * k, k)));
  }
  return out;
}

double evaluate(const Model& model, const Dataset& data, int batch) {
  if (data.size() == 0) throw ShapeError("evaluate: empty dataset");
  const auto pred = predict(model, data.images, batch);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

float learning_rate(const TrainConfig& cfg, std::int64_t step, std::int64_t steps_per_epoch) {
  const double peak = cfg.peak_lr();
  const double floor = cfg.min_lr;
  const std::int64_t warmup = static_cast<std::int64_t>(cfg.warmup_epochs) * steps_per_epoch;
  const std::int64_t total = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;
  if (step < warmup) return static_cast<float>(peak * static_cast<double>(step + 1) / static_cast<double>(warmup));
  const double progress = total > warmup ? static_cast<double>(step - warmup) / static_cast<double>(total - warmup) : 1.0;
  return static_cast<float>(floor + 0.5 * (peak - floor) * (1.0 + std::cos(M_PI * std::min(1.0, progress))));
}

namespace {

struct Sums {
  double total = 0.0, soft = 0.0, in_prime = 0.0, out = 0.0, rel = 0.0;
  bool has_soft = false, has_in_prime = false, has_out = false, has_rel = false;
  std::int64_t samples = 0;
};

std::string format_terms(const LossReport& r) {
  std::ostringstream os;
  os << "total=" << r.total << " soft=" << r.soft << " in_prime=" << r.in_prime << " out=" << r.out << " rel=" << r.rel;
  return os.str();
}

}  // namespace

TrainResult train(const Model& init, const Model* teacher, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg, const ImitationConfig& imitation, const TrainOptions& options) {
  if (train_set.size() == 0) throw ShapeError("train: empty training set");
  const bool needs_teacher = cfg.recipe != Recipe::ce || cfg.init_from_teacher;
  if (needs_teacher && teacher == nullptr) {
    throw ShapeError(std::string("train: recipe ") + recipe_name(cfg.recipe) + " needs a teacher");
  }
  if (teacher != nullptr && !teacher->spec.isomorphic(init.spec)) {
    throw ShapeError("train: teacher and student architectures differ");
  }
  const bool mi = cfg.recipe == Recipe::soft_kd_mi;
  ImitationConfig icfg = imitation;
  if (mi) {
    if (icfg.total_epochs != cfg.epochs) throw ShapeError("train: imitation.total_epochs must equal epochs");
    icfg.validate(init.spec);
    icfg.layers = icfg.resolved_layers(init.spec);
  }

  TrainResult result;
  result.model = init.clone();
  Model& model = result.model;
  if (cfg.init_from_teacher) load_from_teacher(model, *teacher);
  model.set_requires_grad(true);
  const auto params = model.parameters();
  AdamWConfig acfg;
  acfg.weight_decay = cfg.weight_decay;
  OptimState state = make_optim_state(params, acfg);

  result.initial_val_top1 = val_set.size() > 0 ? evaluate(model, val_set, options.eval_batch) : 0.0;

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(static_cast<std::size_t>(train_set.size()));
  std::iota(order.begin(), order.end(), 0);
  const std::int64_t steps_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::int64_t step = 0;
  Tape tape;

  const int last = options.max_epochs > 0 ? std::min(options.max_epochs, cfg.epochs) : cfg.epochs;
  for (int epoch = 0; epoch < last; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Sums sums;
    const float epoch_lr = learning_rate(cfg, step, steps_per_epoch);
    ForwardOptions capture_opts;
    if (mi && phase_for_epoch(epoch, icfg) != Phase::soft_only) {
      capture_opts.capture.insert(icfg.layers.begin(), icfg.layers.end());
    }
    for (std::int64_t start = 0; start < train_set.size(); start += cfg.batch_size, ++step) {
      const std::int64_t m = std::min<std::int64_t>(cfg.batch_size, train_set.size() - start);
      const std::span<const int> idx(order.data() + start, static_cast<std::size_t>(m));
      const Tensor x = train_set.gather(idx);
      const std::vector<int> labels = train_set.gather_labels(idx);

      ForwardResult teacher_out;
      if (cfg.recipe != Recipe::ce) {
        ForwardOptions topts;
        topts.capture = capture_opts.capture;
        teacher_out = forward(*teacher, x, topts);
      }

      tape.reset();
      ForwardOptions sopts = capture_opts;
      sopts.tape = &tape;
      sopts.training = true;
      sopts.rng = &rng;
      const ForwardResult out = forward(model, x, sopts);

      Tensor loss;
      LossReport report;
      switch (cfg.recipe) {
        case Recipe::ce:
          loss = ops::cross_entropy(&tape, out.logits, labels, cfg.label_smoothing);
          report.total = loss.item();
          break;
        case Recipe::hard_kd:
        case Recipe::soft_kd: {
          Tensor kd;
          if (cfg.recipe == Recipe::hard_kd || icfg.use_hard) {
            kd = ops::cross_entropy(&tape, out.logits, teacher_labels(teacher_out.logits));
          } else {
            kd = loss_soft(&tape, out.logits, teacher_out.logits, icfg.tau);
            report.soft = kd.item();
            report.active.insert("soft");
          }
          loss = kd;
          if (icfg.use_gt_label) {
            loss = ops::add(&tape, ops::scale(&tape, kd, 0.5f),
                            ops::scale(&tape, ops::cross_entropy(&tape, out.logits, labels), 0.5f));
          }
          report.total = loss.item();
          break;
        }
        case Recipe::soft_kd_mi: {
          ImitationLoss il = total_loss(&tape, out, teacher_out, epoch, icfg, cfg.batch_size);
          loss = il.total;
          report = il.report;
          if (icfg.use_gt_label) {
            loss = ops::add(&tape, ops::sub(&tape, loss, ops::scale(&tape, il.soft, 0.5f)),
                            ops::scale(&tape, ops::cross_entropy(&tape, out.logits, labels), 0.5f));
            report.total = loss.item();
          }
          break;
        }
      }
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           ": " + format_terms(report));
      }
      tape.backward(loss);
      state.config.lr = learning_rate(cfg, step, steps_per_epoch);
      adamw_step(params, state);
      model.zero_grad();

      const double w = static_cast<double>(m);
      sums.samples += m;
      sums.total += w * report.total;
      if (report.active.count("soft")) sums.has_soft = true, sums.soft += w * report.soft;
      if (report.active.count("in_prime")) sums.has_in_prime = true, sums.in_prime += w * report.in_prime;
      if (report.active.count("out")) sums.has_out = true, sums.out += w * report.out;
      if (report.active.count("rel")) sums.has_rel = true, sums.rel += w * report.rel;
    }
    EpochLog row;
    row.epoch = epoch;
    row.lr = epoch_lr;
    const double n = static_cast<double>(sums.samples);
    row.loss_total = sums.total / n;
    if (sums.has_soft) row.loss_soft = sums.soft / n;
    if (sums.has_in_prime) row.loss_in_prime = sums.in_prime / n;
    if (sums.has_out) row.loss_out = sums.out / n;
    if (sums.has_rel) row.loss_rel = sums.rel / n;
    row.val_top1 = val_set.size() > 0 ? evaluate(model, val_set, options.eval_batch) : 0.0;
    result.log.push_back(row);
    if (options.on_epoch) options.on_epoch(row);
  }
  model.set_requires_grad(false);
  for (auto& [name, t] : model.named_tensors()) {
    Tensor copy = t;
    copy.clear_grad();
  }
  return result;
}

std::string log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,lr,loss_total,loss_soft,loss_in_prime,loss_out,loss_rel,val_top1\n";
  auto opt = [&](const std::optional<double>& v) {
    os << ',';
    if (v) os << *v;
  };
  for (const auto& r : log) {
    os << r.epoch << ',' << r.lr << ',' << r.loss_total;
    opt(r.loss_soft);
    opt(r.loss_in_prime);
    opt(r.loss_out);
    opt(r.loss_rel);
    os << ',' << r.val_top1 << '\n';
  }
  return os.str();
}

void write_log_csv(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << log_csv(log);
}

}  // namespace riformer
