// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/imitation.hpp"

#include <algorithm>

#include "riformer/ops.hpp"

namespace riformer {

void ImitationConfig::validate(const ModelSpec& spec) const {
  if (!(tau > 0.0f)) throw ShapeError("imitation.tau must be > 0");
  if (lambda1_b < 0.0f || lambda2_b < 0.0f || lambda3_b < 0.0f) throw ShapeError("imitation lambdas must be >= 0");
  if (feat_epochs < 0 || rel_epochs < 0 || total_epochs < 1) throw ShapeError("imitation epochs must be >= 0");
  if (feat_epochs + rel_epochs > total_epochs) {
    throw ShapeError("imitation.feat_epochs + rel_epochs exceeds total_epochs");
  }
  const std::vector<int> l = resolved_layers(spec);
  const bool any = lambda1_b > 0.0f || lambda2_b > 0.0f || lambda3_b > 0.0f;
  if (any && l.empty()) throw ShapeError("imitation: empty layer set with nonzero lambda");
}

std::vector<int> ImitationConfig::resolved_layers(const ModelSpec& spec) const {
  if (layers.empty()) return select_layers(spec, layer_count);
  for (int idx : layers) {
    if (idx < 0 || idx >= spec.total_blocks()) {
      throw ShapeError("imitation.layers: block index " + std::to_string(idx) + " out of range");
    }
  }
  std::vector<int> out = layers;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Phase phase_for_epoch(int epoch, const ImitationConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.total_epochs) {
    throw ShapeError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.total_epochs) + ")");
  }
  if (epoch < cfg.feat_epochs) return Phase::feat;
  if (epoch < cfg.feat_epochs + cfg.rel_epochs) return Phase::rel;
  return Phase::soft_only;
}

const char* phase_name(Phase phase) {
  switch (phase) {
    case Phase::feat: return "feat";
    case Phase::rel: return "rel";
    case Phase::soft_only: return "soft";
  }
  return "?";
}

Tensor loss_in(Tape* tape, const Tensor& a, const Tensor& b) { return ops::mse(tape, a, b); }
Tensor loss_in_prime(Tape* tape, const Tensor& a, const Tensor& b) { return ops::mse(tape, a, b); }
Tensor loss_out(Tape* tape, const Tensor& a, const Tensor& b) { return ops::mse(tape, a, b); }

Tensor loss_rel(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "loss_rel");
  return ops::mse(tape, ops::relation_matrix(tape, a), ops::relation_matrix(tape, b));
}

Tensor loss_soft(Tape* tape, const Tensor& student_logits, const Tensor& teacher_logits, float tau) {
  require_same_shape(student_logits, teacher_logits, "loss_soft");
  if (!(tau > 0.0f)) throw ShapeError("loss_soft: tau must be > 0");
  const Tensor log_q = ops::log_softmax(tape, ops::scale(tape, student_logits, 1.0f / tau));
  const Tensor log_p = ops::log_softmax(tape, ops::scale(tape, teacher_logits, 1.0f / tau));
  return ops::scale(tape, ops::kl_div_log(tape, log_q, log_p), tau * tau);
}

namespace {

const BlockCapture& capture_at(const ForwardResult& r, int layer, const char* who) {
  const auto it = r.blocks.find(layer);
  if (it == r.blocks.end()) {
    throw ShapeError(std::string("total_loss: ") + who + " capture missing for block " + std::to_string(layer));
  }
  return it->second;
}

// Adds weight * sum(terms) to total; returns the unweighted sum for reporting.
double add_term(Tape* tape, Tensor& total, const std::vector<Tensor>& terms, float weight) {
  if (terms.empty()) return 0.0;
  Tensor acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ops::add(tape, acc, terms[i]);
  total = ops::add(tape, total, ops::scale(tape, acc, weight));
  return acc.item();
}

}  // namespace

std::vector<int> teacher_labels(const Tensor& teacher_logits) {
  require_rank(teacher_logits, 2, "teacher_labels");
  const std::int64_t k = teacher_logits.dim(1);
  std::vector<int> out;
  for (std::int64_t i = 0; i < teacher_logits.dim(0); ++i) {
    const float* row = teacher_logits.ptr() + i * k;
    out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
  }
  return out;
}

ImitationLoss total_loss(Tape* tape, const ForwardResult& student, const ForwardResult& teacher, int epoch,
                         const ImitationConfig& cfg, int batch_size) {
  if (batch_size < 1) throw ShapeError("total_loss: batch size must be >= 1");
  const Phase phase = phase_for_epoch(epoch, cfg);
  ImitationLoss out;
  if (cfg.use_hard) {
    const auto labels = teacher_labels(teacher.logits);
    out.soft = ops::cross_entropy(tape, student.logits, labels);
  } else {
    out.soft = loss_soft(tape, student.logits, teacher.logits, cfg.tau);
  }
  out.total = out.soft;
  out.report.soft = out.soft.item();
  out.report.active.insert("soft");
  const float b = static_cast<float>(batch_size);
  std::vector<int> layers = cfg.layers;
  if (layers.empty()) {
    for (const auto& [idx, cap] : student.blocks) layers.push_back(idx);
  }
  if (phase == Phase::feat) {
    std::vector<Tensor> in, in_prime, mixer;
    for (int l : layers) {
      const BlockCapture& s = capture_at(student, l, "student");
      const BlockCapture& t = capture_at(teacher, l, "teacher");
      if (cfg.use_loss_in) in.push_back(loss_in(tape, s.norm_out, t.norm_out));
      in_prime.push_back(loss_in_prime(tape, s.output, t.output));
      mixer.push_back(loss_out(tape, s.mixer_out, t.mixer_out));
    }
    if (cfg.use_loss_in && cfg.lambda1_b > 0.0f) {
      out.report.in = add_term(tape, out.total, in, cfg.lambda1_b / b);
      out.report.active.insert("in");
    }
    if (cfg.lambda1_b > 0.0f) {
      out.report.in_prime = add_term(tape, out.total, in_prime, cfg.lambda1_b / b);
      out.report.active.insert("in_prime");
    }
    if (cfg.lambda2_b > 0.0f) {
      out.report.out = add_term(tape, out.total, mixer, cfg.lambda2_b / b);
      out.report.active.insert("out");
    }
  } else if (phase == Phase::rel && cfg.lambda3_b > 0.0f) {
    std::vector<Tensor> rel;
    for (int l : layers) {
      rel.push_back(loss_rel(tape, capture_at(student, l, "student").output, capture_at(teacher, l, "teacher").output));
    }
    out.report.rel = add_term(tape, out.total, rel, cfg.lambda3_b / b);
    out.report.active.insert("rel");
  }
  out.report.total = out.total.item();
  return out;
}

std::vector<int> select_layers(const ModelSpec& spec, int count) {
  const int total = spec.total_blocks();
  if (count < 1 || count > total) {
    throw ShapeError("select_layers: count " + std::to_string(count) + " not in [1, " + std::to_string(total) + "]");
  }
  std::vector<int> out;
  if (count == 4 && spec.stages.size() == 4) {
    int last = -1;
    for (const auto& st : spec.stages) {
      last += st.depth;
      out.push_back(last);
    }
    return out;
  }
  for (int i = 1; i <= count; ++i) out.push_back((i * total + count - 1) / count - 1);
  return out;
}

void load_from_teacher(Model& student, const Model& teacher) {
  if (!student.spec.isomorphic(teacher.spec)) throw ShapeError("load_from_teacher: specs are not isomorphic");
  if (teacher.spec.mixer != MixerKind::pooling) throw ShapeError("load_from_teacher: teacher must use pooling");
  if (student.spec.mixer != MixerKind::affine) throw ShapeError("load_from_teacher: student must use affine");
  if (student.deployed || teacher.deployed) throw ShapeError("load_from_teacher: deployed models are not supported");
  auto copy = [](Tensor& dst, const Tensor& src) {
    require_same_shape(dst, src, "load_from_teacher");
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
  };
  for (std::size_t i = 0; i < student.embed_w.size(); ++i) {
    copy(student.embed_w[i], teacher.embed_w[i]);
    copy(student.embed_b[i], teacher.embed_b[i]);
  }
  for (std::size_t i = 0; i < student.blocks.size(); ++i) {
    BlockWeights& s = student.blocks[i];
    const BlockWeights& t = teacher.blocks[i];
    copy(s.norm1_gamma, t.norm1_gamma);
    copy(s.norm1_beta, t.norm1_beta);
    copy(s.norm2_gamma, t.norm2_gamma);
    copy(s.norm2_beta, t.norm2_beta);
    copy(s.mlp_w1, t.mlp_w1);
    copy(s.mlp_b1, t.mlp_b1);
    copy(s.mlp_w2, t.mlp_w2);
    copy(s.mlp_b2, t.mlp_b2);
    copy(s.layer_scale_1, t.layer_scale_1);
    copy(s.layer_scale_2, t.layer_scale_2);
  }
  copy(student.norm_gamma, teacher.norm_gamma);
  copy(student.norm_beta, teacher.norm_beta);
  copy(student.head_w, teacher.head_w);
  copy(student.head_b, teacher.head_b);
}

}  // namespace riformer
