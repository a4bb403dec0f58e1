// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "fashionmt/error.hpp"

namespace fashionmt {

using ad::Tensor;

namespace {

void require_square(const Tensor& s, const char* op) {
  if (s.rank() != 2 || s.dim(0) != s.dim(1)) {
    fail(ErrorKind::kShapeMismatch,
         std::string(op) + ": square matrix expected, got " + ad::shape_str(s.shape()));
  }
  if (s.dim(0) < 2) {
    fail(ErrorKind::kInvalidArgument, std::string(op) + ": batch size must be >= 2");
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShapeMismatch, std::string(op) + ": " + ad::shape_str(a.shape()) +
                                        " vs " + ad::shape_str(b.shape()));
  }
}

Tensor diagonal_mean_nll(const Tensor& logits) {
  const std::size_t b = logits.dim(0);
  std::vector<std::size_t> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = i;
  return ad::neg(ad::mean_all(ad::pick(ad::log_softmax(logits, 1), diag)));
}

std::vector<double> target_weights(std::span<const std::size_t> targets,
                                   std::size_t pad_id) {
  std::vector<double> w(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) w[i] = targets[i] == pad_id ? 0.0 : 1.0;
  return w;
}

}  // namespace

Tensor scaled_similarity(const Tensor& x, const Tensor& y, const Tensor& log_tau) {
  return ad::mul(ad::matmul(x, ad::transpose(y)), ad::exp(ad::neg(log_tau)));
}

Tensor info_nce_logits(const Tensor& logits) {
  require_square(logits, "info_nce");
  return diagonal_mean_nll(logits);
}

Tensor info_nce(const Tensor& sims, double tau) {
  if (!(tau > 0.0)) fail(ErrorKind::kInvalidArgument, "info_nce: temperature must be > 0");
  return info_nce_logits(ad::scale(sims, 1.0 / tau));
}

Tensor info_nce(const Tensor& sims, const Tensor& log_tau) {
  return info_nce_logits(ad::mul(sims, ad::exp(ad::neg(log_tau))));
}

Tensor xmr_loss(const Tensor& image_embs, const Tensor& text_embs, const Tensor& log_tau) {
  require_same_shape(image_embs, text_embs, "xmr_loss");
  const Tensor logits = scaled_similarity(image_embs, text_embs, log_tau);
  require_square(logits, "xmr_loss");
  return ad::scale(ad::add(diagonal_mean_nll(logits),
                           diagonal_mean_nll(ad::transpose(logits))),
                   0.5);
}

Tensor tgir_loss(const Tensor& query_embs, const Tensor& target_embs, const Tensor& log_tau) {
  require_same_shape(query_embs, target_embs, "tgir_loss");
  return info_nce_logits(scaled_similarity(query_embs, target_embs, log_tau));
}

Tensor scr_loss(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    fail(ErrorKind::kShapeMismatch, "scr_loss: " + ad::shape_str(logits.shape()) + " logits for " +
                                        std::to_string(labels.size()) + " labels");
  }
  for (std::size_t y : labels) {
    if (y >= logits.dim(1)) {
      fail(ErrorKind::kInvalidArgument, "scr_loss: label " + std::to_string(y) +
                                            " out of range " + std::to_string(logits.dim(1)));
    }
  }
  return ad::neg(ad::mean_all(ad::pick(ad::log_softmax(logits, 1), labels)));
}

Tensor fic_loss(const Tensor& logits, std::span<const std::size_t> targets, std::size_t pad_id) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    fail(ErrorKind::kShapeMismatch, "fic_loss: " + ad::shape_str(logits.shape()) +
                                        " logits for " + std::to_string(targets.size()) +
                                        " targets");
  }
  std::vector<double> w = target_weights(targets, pad_id);
  double count = 0.0;
  for (double v : w) count += v;
  if (count == 0.0) fail(ErrorKind::kInvalidArgument, "fic_loss: no non-pad targets");
  std::vector<std::size_t> safe(targets.begin(), targets.end());
  for (std::size_t& t : safe)
    if (t >= logits.dim(1)) fail(ErrorKind::kInvalidArgument, "fic_loss: target out of vocabulary");
  Tensor nll = ad::pick(ad::log_softmax(logits, 1), safe);
  const std::size_t n = w.size();
  Tensor weights = Tensor::from({n}, std::move(w));
  return ad::scale(ad::sum_all(ad::mul(nll, weights)), -1.0 / count);
}

Tensor kl_rows(const Tensor& student_logits, const Tensor& teacher_logits,
               std::span<const double> row_weights) {
  require_same_shape(student_logits, teacher_logits, "kl_rows");
  if (student_logits.rank() != 2) {
    fail(ErrorKind::kShapeMismatch, "kl_rows: rank-2 logits expected");
  }
  const std::size_t rows = student_logits.dim(0), cols = student_logits.dim(1);
  if (!row_weights.empty() && row_weights.size() != rows) {
    fail(ErrorKind::kShapeMismatch, "kl_rows: one weight per row expected");
  }
  // Teacher probabilities as constants.
  std::vector<double> p(rows * cols);
  double entropy_term = 0.0, total_weight = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* t = teacher_logits.data().data() + r * cols;
    double mx = t[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, t[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(t[c] - mx);
    const double log_z = mx + std::log(z);
    const double w = row_weights.empty() ? 1.0 : row_weights[r];
    total_weight += w;
    for (std::size_t c = 0; c < cols; ++c) {
      const double log_p = t[c] - log_z;
      const double pc = std::exp(log_p);
      p[r * cols + c] = w * pc;
      if (pc > 0.0) entropy_term += w * pc * log_p;
    }
  }
  if (total_weight <= 0.0) fail(ErrorKind::kInvalidArgument, "kl_rows: all rows dropped");
  Tensor weights = Tensor::from({rows, cols}, std::move(p));
  Tensor cross = ad::sum_all(ad::mul(ad::log_softmax(student_logits, 1), weights));
  Tensor kl = ad::sub(Tensor::scalar(entropy_term), cross);
  return ad::scale(kl, 1.0 / total_weight);
}

Tensor distill_xmr(const Tensor& student_logits, const Tensor& teacher_logits) {
  require_same_shape(student_logits, teacher_logits, "distill_xmr");
  require_square(student_logits, "distill_xmr");
  const Tensor teacher_t = ad::transpose(teacher_logits.detach());
  return ad::scale(ad::add(kl_rows(student_logits, teacher_logits),
                           kl_rows(ad::transpose(student_logits), teacher_t)),
                   0.5);
}

Tensor distill_tgir(const Tensor& student_logits, const Tensor& teacher_logits) {
  require_same_shape(student_logits, teacher_logits, "distill_tgir");
  require_square(student_logits, "distill_tgir");
  return kl_rows(student_logits, teacher_logits);
}

Tensor distill_scr(const Tensor& student_logits, const Tensor& teacher_logits) {
  return kl_rows(student_logits, teacher_logits);
}

Tensor distill_fic(const Tensor& student_logits, const Tensor& teacher_logits,
                   std::span<const std::size_t> targets, std::size_t pad_id) {
  if (student_logits.rank() != 2 || student_logits.dim(0) != targets.size()) {
    fail(ErrorKind::kShapeMismatch, "distill_fic: one target per logits row expected");
  }
  const std::vector<double> w = target_weights(targets, pad_id);
  return kl_rows(student_logits, teacher_logits, w);
}

bool TeacherBundle::complete() const {
  for (const FameModel* m : models)
    if (!m) return false;
  return true;
}

namespace {

// Per-task logits the distillation terms compare. Also returns the task loss
// when `with_loss` is set.
struct TaskOutputs {
  Tensor logits;
  Tensor loss;
  std::vector<std::size_t> targets;  // FIC only
};

Tensor flatten_rows(const Tensor& x) {
  const std::size_t v = x.shape().back();
  return ad::reshape(x, {x.numel() / v, v});
}

TaskOutputs run_task(const TaskBatch& batch, const FameModel& model, bool with_loss) {
  TaskOutputs out;
  std::visit(
      [&](const auto& b) {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, XmrBatch>) {
          Tensor ei = model.encode_image(b.images, Task::kXmr);
          Tensor et = model.encode_text(b.captions, Task::kXmr);
          const Tensor log_tau = model.log_temperature(Task::kXmr);
          out.logits = scaled_similarity(ei, et, log_tau);
          if (with_loss) out.loss = xmr_loss(ei, et, log_tau);
        } else if constexpr (std::is_same_v<B, TgirBatch>) {
          auto [q, t] = model.tgir_pair(b.refs, b.mods, b.targets);
          const Tensor log_tau = model.log_temperature(Task::kTgir);
          out.logits = scaled_similarity(q, t, log_tau);
          if (with_loss) out.loss = info_nce_logits(out.logits);
        } else if constexpr (std::is_same_v<B, ScrBatch>) {
          out.logits = model.scr_logits(b.images, b.captions);
          if (with_loss) out.loss = scr_loss(out.logits, b.labels);
        } else {
          TeacherForcing tf = teacher_forcing(b.captions, kPadId);
          out.logits = flatten_rows(model.fic_logits(b.images, tf.prefix));
          out.targets = std::move(tf.targets);
          if (with_loss) out.loss = fic_loss(out.logits, out.targets, kPadId);
        }
      },
      batch);
  return out;
}

}  // namespace

Tensor task_loss(const TaskBatch& batch, const FameModel& model) {
  return run_task(batch, model, true).loss;
}

LossValue combined_loss(const TaskBatch& batch, const FameModel& model,
                        const TeacherBundle* teachers) {
  const Task task = batch_task(batch);
  const FameModel* teacher = nullptr;
  if (teachers) {
    teacher = teachers->get(task);
    if (!teacher) {
      fail(ErrorKind::kMissingTeacher,
           std::string("distillation needs a teacher for task '") + task_name(task) + "'");
    }
  }
  TaskOutputs student = run_task(batch, model, true);
  LossValue v;
  v.task = task;
  v.task_loss = student.loss.item();
  v.total = student.loss;
  if (teacher) {
    Tensor teacher_logits;
    {
      ad::NoGradGuard no_grad;
      teacher_logits = run_task(batch, *teacher, false).logits;
    }
    Tensor d;
    switch (task) {
      case Task::kXmr: d = distill_xmr(student.logits, teacher_logits); break;
      case Task::kTgir: d = distill_tgir(student.logits, teacher_logits); break;
      case Task::kScr: d = distill_scr(student.logits, teacher_logits); break;
      case Task::kFic:
        d = distill_fic(student.logits, teacher_logits, student.targets, kPadId);
        break;
    }
    v.distill_loss = d.item();
    v.total = ad::add(student.loss, d);
  }
  if (!std::isfinite(v.total.item())) {
    fail(ErrorKind::kNonFinite, std::string("non-finite loss for task '") + task_name(task) + "'");
  }
  return v;
}

}  // namespace fashionmt
