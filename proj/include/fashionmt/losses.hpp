// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Task objectives, distillation objectives and their sum.
//
// Distillation uses KL(teacher || student) per row: the teacher distribution
// is the target and only the student receives gradient. Each model scales its
// similarities by its own learned temperature.

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>

#include "fashionmt/autodiff.hpp"
#include "fashionmt/batch.hpp"
#include "fashionmt/model.hpp"

namespace fashionmt {

// Square similarity matrix divided by the temperature exp(log_tau).
ad::Tensor scaled_similarity(const ad::Tensor& x, const ad::Tensor& y,
                             const ad::Tensor& log_tau);

// -(1/B) sum_i log softmax(logits)_ii over rows.
ad::Tensor info_nce_logits(const ad::Tensor& logits);
ad::Tensor info_nce(const ad::Tensor& sims, double tau);
ad::Tensor info_nce(const ad::Tensor& sims, const ad::Tensor& log_tau);

// Symmetric image->text / text->image InfoNCE on S = image_embs text_embsᵀ.
ad::Tensor xmr_loss(const ad::Tensor& image_embs, const ad::Tensor& text_embs,
                    const ad::Tensor& log_tau);
// Queries against targets, one direction.
ad::Tensor tgir_loss(const ad::Tensor& query_embs, const ad::Tensor& target_embs,
                     const ad::Tensor& log_tau);
// Mean cross entropy.
ad::Tensor scr_loss(const ad::Tensor& logits, std::span<const std::size_t> labels);
// Mean next-token NLL over positions whose target is not pad_id.
ad::Tensor fic_loss(const ad::Tensor& logits, std::span<const std::size_t> targets,
                    std::size_t pad_id);

// Mean over rows of KL(softmax(teacher_row) || softmax(student_row)). The
// teacher side is treated as a constant. `row_weights`, when given, replaces
// the plain mean with a weighted one (zero weight drops a row).
ad::Tensor kl_rows(const ad::Tensor& student_logits, const ad::Tensor& teacher_logits,
                   std::span<const double> row_weights = {});

// Arguments are temperature-scaled similarity logits.
ad::Tensor distill_xmr(const ad::Tensor& student_logits, const ad::Tensor& teacher_logits);
ad::Tensor distill_tgir(const ad::Tensor& student_logits, const ad::Tensor& teacher_logits);
ad::Tensor distill_scr(const ad::Tensor& student_logits, const ad::Tensor& teacher_logits);
ad::Tensor distill_fic(const ad::Tensor& student_logits, const ad::Tensor& teacher_logits,
                       std::span<const std::size_t> targets, std::size_t pad_id);

// One frozen single-task model per task; null entries are absent teachers.
struct TeacherBundle {
  std::array<const FameModel*, kNumTasks> models{};

  const FameModel* get(Task t) const { return models[task_index(t)]; }
  bool complete() const;
};

struct LossValue {
  ad::Tensor total;
  Task task = Task::kXmr;
  double task_loss = 0.0;
  double distill_loss = 0.0;
};

inline constexpr std::size_t kPadId = 0;

// Task loss plus, when teachers are given, the matching distillation term.
LossValue combined_loss(const TaskBatch& batch, const FameModel& model,
                        const TeacherBundle* teachers);

// Task loss alone, computed by the model in the task's own mode.
ad::Tensor task_loss(const TaskBatch& batch, const FameModel& model);

}  // namespace fashionmt
