// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/batch.hpp"

#include "fashionmt/error.hpp"

namespace fashionmt {

Task batch_task(const TaskBatch& batch) {
  switch (batch.index()) {
    case 0: return Task::kXmr;
    case 1: return Task::kTgir;
    case 2: return Task::kScr;
    default: return Task::kFic;
  }
}

std::size_t batch_size(const TaskBatch& batch) {
  return std::visit(
      [](const auto& b) -> std::size_t {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, TgirBatch>)
          return b.refs.batch;
        else
          return b.images.batch;
      },
      batch);
}

TeacherForcing teacher_forcing(const TokenBatch& captions, std::size_t pad_id) {
  std::vector<std::vector<std::size_t>> prefixes(captions.batch);
  for (std::size_t b = 0; b < captions.batch; ++b) {
    const std::size_t n = captions.lengths[b];
    if (n < 2) {
      fail(ErrorKind::kInvalidArgument,
           "teacher_forcing: caption needs at least two tokens");
    }
    const std::size_t* row = captions.ids.data() + b * captions.len;
    prefixes[b].assign(row, row + n - 1);
  }
  TeacherForcing tf;
  tf.prefix = TokenBatch::from_sequences(prefixes, pad_id);
  tf.targets.assign(tf.prefix.batch * tf.prefix.len, pad_id);
  for (std::size_t b = 0; b < captions.batch; ++b) {
    const std::size_t* row = captions.ids.data() + b * captions.len;
    for (std::size_t a = 0; a + 1 < captions.lengths[b]; ++a)
      tf.targets[b * tf.prefix.len + a] = row[a + 1];
  }
  return tf;
}

}  // namespace fashionmt
