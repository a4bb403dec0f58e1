// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <variant>
#include <vector>

#include "fashionmt/params.hpp"
#include "fashionmt/transformer.hpp"

namespace fashionmt {

// Matched image/caption pairs; row i of each side belongs together.
struct XmrBatch {
  ImageBatch images;
  TokenBatch captions;
};

// Reference image + modifying text -> target image.
struct TgirBatch {
  ImageBatch refs;
  TokenBatch mods;
  ImageBatch targets;
};

struct ScrBatch {
  ImageBatch images;
  TokenBatch captions;
  std::vector<std::size_t> labels;
};

// Captions carry both sentinels.
struct FicBatch {
  ImageBatch images;
  TokenBatch captions;
};

using TaskBatch = std::variant<XmrBatch, TgirBatch, ScrBatch, FicBatch>;

Task batch_task(const TaskBatch& batch);
std::size_t batch_size(const TaskBatch& batch);

// Teacher-forcing split: prefix drops each caption's last token, targets are
// the captions shifted left by one, flattened to prefix.batch * prefix.len
// with pad_id at padded positions.
struct TeacherForcing {
  TokenBatch prefix;
  std::vector<std::size_t> targets;
};
TeacherForcing teacher_forcing(const TokenBatch& captions, std::size_t pad_id);

}  // namespace fashionmt
