// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Model evaluation on a held-out split. Rates are reported x100; the FIC
// CIDEr entry is the x10 CIDEr score times 10 so all FIC entries share a
// 0-100 scale.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fashionmt/data.hpp"
#include "fashionmt/metrics.hpp"
#include "fashionmt/model.hpp"

namespace fashionmt {

struct EvalOptions {
  std::vector<std::size_t> ks = {1, 5, 10};
  bool xmr_random100 = false;  // extra rows, not part of the task mean
  std::uint64_t seed = 0;
  std::size_t chunk = 64;
};

struct EvalResult {
  metrics::MetricTable table;             // feeds the per-task mean
  std::map<std::string, double> extras;   // diagnostics, e.g. fic.valid_rate
};

EvalResult evaluate(const FameModel& model, const data::Corpus& corpus,
                    const data::EvalSplit& split, std::span<const Task> tasks,
                    const EvalOptions& opts);

// Which tasks a model architecture can serve (captioning needs XAA).
std::vector<Task> supported_tasks(const ModelConfig& cfg);

}  // namespace fashionmt
