// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fashionmt/autodiff.hpp"

namespace fashionmt {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

// Decoupled-weight-decay Adam state for an ordered parameter list.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<ad::Tensor> params, AdamWConfig config);

  // One update. lrs holds a rate per parameter (parameter groups may use
  // different base rates). grads defaults to each parameter's .grad. An
  // empty gradient skips that parameter: no decay, no moment update.
  void apply(std::span<const double> lrs);
  void apply(std::span<const double> lrs,
             const std::vector<std::vector<double>>& grads);

  std::int64_t step() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<ad::Tensor>& params() const { return params_; }

  // Moment buffers, exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_step(std::int64_t step) { step_ = step; }

 private:
  std::vector<ad::Tensor> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t step_ = 0;
};

// Multi-step schedule with linear warmup.
struct LrSchedule {
  double base = 1e-4;
  double warmup_factor = 0.25;
  std::int64_t warmup_iters = 0;
  std::vector<std::int64_t> milestones;
  double decay_ratio = 0.1;

  // Throws when milestones are not strictly increasing.
  void validate() const;
  double rate(std::int64_t step) const;

  // Reference recipe (warmup 10k, milestones 50k/80k of 90k) rescaled to a
  // horizon of `iters` iterations.
  static LrSchedule scaled(double base, std::int64_t iters);
};

}  // namespace fashionmt
