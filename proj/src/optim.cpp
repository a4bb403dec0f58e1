// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/optim.hpp"

#include <cmath>

#include "fashionmt/error.hpp"

namespace fashionmt {

AdamW::AdamW(std::vector<ad::Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::apply(std::span<const double> lrs) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_)
    grads.push_back(p.has_grad() ? p.grad() : std::vector<double>{});
  apply(lrs, grads);
}

void AdamW::apply(std::span<const double> lrs,
                  const std::vector<std::vector<double>>& grads) {
  if (lrs.size() != params_.size() || grads.size() != params_.size()) {
    fail(ErrorKind::kInvalidArgument, "AdamW::apply: expected " +
                                          std::to_string(params_.size()) +
                                          " rates and gradients");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!grads[i].empty() && grads[i].size() != params_[i].numel()) {
      fail(ErrorKind::kShapeMismatch,
           "AdamW::apply: gradient size mismatch for '" + params_[i].name() + "'");
    }
    if (!(lrs[i] > 0.0)) {
      fail(ErrorKind::kInvalidArgument, "AdamW::apply: learning rate must be > 0");
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        fail(ErrorKind::kNonFinite,
             "AdamW::apply: non-finite gradient in parameter '" +
                 params_[i].name() + "'");
      }
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::span<double> p = params_[i].mutable_data();
    const std::vector<double>& g = grads[i];
    if (g.empty()) continue;
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    const double lr = lrs[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * config_.weight_decay * p[j];
      p[j] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void LrSchedule::validate() const {
  for (std::size_t i = 1; i < milestones.size(); ++i) {
    if (milestones[i] <= milestones[i - 1]) {
      fail(ErrorKind::kInvalidArgument,
           "LrSchedule: milestones must be strictly increasing");
    }
  }
  if (warmup_iters < 0) {
    fail(ErrorKind::kInvalidArgument, "LrSchedule: warmup_iters must be >= 0");
  }
}

double LrSchedule::rate(std::int64_t step) const {
  validate();
  if (step < 0) fail(ErrorKind::kInvalidArgument, "LrSchedule: step must be >= 0");
  double lr = base;
  if (step < warmup_iters) {
    const double alpha =
        static_cast<double>(step) / static_cast<double>(warmup_iters);
    lr *= warmup_factor * (1.0 - alpha) + alpha;
  }
  for (std::int64_t m : milestones)
    if (step >= m) lr *= decay_ratio;
  return lr;
}

LrSchedule LrSchedule::scaled(double base, std::int64_t iters) {
  LrSchedule s;
  s.base = base;
  s.warmup_factor = 0.25;
  s.decay_ratio = 0.1;
  s.warmup_iters = iters * 10 / 90;
  s.milestones = {iters * 50 / 90, iters * 80 / 90};
  if (s.milestones[0] <= 0 || s.milestones[1] <= s.milestones[0]) s.milestones.clear();
  return s;
}

}  // namespace fashionmt
