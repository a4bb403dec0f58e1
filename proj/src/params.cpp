// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/params.hpp"

#include <cstring>

#include "fashionmt/error.hpp"

namespace fashionmt {

const char* task_name(Task t) {
  switch (t) {
    case Task::kXmr: return "xmr";
    case Task::kTgir: return "tgir";
    case Task::kScr: return "scr";
    case Task::kFic: return "fic";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  for (Task t : kAllTasks)
    if (name == task_name(t)) return t;
  fail(ErrorKind::kUnknownTask, "unknown task '" + std::string(name) + "'");
}

ad::Tensor ParamStore::add(const std::string& name, ad::Shape shape,
                           std::vector<double> values, ParamGroup group,
                           std::optional<Task> owner) {
  if (index_.count(name)) {
    fail(ErrorKind::kInvalidArgument, "ParamStore: duplicate parameter '" + name + "'");
  }
  ad::Tensor t = ad::Tensor::from(std::move(shape), std::move(values), true);
  t.set_name(name);
  index_[name] = params_.size();
  params_.push_back({name, t, group, owner});
  return t;
}

const ParamInfo& ParamStore::info(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    fail(ErrorKind::kInvalidArgument, "ParamStore: no parameter named '" + name + "'");
  }
  return params_[it->second];
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void ParamStore::clear_grads() {
  for (auto& p : params_) p.tensor.clear_grad();
}

void ParamStore::set_requires_grad(bool on) {
  for (auto& p : params_) p.tensor.set_requires_grad(on);
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& p : params_) {
    mix(p.name.data(), p.name.size());
    for (std::size_t d : p.tensor.shape()) {
      const std::uint64_t v = d;
      mix(&v, sizeof v);
    }
    mix(p.tensor.data().data(), p.tensor.numel() * sizeof(double));
  }
  return h;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.params_.size() != params_.size()) {
    fail(ErrorKind::kShapeMismatch, "ParamStore: layouts differ");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& src = other.params_[i];
    auto& dst = params_[i];
    if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
      fail(ErrorKind::kShapeMismatch, "ParamStore: layouts differ at '" + dst.name + "'");
    }
    std::copy(src.tensor.data().begin(), src.tensor.data().end(),
              dst.tensor.mutable_data().begin());
  }
}

std::vector<double> normal_values(std::mt19937_64& rng, std::size_t n,
                                  double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

}  // namespace fashionmt
