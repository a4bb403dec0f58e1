// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fashionmt/autodiff.hpp"

namespace fashionmt {

enum class Task { kXmr = 0, kTgir = 1, kScr = 2, kFic = 3 };
inline constexpr std::array<Task, 4> kAllTasks = {Task::kXmr, Task::kTgir,
                                                  Task::kScr, Task::kFic};
inline constexpr std::size_t kNumTasks = 4;

const char* task_name(Task t);
Task parse_task(std::string_view name);
inline std::size_t task_index(Task t) { return static_cast<std::size_t>(t); }

enum class ParamGroup { kBackbone, kAdapter, kHead, kTemperature };

struct ParamInfo {
  std::string name;
  ad::Tensor tensor;
  ParamGroup group;
  std::optional<Task> owner;  // nullopt: shared by every task
};

// Ordered registry of named parameters. Registration order is the
// serialization and optimizer order.
class ParamStore {
 public:
  ad::Tensor add(const std::string& name, ad::Shape shape,
                 std::vector<double> values, ParamGroup group,
                 std::optional<Task> owner = std::nullopt);

  const std::vector<ParamInfo>& all() const { return params_; }
  std::vector<ParamInfo>& all() { return params_; }
  const ParamInfo& info(const std::string& name) const;
  ad::Tensor get(const std::string& name) const { return info(name).tensor; }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t count() const;  // total scalar parameters

  void zero_grad();
  void clear_grads();
  void set_requires_grad(bool on);
  // Order-dependent FNV-1a hash of names, shapes and raw value bits.
  std::uint64_t checksum() const;
  // Copies values (not identity) from another store with identical layout.
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<ParamInfo> params_;
  std::map<std::string, std::size_t> index_;
};

// Deterministic initializers.
std::vector<double> normal_values(std::mt19937_64& rng, std::size_t n,
                                  double stddev);

}  // namespace fashionmt
