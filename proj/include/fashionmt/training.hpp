// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Single-task and multi-task training: task samplers, multi-teacher
// distillation, validation-driven gradient scaling (IAS) and the buffered
// closed-form gradient weighting (IMTLG).

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fashionmt/data.hpp"
#include "fashionmt/evaluate.hpp"
#include "fashionmt/losses.hpp"
#include "fashionmt/metrics.hpp"
#include "fashionmt/model.hpp"
#include "fashionmt/optim.hpp"

namespace fashionmt {

class SchemaReader;

// ---- task sampling --------------------------------------------------------

enum class SamplingStrategy { kSizeProportional, kUniform, kRoundRobin };
const char* strategy_name(SamplingStrategy s);
SamplingStrategy parse_strategy(const std::string& s);

struct SamplerConfig {
  SamplingStrategy strategy = SamplingStrategy::kSizeProportional;
  std::vector<Task> tasks{kAllTasks.begin(), kAllTasks.end()};
  std::array<std::size_t, kNumTasks> sizes{};  // |D_t| per task index
  std::uint64_t seed = 0;

  void validate() const;
  // Draw probabilities aligned with `tasks`.
  std::vector<double> probabilities() const;
};

class TaskSampler {
 public:
  explicit TaskSampler(SamplerConfig cfg);

  Task next();
  const SamplerConfig& config() const { return cfg_; }

  nlohmann::json state() const;
  void restore(const nlohmann::json& state);

 private:
  SamplerConfig cfg_;
  std::vector<double> cumulative_;
  std::mt19937_64 rng_;
  std::uint64_t draws_ = 0;
};

// One draw from `rng` under `cfg`; round-robin uses `counter`.
Task sample_task(const SamplerConfig& cfg, std::mt19937_64& rng, std::uint64_t counter);

// ---- gradient methods -----------------------------------------------------

enum class GradMethod { kNone, kIas, kImtlg };
const char* grad_method_name(GradMethod g);
GradMethod parse_grad_method(const std::string& s);

inline constexpr double kIasMinScale = 0.25;
inline constexpr double kIasMaxScale = 4.0;

// clamp((teacher - val) / teacher, 0.25, 4) per task, renormalized to mean 1.
std::map<Task, double> ias_scale(const std::map<Task, double>& val_mu,
                                 const std::map<Task, double>& teacher_mu);

// Weights with sum 1 such that g = sum a_t g_t has equal projections on every
// unit task gradient u_t. With U rows u_1 - u_t and D rows g_1 - g_t
// (t = 2..T): a_{2..T} = g_1 U^T (D U^T)^-1 and a_1 = 1 - sum a_{2..T}.
struct ImtlgWeights {
  std::vector<double> alpha;
  bool fallback = false;  // singular system, equal weights used
};
ImtlgWeights imtlg_alpha(const std::vector<std::vector<double>>& grads);

// Largest |g.u_t - g.u_1| relative to max(1, |g.u_1|).
double imtlg_projection_gap(const std::vector<std::vector<double>>& grads,
                            std::span<const double> alpha);

// Per-task slot of flattened gradients over every parameter.
class GradientBuffer {
 public:
  GradientBuffer() = default;
  GradientBuffer(std::vector<Task> tasks, std::size_t num_params);

  void store(Task task, std::vector<std::vector<double>> grads);
  bool full() const;
  bool filled(Task task) const;
  void clear();
  const std::vector<Task>& tasks() const { return tasks_; }
  const std::vector<std::vector<double>>& slot(Task task) const;

 private:
  std::size_t index(Task task) const;
  std::vector<Task> tasks_;
  std::size_t num_params_ = 0;
  std::vector<std::vector<std::vector<double>>> slots_;
  std::vector<bool> filled_;
};

struct ImtlgStepResult {
  std::vector<std::vector<double>> grads;  // per parameter, ready for the optimizer
  ImtlgWeights weights;
  double projection_gap = 0.0;
};

// Shared parameters (no owner) get sum a_t g_t; owned parameters get the raw
// gradient of their owning task. Clears the buffer.
ImtlgStepResult imtlg_step(GradientBuffer& buffer, const ParamStore& params);

// ---- configuration --------------------------------------------------------

struct TrainConfig {
  std::int64_t iterations = 3000;
  std::size_t batch_size = 16;
  double lr_backbone = 3e-4;
  double lr_adapter = 1.5e-3;
  double weight_decay = 1e-5;
  double warmup_factor = 0.25;
  std::int64_t validate_every = 100;
  SamplingStrategy strategy = SamplingStrategy::kSizeProportional;
  GradMethod grad_method = GradMethod::kNone;
  bool distill = false;

  void validate() const;
  nlohmann::json to_json() const;
  // Strict: unknown keys and wrong types are config_schema errors; absent
  // keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
  // Reads the known keys into `c`, recording problems in `r`.
  static void read(SchemaReader& r, TrainConfig& c);
};

// ---- reports --------------------------------------------------------------

struct LossRecord {
  std::int64_t iteration = 0;
  Task task = Task::kXmr;
  double task_loss = 0.0;
  double distill_loss = 0.0;
};

struct CurvePoint {
  std::int64_t iteration = 0;
  double mu = 0.0;
  std::vector<std::pair<std::string, double>> metrics;
};

inline constexpr int kReportSchemaVersion = 1;

struct RunReport {
  std::string kind;  // "teacher" or "mtl"
  std::string tag;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<Task> tasks;
  std::vector<LossRecord> losses;
  std::map<Task, std::vector<CurvePoint>> curves;
  std::int64_t best_iteration = -1;
  metrics::MetricTable val;
  metrics::MetricTable test;
  std::map<std::string, double> extras;
  nlohmann::json params;  // accounting
  double wall_clock_seconds = 0.0;  // not serialized with the report

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
};

// iteration,task,metric,value rows (mu included as metric "mu").
std::string curves_csv(const RunReport& r);
// iteration,task,task_loss,distill_loss rows.
std::string losses_csv(const RunReport& r);

// ---- training --------------------------------------------------------------

struct TrainHooks {
  // Checkpoint written every `checkpoint_every` iterations when set.
  std::string checkpoint_path;
  std::int64_t checkpoint_every = 0;
  // Stop after this iteration count (simulated interruption); 0 = never.
  std::int64_t stop_after = 0;
  // Resume from a checkpoint written by an earlier run with the same inputs.
  std::string resume_from;
  bool verbose = false;
};

struct TrainResult {
  FameModel model;
  RunReport report;
  bool finished = true;
};

struct TeacherSet {
  std::array<std::unique_ptr<FameModel>, kNumTasks> models;
  std::array<RunReport, kNumTasks> reports;
  std::map<Task, double> val_mu;   // reference validation means
  std::map<Task, double> test_mu;

  TeacherBundle bundle() const;
};

// Trains on a single task with the task loss only; returns the
// best-validation snapshot, frozen.
TrainResult train_teacher(Task task, const ModelConfig& model_cfg, const TrainConfig& cfg,
                          const data::Corpus& corpus, const TrainHooks& hooks = {});

// Multi-task training over `tasks` (default: every task the architecture
// supports). Teachers are required when distillation is on; teacher reference
// means are required for IAS.
TrainResult train_mtl(const ModelConfig& model_cfg, const TrainConfig& cfg,
                      const data::Corpus& corpus, const TeacherSet* teachers,
                      const TrainHooks& hooks = {});

// Rejects frozen models.
AdamW make_optimizer(FameModel& model, const TrainConfig& cfg);
std::vector<double> learning_rates(const FameModel& model, const TrainConfig& cfg,
                                   std::int64_t iteration);
LrSchedule schedule_for(const TrainConfig& cfg, double base);

// ---- ablation ---------------------------------------------------------------

struct AblationRow {
  int row = 0;
  std::string tag;
  bool multi_task = true;
  bool use_tsa = true;
  bool use_xaa = true;
  bool distill = false;
  SamplingStrategy strategy = SamplingStrategy::kSizeProportional;
  GradMethod grad_method = GradMethod::kNone;
  std::size_t bottleneck = 0;  // 0: keep the configured value
};

// Row sets of groups I-IV (4, 4, 7, 3 rows).
std::vector<AblationRow> ablation_rows(const std::string& group);

// Model config of a row built on `base`.
ModelConfig row_model_config(const AblationRow& row, const ModelConfig& base);

// Parameter saving of a row versus the four-model single-task set without
// adapters (row 1), at toy dimensions and at CLIP-scale dimensions with the
// bottleneck scaled by 16.
struct RowSaving {
  double toy = 0.0;
  double clip = 0.0;
};
RowSaving row_param_saving(const AblationRow& row, const ModelConfig& base);

struct AblationResult {
  AblationRow row;
  std::map<Task, double> mu;     // test means
  std::map<Task, double> delta;  // vs the group reference
  double average_delta = 0.0;
  RowSaving saving;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds = {0};
  std::size_t n_products = 864;
  data::TaskSizes sizes;
  bool verbose = false;
};

struct AblationTable {
  std::string group;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationResult> rows;                   // mean over seeds
  std::vector<std::vector<AblationResult>> per_seed;  // [seed][row]

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Trains the teacher set (one single-task model per supported task).
TeacherSet train_teacher_set(const ModelConfig& model_cfg, const TrainConfig& cfg,
                             const data::Corpus& corpus, bool verbose = false);

// Trains and tests one row. Multi-task rows use `teachers` for distillation
// and IAS; single-task rows train their own models, except a row matching the
// teacher architecture, which reuses the teachers.
std::map<Task, double> run_row(const AblationRow& row, const ModelConfig& model_cfg,
                               const TrainConfig& cfg, const data::Corpus& corpus,
                               const TeacherSet& teachers, bool verbose = false);

// Group I is referenced to row 1 (row 3 for captioning, which row 1 cannot
// serve); groups II-IV to the teachers' test means.
AblationTable run_ablation(const std::string& group, const ModelConfig& model_cfg,
                           const TrainConfig& cfg, const AblationOptions& opts);

}  // namespace fashionmt
