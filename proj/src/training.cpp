// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/training.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "fashionmt/checkpoint.hpp"
#include "fashionmt/error.hpp"
#include "fashionmt/schema.hpp"

namespace fashionmt {

using json = nlohmann::json;

// ---- names -------------------------------------------------------------------

const char* strategy_name(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::kSizeProportional: return "size_proportional";
    case SamplingStrategy::kUniform: return "uniform";
    case SamplingStrategy::kRoundRobin: return "round_robin";
  }
  return "unknown";
}

SamplingStrategy parse_strategy(const std::string& s) {
  for (auto v : {SamplingStrategy::kSizeProportional, SamplingStrategy::kUniform,
                 SamplingStrategy::kRoundRobin})
    if (s == strategy_name(v)) return v;
  fail(ErrorKind::kInvalidArgument, "unknown sampling strategy '" + s + "'");
}

const char* grad_method_name(GradMethod g) {
  switch (g) {
    case GradMethod::kNone: return "none";
    case GradMethod::kIas: return "ias";
    case GradMethod::kImtlg: return "imtlg";
  }
  return "unknown";
}

GradMethod parse_grad_method(const std::string& s) {
  for (auto v : {GradMethod::kNone, GradMethod::kIas, GradMethod::kImtlg})
    if (s == grad_method_name(v)) return v;
  fail(ErrorKind::kInvalidArgument, "unknown gradient method '" + s + "'");
}

// ---- sampling ------------------------------------------------------------------

void SamplerConfig::validate() const {
  if (tasks.empty()) fail(ErrorKind::kInvalidArgument, "sampler: empty task set");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j)
      if (tasks[i] == tasks[j])
        fail(ErrorKind::kInvalidArgument,
             std::string("sampler: duplicate task ") + task_name(tasks[i]));
    if (sizes[task_index(tasks[i])] == 0)
      fail(ErrorKind::kInvalidArgument,
           std::string("sampler: dataset size of ") + task_name(tasks[i]) + " is 0");
  }
}

std::vector<double> SamplerConfig::probabilities() const {
  validate();
  std::vector<double> p(tasks.size());
  if (strategy == SamplingStrategy::kSizeProportional) {
    double total = 0.0;
    for (Task t : tasks) total += static_cast<double>(sizes[task_index(t)]);
    for (std::size_t i = 0; i < tasks.size(); ++i)
      p[i] = static_cast<double>(sizes[task_index(tasks[i])]) / total;
  } else {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(tasks.size()));
  }
  return p;
}

Task sample_task(const SamplerConfig& cfg, std::mt19937_64& rng, std::uint64_t counter) {
  const auto p = cfg.probabilities();
  if (cfg.strategy == SamplingStrategy::kRoundRobin) return cfg.tasks[counter % cfg.tasks.size()];
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return cfg.tasks[i];
  }
  return cfg.tasks.back();
}

TaskSampler::TaskSampler(SamplerConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
  double acc = 0.0;
  for (double p : cfg_.probabilities()) cumulative_.push_back(acc += p);
}

Task TaskSampler::next() {
  const std::uint64_t n = draws_++;
  if (cfg_.strategy == SamplingStrategy::kRoundRobin) return cfg_.tasks[n % cfg_.tasks.size()];
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
  for (std::size_t i = 0; i < cumulative_.size(); ++i)
    if (u < cumulative_[i]) return cfg_.tasks[i];
  return cfg_.tasks.back();
}

json TaskSampler::state() const {
  std::ostringstream os;
  os << rng_;
  return {{"draws", draws_}, {"rng", os.str()}};
}

void TaskSampler::restore(const json& state) {
  draws_ = state.at("draws").get<std::uint64_t>();
  std::istringstream is(state.at("rng").get<std::string>());
  is >> rng_;
  if (!is) fail(ErrorKind::kFormat, "sampler: bad rng state");
}

// ---- gradient methods ------------------------------------------------------------

std::map<Task, double> ias_scale(const std::map<Task, double>& val_mu,
                                 const std::map<Task, double>& teacher_mu) {
  if (val_mu.empty()) fail(ErrorKind::kInvalidArgument, "ias_scale: no validation snapshot");
  std::map<Task, double> out;
  double total = 0.0;
  for (const auto& [task, mu] : val_mu) {
    const auto it = teacher_mu.find(task);
    if (it == teacher_mu.end())
      fail(ErrorKind::kMissingTeacher,
           std::string("ias_scale: no teacher reference for ") + task_name(task));
    if (!(it->second > 0.0))
      fail(ErrorKind::kInvalidArgument, "ias_scale: teacher reference must be > 0");
    const double s = std::clamp((it->second - mu) / it->second, kIasMinScale, kIasMaxScale);
    out[task] = s;
    total += s;
  }
  const double mean = total / static_cast<double>(out.size());
  for (auto& [task, s] : out) s /= mean;
  return out;
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> combine(const std::vector<std::vector<double>>& grads,
                            std::span<const double> alpha) {
  std::vector<double> g(grads[0].size(), 0.0);
  for (std::size_t t = 0; t < grads.size(); ++t)
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += alpha[t] * grads[t][i];
  return g;
}

}  // namespace

ImtlgWeights imtlg_alpha(const std::vector<std::vector<double>>& grads) {
  const std::size_t T = grads.size();
  if (T < 2) fail(ErrorKind::kInvalidArgument, "imtlg_alpha: need at least two tasks");
  const std::size_t d = grads[0].size();
  std::vector<double> norms(T);
  for (std::size_t t = 0; t < T; ++t) {
    if (grads[t].size() != d) fail(ErrorKind::kShapeMismatch, "imtlg_alpha: gradient sizes differ");
    norms[t] = std::sqrt(dot(grads[t], grads[t]));
    if (!(norms[t] > 1e-12))
      fail(ErrorKind::kDegenerateGradient,
           "imtlg_alpha: gradient " + std::to_string(t) + " has near-zero norm");
  }
  using Mat = Eigen::MatrixXd;
  Mat G(T, d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < d; ++i) G(t, i) = grads[t][i];
  Mat U(T - 1, d), D(T - 1, d);
  for (std::size_t t = 1; t < T; ++t) {
    U.row(t - 1) = G.row(0) / norms[0] - G.row(t) / norms[t];
    D.row(t - 1) = G.row(0) - G.row(t);
  }
  const Mat M = D * U.transpose();
  const Eigen::RowVectorXd rhs = G.row(0) * U.transpose();
  Eigen::FullPivLU<Mat> lu(M.transpose());
  ImtlgWeights w;
  w.alpha.assign(T, 1.0 / static_cast<double>(T));
  if (!lu.isInvertible()) {
    w.fallback = true;
    return w;
  }
  const Eigen::VectorXd a = lu.solve(rhs.transpose());
  if (!a.allFinite()) {
    w.fallback = true;
    return w;
  }
  double rest = 0.0;
  for (std::size_t t = 1; t < T; ++t) rest += (w.alpha[t] = a(static_cast<Eigen::Index>(t - 1)));
  w.alpha[0] = 1.0 - rest;
  return w;
}

double imtlg_projection_gap(const std::vector<std::vector<double>>& grads,
                            std::span<const double> alpha) {
  const auto g = combine(grads, alpha);
  auto proj = [&](std::size_t t) { return dot(g, grads[t]) / std::sqrt(dot(grads[t], grads[t])); };
  const double p1 = proj(0);
  double gap = 0.0;
  for (std::size_t t = 1; t < grads.size(); ++t)
    gap = std::max(gap, std::abs(proj(t) - p1) / std::max(1.0, std::abs(p1)));
  return gap;
}

GradientBuffer::GradientBuffer(std::vector<Task> tasks, std::size_t num_params)
    : tasks_(std::move(tasks)), num_params_(num_params),
      slots_(tasks_.size()), filled_(tasks_.size(), false) {}

std::size_t GradientBuffer::index(Task task) const {
  const auto it = std::find(tasks_.begin(), tasks_.end(), task);
  if (it == tasks_.end())
    fail(ErrorKind::kUnknownTask, std::string("gradient buffer: no slot for ") + task_name(task));
  return static_cast<std::size_t>(it - tasks_.begin());
}

void GradientBuffer::store(Task task, std::vector<std::vector<double>> grads) {
  if (grads.size() != num_params_)
    fail(ErrorKind::kShapeMismatch, "gradient buffer: expected one gradient per parameter");
  const std::size_t i = index(task);
  slots_[i] = std::move(grads);
  filled_[i] = true;
}

bool GradientBuffer::full() const {
  return !tasks_.empty() && std::all_of(filled_.begin(), filled_.end(), [](bool b) { return b; });
}

bool GradientBuffer::filled(Task task) const { return filled_[index(task)]; }

void GradientBuffer::clear() {
  for (auto& s : slots_) s.clear();
  std::fill(filled_.begin(), filled_.end(), false);
}

const std::vector<std::vector<double>>& GradientBuffer::slot(Task task) const {
  const std::size_t i = index(task);
  if (!filled_[i])
    fail(ErrorKind::kPartialBuffer, std::string("gradient buffer: empty slot ") + task_name(task));
  return slots_[i];
}

ImtlgStepResult imtlg_step(GradientBuffer& buffer, const ParamStore& params) {
  if (!buffer.full()) fail(ErrorKind::kPartialBuffer, "imtlg_step: buffer is not full");
  const auto& infos = params.all();
  const auto& tasks = buffer.tasks();
  // Flattened shared gradients per task; untouched parameters count as zero.
  std::vector<std::vector<double>> shared(tasks.size());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& slot = buffer.slot(tasks[t]);
    for (std::size_t p = 0; p < infos.size(); ++p) {
      if (infos[p].owner) continue;
      if (slot[p].empty())
        shared[t].insert(shared[t].end(), infos[p].tensor.numel(), 0.0);
      else
        shared[t].insert(shared[t].end(), slot[p].begin(), slot[p].end());
    }
  }
  ImtlgStepResult res;
  res.weights = imtlg_alpha(shared);
  res.projection_gap = imtlg_projection_gap(shared, res.weights.alpha);
  res.grads.resize(infos.size());
  for (std::size_t p = 0; p < infos.size(); ++p) {
    if (infos[p].owner) {
      const Task owner = *infos[p].owner;
      if (std::find(tasks.begin(), tasks.end(), owner) != tasks.end())
        res.grads[p] = buffer.slot(owner)[p];
      continue;
    }
    bool any = false;
    std::vector<double> g(infos[p].tensor.numel(), 0.0);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const auto& src = buffer.slot(tasks[t])[p];
      if (src.empty()) continue;
      any = true;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += res.weights.alpha[t] * src[i];
    }
    if (any) res.grads[p] = std::move(g);
  }
  buffer.clear();
  return res;
}

// ---- configuration -----------------------------------------------------------

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::kConfigSchema, "train." + m); };
  if (iterations <= 0) bad("iterations: must be > 0");
  if (batch_size < 2) bad("batch_size: must be >= 2");
  if (!(lr_backbone > 0.0)) bad("lr_backbone: must be > 0");
  if (!(lr_adapter > 0.0)) bad("lr_adapter: must be > 0");
  if (!(weight_decay >= 0.0)) bad("weight_decay: must be >= 0");
  if (!(warmup_factor > 0.0 && warmup_factor <= 1.0)) bad("warmup_factor: must be in (0, 1]");
  if (validate_every <= 0) bad("validate_every: must be > 0");
}

json TrainConfig::to_json() const {
  return {{"iterations", iterations},       {"batch_size", batch_size},
          {"lr_backbone", lr_backbone},     {"lr_adapter", lr_adapter},
          {"weight_decay", weight_decay},   {"warmup_factor", warmup_factor},
          {"validate_every", validate_every}, {"strategy", strategy_name(strategy)},
          {"grad_method", grad_method_name(grad_method)}, {"distill", distill}};
}

void TrainConfig::read(SchemaReader& r, TrainConfig& c) {
  r.field("iterations", c.iterations)
      .field("batch_size", c.batch_size)
      .field("lr_backbone", c.lr_backbone)
      .field("lr_adapter", c.lr_adapter)
      .field("weight_decay", c.weight_decay)
      .field("warmup_factor", c.warmup_factor)
      .field("validate_every", c.validate_every)
      .parsed("strategy", c.strategy, parse_strategy)
      .parsed("grad_method", c.grad_method, parse_grad_method)
      .field("distill", c.distill);
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  SchemaReader r(j, "train");
  read(r, c);
  r.finish();
  c.validate();
  return c;
}

LrSchedule schedule_for(const TrainConfig& cfg, double base) {
  LrSchedule s = LrSchedule::scaled(base, cfg.iterations);
  s.warmup_factor = cfg.warmup_factor;
  return s;
}

std::vector<double> learning_rates(const FameModel& model, const TrainConfig& cfg,
                                   std::int64_t iteration) {
  const double backbone = schedule_for(cfg, cfg.lr_backbone).rate(iteration);
  const double adapter = schedule_for(cfg, cfg.lr_adapter).rate(iteration);
  std::vector<double> out;
  for (const auto& p : model.params().all())
    out.push_back(p.group == ParamGroup::kBackbone ? backbone : adapter);
  return out;
}

AdamW make_optimizer(FameModel& model, const TrainConfig& cfg) {
  if (model.frozen()) fail(ErrorKind::kFrozen, "optimizer: model is frozen");
  std::vector<ad::Tensor> params;
  for (const auto& p : model.params().all()) params.push_back(p.tensor);
  AdamWConfig oc;
  oc.weight_decay = cfg.weight_decay;
  return AdamW(std::move(params), oc);
}

// ---- reports ---------------------------------------------------------------------

json RunReport::to_json() const {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["kind"] = kind;
  j["tag"] = tag;
  j["seed"] = seed;
  j["config"] = config;
  json tj = json::array();
  for (Task t : tasks) tj.push_back(task_name(t));
  j["tasks"] = tj;
  json it = json::array(), tk = json::array(), tl = json::array(), dl = json::array();
  for (const auto& l : losses) {
    it.push_back(l.iteration);
    tk.push_back(task_name(l.task));
    tl.push_back(l.task_loss);
    dl.push_back(l.distill_loss);
  }
  j["losses"] = {{"iteration", it}, {"task", tk}, {"task_loss", tl}, {"distill_loss", dl}};
  json cj = json::object();
  for (const auto& [task, pts] : curves) {
    json arr = json::array();
    for (const auto& p : pts) {
      json m = json::array();
      for (const auto& [name, v] : p.metrics) m.push_back({name, v});
      arr.push_back({{"iteration", p.iteration}, {"mu", p.mu}, {"metrics", m}});
    }
    cj[task_name(task)] = arr;
  }
  j["curves"] = cj;
  j["best_iteration"] = best_iteration;
  j["val"] = metrics::table_to_json(val);
  j["test"] = metrics::table_to_json(test);
  json summary = json::object();
  for (const auto& [task, mu] : metrics::task_means(test)) summary[task_name(task)] = mu;
  j["test_mu"] = summary;
  j["extras"] = extras;
  j["params"] = params;
  return j;
}

RunReport RunReport::from_json(const json& j) {
  if (j.at("schema_version").get<int>() != kReportSchemaVersion)
    fail(ErrorKind::kFormat, "report: unsupported schema version");
  RunReport r;
  r.kind = j.at("kind").get<std::string>();
  r.tag = j.at("tag").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config = j.at("config");
  for (const auto& t : j.at("tasks")) r.tasks.push_back(parse_task(t.get<std::string>()));
  const auto& l = j.at("losses");
  for (std::size_t i = 0; i < l.at("iteration").size(); ++i) {
    r.losses.push_back({l["iteration"][i].get<std::int64_t>(),
                        parse_task(l["task"][i].get<std::string>()),
                        l["task_loss"][i].get<double>(), l["distill_loss"][i].get<double>()});
  }
  for (const auto& [name, arr] : j.at("curves").items()) {
    auto& pts = r.curves[parse_task(name)];
    for (const auto& p : arr) {
      CurvePoint c;
      c.iteration = p.at("iteration").get<std::int64_t>();
      c.mu = p.at("mu").get<double>();
      for (const auto& m : p.at("metrics"))
        c.metrics.emplace_back(m[0].get<std::string>(), m[1].get<double>());
      pts.push_back(std::move(c));
    }
  }
  r.best_iteration = j.at("best_iteration").get<std::int64_t>();
  r.val = metrics::table_from_json(j.at("val"));
  r.test = metrics::table_from_json(j.at("test"));
  r.extras = j.at("extras").get<std::map<std::string, double>>();
  r.params = j.at("params");
  return r;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string curves_csv(const RunReport& r) {
  std::string out = "iteration,task,metric,value\n";
  for (const auto& [task, pts] : r.curves)
    for (const auto& p : pts) {
      const std::string head = std::to_string(p.iteration) + "," + task_name(task) + ",";
      out += head + "mu," + num(p.mu) + "\n";
      for (const auto& [name, v] : p.metrics) out += head + name + "," + num(v) + "\n";
    }
  return out;
}

std::string losses_csv(const RunReport& r) {
  std::string out = "iteration,task,task_loss,distill_loss\n";
  for (const auto& l : r.losses)
    out += std::to_string(l.iteration) + "," + task_name(l.task) + "," + num(l.task_loss) + "," +
           num(l.distill_loss) + "\n";
  return out;
}

// ---- training loop -------------------------------------------------------------------

namespace {

constexpr std::uint64_t kSamplerStream = 30;
constexpr std::uint64_t kBatchStream = 31;
constexpr std::uint64_t kCycleStream = 32;

std::string rng_text(const std::mt19937_64& r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

void rng_restore(std::mt19937_64& r, const std::string& s) {
  std::istringstream is(s);
  is >> r;
  if (!is) fail(ErrorKind::kFormat, "train state: bad rng state");
}

// Records drawn uniformly with replacement until `n` distinct keys are found.
template <typename Rec, typename Key>
std::vector<const Rec*> draw_distinct(const std::vector<Rec>& pool, std::size_t n,
                                      std::mt19937_64& rng, Key key) {
  if (pool.empty()) fail(ErrorKind::kInfeasible, "batch: empty training set");
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<const Rec*> out;
  std::vector<std::size_t> seen;
  for (std::size_t tries = 0; out.size() < n; ++tries) {
    if (tries > 100 * n) fail(ErrorKind::kInfeasible, "batch: too few distinct products");
    const Rec& r = pool[pick(rng)];
    const std::size_t k = key(r);
    if (std::find(seen.begin(), seen.end(), k) != seen.end()) continue;
    seen.push_back(k);
    out.push_back(&r);
  }
  return out;
}

TaskBatch sample_batch(Task task, const data::Corpus& c, std::size_t n, std::mt19937_64& rng) {
  auto by_product = [](const data::PairRecord& r) { return r.product; };
  switch (task) {
    case Task::kXmr: return data::xmr_batch(c, draw_distinct(c.xmr, n, rng, by_product));
    case Task::kScr: return data::scr_batch(c, draw_distinct(c.scr, n, rng, by_product));
    case Task::kFic: return data::fic_batch(c, draw_distinct(c.fic, n, rng, by_product));
    case Task::kTgir:
      return data::tgir_batch(
          c, draw_distinct(c.tgir, n, rng, [](const data::TgirTriplet& t) { return t.target; }));
  }
  fail(ErrorKind::kUnknownTask, "batch: unknown task");
}

std::string join_tasks(const std::vector<Task>& tasks) {
  std::string s;
  for (Task t : tasks) s += (s.empty() ? "" : ",") + std::string(task_name(t));
  return s;
}

json account_json(const metrics::ParamAccount& a) {
  json comps = json::array();
  for (const auto& [name, n] : a.components) comps.push_back({name, n});
  return {{"components", comps}, {"total", a.total}};
}

struct LoopSpec {
  std::string kind;
  std::string tag;
  std::vector<Task> tasks;
  const TeacherSet* teachers = nullptr;
  bool keep_best = false;
};

class Loop {
 public:
  Loop(const ModelConfig& model_cfg, const TrainConfig& cfg, const data::Corpus& corpus,
       LoopSpec spec, const TrainHooks& hooks)
      : model_(model_cfg), cfg_(cfg), corpus_(corpus), spec_(std::move(spec)), hooks_(hooks) {
    cfg_.validate();
    opt_ = make_optimizer(model_, cfg_);
    const std::uint64_t seed = model_cfg.seed;
    SamplerConfig sc;
    sc.strategy = cfg_.strategy;
    sc.tasks = spec_.tasks;
    for (Task t : kAllTasks) sc.sizes[task_index(t)] = corpus.train_size(t);
    sc.seed = data::mix_seed(seed, kSamplerStream);
    sampler_.emplace(sc);
    batch_rng_.seed(data::mix_seed(seed, kBatchStream));
    cycle_rng_.seed(data::mix_seed(seed, kCycleStream));
    buffer_ = GradientBuffer(spec_.tasks, model_.params().all().size());
    for (Task t : spec_.tasks) ias_[t] = 1.0;
    if (cfg_.distill || cfg_.grad_method == GradMethod::kIas) {
      if (!spec_.teachers)
        fail(ErrorKind::kMissingTeacher, "train: teachers are required for distillation and IAS");
      for (Task t : spec_.tasks) {
        if (cfg_.distill && !spec_.teachers->models[task_index(t)])
          fail(ErrorKind::kMissingTeacher, std::string("train: no teacher for ") + task_name(t));
        if (cfg_.grad_method == GradMethod::kIas && !spec_.teachers->val_mu.count(t))
          fail(ErrorKind::kMissingTeacher,
               std::string("train: no teacher reference for ") + task_name(t));
      }
      if (cfg_.distill) bundle_ = spec_.teachers->bundle();
    }
    report_.kind = spec_.kind;
    report_.tag = spec_.tag;
    report_.seed = seed;
    report_.config = {{"model", model_cfg.to_json()}, {"train", cfg_.to_json()}};
    report_.tasks = spec_.tasks;
    if (!hooks_.resume_from.empty()) restore(load_checkpoint(hooks_.resume_from));
  }

  TrainResult run() {
    const auto started = std::chrono::steady_clock::now();
    for (; it_ < cfg_.iterations; ++it_) {
      if (hooks_.stop_after > 0 && it_ >= hooks_.stop_after) {
        if (!hooks_.checkpoint_path.empty()) save_checkpoint(hooks_.checkpoint_path, state());
        TrainResult r{std::move(model_), std::move(report_), false};
        return r;
      }
      if (it_ % cfg_.validate_every == 0) validate(it_);
      step();
      const std::int64_t done = it_ + 1;
      if (!hooks_.checkpoint_path.empty() && hooks_.checkpoint_every > 0 &&
          done % hooks_.checkpoint_every == 0 && done < cfg_.iterations)
        save_checkpoint(hooks_.checkpoint_path, state());
    }
    validate(cfg_.iterations);
    if (spec_.keep_best) {
      auto& infos = model_.params().all();
      for (std::size_t i = 0; i < infos.size(); ++i) {
        auto dst = infos[i].tensor.mutable_data();
        std::copy(best_[i].begin(), best_[i].end(), dst.begin());
      }
      report_.best_iteration = best_iteration_;
    }
    const EvalOptions eo;
    auto val = evaluate(model_, corpus_, corpus_.val, spec_.tasks, eo);
    auto test = evaluate(model_, corpus_, corpus_.test, spec_.tasks, eo);
    report_.val = std::move(val.table);
    report_.test = std::move(test.table);
    for (const auto& [k, v] : val.extras) report_.extras["val." + k] = v;
    for (const auto& [k, v] : test.extras) report_.extras["test." + k] = v;
    if (cfg_.grad_method == GradMethod::kImtlg) {
      report_.extras["imtlg.updates"] = static_cast<double>(imtlg_updates_);
      report_.extras["imtlg.fallbacks"] = static_cast<double>(imtlg_fallbacks_);
      report_.extras["imtlg.max_projection_gap"] = imtlg_max_gap_;
    }
    const auto& mc = model_.config();
    report_.params = {{"model", account_json(metrics::enumerate_params(model_))},
                      {"mtl", account_json(metrics::param_account(mc, metrics::AccountMode::kMtl))},
                      {"stl_set",
                       account_json(metrics::param_account(mc, metrics::AccountMode::kStlSet))}};
    if (spec_.keep_best) model_.freeze();
    report_.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    TrainResult r{std::move(model_), std::move(report_), true};
    return r;
  }

 private:
  Task next_task() {
    if (cfg_.grad_method != GradMethod::kImtlg) return sampler_->next();
    if (cycle_pos_ == 0) {
      cycle_ = spec_.tasks;
      std::shuffle(cycle_.begin(), cycle_.end(), cycle_rng_);
    }
    const Task t = cycle_[cycle_pos_];
    cycle_pos_ = (cycle_pos_ + 1) % cycle_.size();
    return t;
  }

  void step() {
    const Task task = next_task();
    const TaskBatch batch = sample_batch(task, corpus_, cfg_.batch_size, batch_rng_);
    model_.params().clear_grads();
    LossValue lv;
    try {
      lv = combined_loss(batch, model_, cfg_.distill ? &bundle_ : nullptr);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNonFinite) throw;
      fail(ErrorKind::kNonFinite, "iteration " + std::to_string(it_) + ": " + e.what());
    }
    ad::Tensor total = lv.total;
    if (cfg_.grad_method == GradMethod::kIas) total = ad::scale(total, ias_.at(task));
    ad::backward(total);
    report_.losses.push_back({it_, task, lv.task_loss, lv.distill_loss});
    const auto lrs = learning_rates(model_, cfg_, it_);
    if (cfg_.grad_method == GradMethod::kImtlg) {
      std::vector<std::vector<double>> grads;
      for (const auto& p : model_.params().all())
        grads.push_back(p.tensor.has_grad() ? p.tensor.grad() : std::vector<double>{});
      buffer_.store(task, std::move(grads));
      if (buffer_.full()) {
        auto res = imtlg_step(buffer_, model_.params());
        ++imtlg_updates_;
        if (res.weights.fallback) ++imtlg_fallbacks_;
        imtlg_max_gap_ = std::max(imtlg_max_gap_, res.projection_gap);
        opt_.apply(lrs, res.grads);
      }
    } else {
      opt_.apply(lrs);
    }
    model_.clamp_temperatures();
  }

  void validate(std::int64_t iteration) {
    EvalOptions eo;
    const auto res = evaluate(model_, corpus_, corpus_.val, spec_.tasks, eo);
    const auto mu = metrics::task_means(res.table);
    for (const auto& [task, m] : res.table) {
      CurvePoint p;
      p.iteration = iteration;
      p.mu = mu.at(task);
      p.metrics = m.values;
      report_.curves[task].push_back(std::move(p));
    }
    if (hooks_.verbose) {
      std::cerr << "[" << spec_.tag << "] it " << iteration;
      for (const auto& [task, m] : mu) std::cerr << " " << task_name(task) << "=" << m;
      for (const auto& [k, v] : res.extras)
        if (k == "fic.valid_rate") std::cerr << " valid=" << v;
      std::cerr << "\n";
    }
    if (spec_.keep_best) {
      double score = 0.0;
      for (const auto& [task, m] : mu) score += m;
      if (best_iteration_ < 0 || score > best_score_) {
        best_score_ = score;
        best_iteration_ = iteration;
        best_.clear();
        for (const auto& p : model_.params().all()) {
          const auto d = p.tensor.data();
          best_.emplace_back(d.begin(), d.end());
        }
      }
    }
    if (cfg_.grad_method == GradMethod::kIas) ias_ = ias_scale(mu, spec_.teachers->val_mu);
  }

  Checkpoint state() const {
    Checkpoint ck;
    json h;
    h["format"] = "fashionmt.train_state";
    h["version"] = 1;
    h["kind"] = spec_.kind;
    h["tag"] = spec_.tag;
    h["tasks"] = join_tasks(spec_.tasks);
    h["model"] = model_.config().to_json();
    h["train"] = cfg_.to_json();
    h["iteration"] = it_;
    h["adam_step"] = opt_.step();
    h["sampler"] = sampler_->state();
    h["batch_rng"] = rng_text(batch_rng_);
    h["cycle_rng"] = rng_text(cycle_rng_);
    json cyc = json::array();
    for (Task t : cycle_) cyc.push_back(task_name(t));
    h["cycle"] = cyc;
    h["cycle_pos"] = cycle_pos_;
    json ias = json::object();
    for (const auto& [t, s] : ias_) ias[task_name(t)] = s;
    h["ias"] = ias;
    h["best_iteration"] = best_iteration_;
    h["best_score"] = best_score_;
    h["imtlg"] = {{"updates", imtlg_updates_}, {"fallbacks", imtlg_fallbacks_},
                  {"max_gap", imtlg_max_gap_}};
    h["report"] = report_.to_json();
    const auto& infos = model_.params().all();
    for (std::size_t i = 0; i < infos.size(); ++i) {
      const auto& name = infos[i].name;
      const auto& shape = infos[i].tensor.shape();
      const auto values = infos[i].tensor.data();
      ck.records.push_back({"param/" + name, shape, {values.begin(), values.end()}});
      ck.records.push_back({"adam.m/" + name, shape, opt_.first_moments()[i]});
      ck.records.push_back({"adam.v/" + name, shape, opt_.second_moments()[i]});
      if (!best_.empty()) ck.records.push_back({"best/" + name, shape, best_[i]});
    }
    json filled = json::array();
    for (Task t : buffer_.tasks()) {
      if (!buffer_.filled(t)) continue;
      filled.push_back(task_name(t));
      const auto& slot = buffer_.slot(t);
      for (std::size_t i = 0; i < infos.size(); ++i) {
        if (slot[i].empty()) continue;
        ck.records.push_back({std::string("buffer/") + task_name(t) + "/" + infos[i].name,
                              infos[i].tensor.shape(), slot[i]});
      }
    }
    h["buffer"] = filled;
    ck.header = std::move(h);
    return ck;
  }

  void restore(const Checkpoint& ck) {
    const json& h = ck.header;
    if (h.value("format", "") != "fashionmt.train_state")
      fail(ErrorKind::kFormat, "resume: not a training state checkpoint");
    if (h.at("model") != model_.config().to_json() || h.at("train") != cfg_.to_json() ||
        h.at("kind") != spec_.kind || h.at("tasks") != join_tasks(spec_.tasks))
      fail(ErrorKind::kInvalidArgument, "resume: checkpoint was written by a different run");
    it_ = h.at("iteration").get<std::int64_t>();
    opt_.set_step(h.at("adam_step").get<std::int64_t>());
    sampler_->restore(h.at("sampler"));
    rng_restore(batch_rng_, h.at("batch_rng").get<std::string>());
    rng_restore(cycle_rng_, h.at("cycle_rng").get<std::string>());
    cycle_.clear();
    for (const auto& t : h.at("cycle")) cycle_.push_back(parse_task(t.get<std::string>()));
    cycle_pos_ = h.at("cycle_pos").get<std::size_t>();
    ias_.clear();
    for (const auto& [k, v] : h.at("ias").items()) ias_[parse_task(k)] = v.get<double>();
    best_iteration_ = h.at("best_iteration").get<std::int64_t>();
    best_score_ = h.at("best_score").get<double>();
    imtlg_updates_ = h.at("imtlg").at("updates").get<std::int64_t>();
    imtlg_fallbacks_ = h.at("imtlg").at("fallbacks").get<std::int64_t>();
    imtlg_max_gap_ = h.at("imtlg").at("max_gap").get<double>();
    report_ = RunReport::from_json(h.at("report"));
    auto& infos = model_.params().all();
    auto need = [&](const std::string& name) -> const CheckpointRecord& {
      const CheckpointRecord* r = ck.find(name);
      if (!r) fail(ErrorKind::kFormat, "resume: missing record '" + name + "'");
      return *r;
    };
    best_.clear();
    for (std::size_t i = 0; i < infos.size(); ++i) {
      const auto& name = infos[i].name;
      const auto& p = need("param/" + name);
      if (p.values.size() != infos[i].tensor.numel())
        fail(ErrorKind::kShapeMismatch, "resume: size mismatch for '" + name + "'");
      auto dst = infos[i].tensor.mutable_data();
      std::copy(p.values.begin(), p.values.end(), dst.begin());
      opt_.first_moments()[i] = need("adam.m/" + name).values;
      opt_.second_moments()[i] = need("adam.v/" + name).values;
      if (best_iteration_ >= 0 && spec_.keep_best) best_.push_back(need("best/" + name).values);
    }
    buffer_.clear();
    for (const auto& t : h.at("buffer")) {
      const Task task = parse_task(t.get<std::string>());
      std::vector<std::vector<double>> slot(infos.size());
      for (std::size_t i = 0; i < infos.size(); ++i) {
        if (const auto* r = ck.find(std::string("buffer/") + task_name(task) + "/" + infos[i].name))
          slot[i] = r->values;
      }
      buffer_.store(task, std::move(slot));
    }
  }

  FameModel model_;
  TrainConfig cfg_;
  const data::Corpus& corpus_;
  LoopSpec spec_;
  TrainHooks hooks_;
  AdamW opt_;
  std::optional<TaskSampler> sampler_;
  std::mt19937_64 batch_rng_;
  std::mt19937_64 cycle_rng_;
  std::vector<Task> cycle_;
  std::size_t cycle_pos_ = 0;
  GradientBuffer buffer_;
  std::map<Task, double> ias_;
  TeacherBundle bundle_;
  RunReport report_;
  std::vector<std::vector<double>> best_;
  std::int64_t best_iteration_ = -1;
  double best_score_ = 0.0;
  std::int64_t imtlg_updates_ = 0;
  std::int64_t imtlg_fallbacks_ = 0;
  double imtlg_max_gap_ = 0.0;
  std::int64_t it_ = 0;
};

}  // namespace

TeacherBundle TeacherSet::bundle() const {
  TeacherBundle b;
  for (std::size_t i = 0; i < kNumTasks; ++i) b.models[i] = models[i].get();
  return b;
}

TrainResult train_teacher(Task task, const ModelConfig& model_cfg, const TrainConfig& cfg,
                          const data::Corpus& corpus, const TrainHooks& hooks) {
  if (task == Task::kFic && !model_cfg.use_xaa)
    fail(ErrorKind::kInvalidArgument, "train_teacher: captioning needs cross-attention adapters");
  TrainConfig c = cfg;
  c.distill = false;
  c.grad_method = GradMethod::kNone;
  LoopSpec spec;
  spec.kind = "teacher";
  spec.tag = std::string("STL ") + task_name(task);
  spec.tasks = {task};
  spec.keep_best = true;
  Loop loop(model_cfg, c, corpus, std::move(spec), hooks);
  return loop.run();
}

TrainResult train_mtl(const ModelConfig& model_cfg, const TrainConfig& cfg,
                      const data::Corpus& corpus, const TeacherSet* teachers,
                      const TrainHooks& hooks) {
  LoopSpec spec;
  spec.kind = "mtl";
  spec.tag = std::string("MTL") + (model_cfg.use_tsa ? " + TSA" : "") +
             (model_cfg.use_xaa ? " + XAA" : "") + (cfg.distill ? " + MTD" : "") + " [" +
             strategy_name(cfg.strategy) + ", " + grad_method_name(cfg.grad_method) + "]";
  spec.tasks = supported_tasks(model_cfg);
  spec.teachers = teachers;
  Loop loop(model_cfg, cfg, corpus, std::move(spec), hooks);
  return loop.run();
}

TeacherSet train_teacher_set(const ModelConfig& model_cfg, const TrainConfig& cfg,
                             const data::Corpus& corpus, bool verbose) {
  TeacherSet set;
  TrainHooks hooks;
  hooks.verbose = verbose;
  for (Task t : supported_tasks(model_cfg)) {
    auto res = train_teacher(t, model_cfg, cfg, corpus, hooks);
    set.val_mu[t] = metrics::task_means(res.report.val).at(t);
    set.test_mu[t] = metrics::task_means(res.report.test).at(t);
    set.models[task_index(t)] = std::make_unique<FameModel>(std::move(res.model));
    set.reports[task_index(t)] = std::move(res.report);
  }
  return set;
}

// ---- ablation -----------------------------------------------------------------------

std::vector<AblationRow> ablation_rows(const std::string& group) {
  using S = SamplingStrategy;
  using G = GradMethod;
  auto stl = [](int n, const char* tag, bool tsa, bool xaa) {
    AblationRow r;
    r.row = n;
    r.tag = tag;
    r.multi_task = false;
    r.use_tsa = tsa;
    r.use_xaa = xaa;
    return r;
  };
  auto mtl = [](int n, const char* tag, bool tsa, bool xaa, bool mtd, S s, G g,
                std::size_t bottleneck = 0) {
    AblationRow r;
    r.row = n;
    r.tag = tag;
    r.use_tsa = tsa;
    r.use_xaa = xaa;
    r.distill = mtd;
    r.strategy = s;
    r.grad_method = g;
    r.bottleneck = bottleneck;
    return r;
  };
  const S P = S::kSizeProportional;
  if (group == "I")
    return {stl(1, "STL", false, false), stl(2, "STL + TSA", true, false),
            stl(3, "STL + XAA", false, true), stl(4, "STL + TSA + XAA", true, true)};
  if (group == "II")
    return {mtl(5, "MTL", false, false, false, P, G::kNone),
            mtl(6, "MTL + TSA", true, false, false, P, G::kNone),
            mtl(7, "MTL + XAA", false, true, false, P, G::kNone),
            mtl(8, "MTL + TSA + XAA (base MTL)", true, true, false, P, G::kNone)};
  if (group == "III")
    return {mtl(9, "base MTL + MTD", true, true, true, P, G::kNone),
            mtl(10, "base MTL + MTD + Uniform", true, true, true, S::kUniform, G::kNone),
            mtl(11, "base MTL + MTD + Round-robin", true, true, true, S::kRoundRobin, G::kNone),
            mtl(12, "base MTL + IAS", true, true, false, P, G::kIas),
            mtl(13, "base MTL + MTD + IAS", true, true, true, P, G::kIas),
            mtl(14, "base MTL + IMTLG", true, true, false, P, G::kImtlg),
            mtl(15, "base MTL + MTD + IMTLG", true, true, true, P, G::kImtlg)};
  if (group == "IV")
    return {mtl(16, "base MTL + MTD (bottleneck 8)", true, true, true, P, G::kNone, 8),
            mtl(17, "base MTL + MTD (bottleneck 16)", true, true, true, P, G::kNone, 16),
            mtl(18, "base MTL + MTD (bottleneck 32)", true, true, true, P, G::kNone, 32)};
  fail(ErrorKind::kUnknownGroup, "unknown ablation group '" + group + "' (expected I, II, III, IV)");
}

ModelConfig row_model_config(const AblationRow& row, const ModelConfig& base) {
  ModelConfig c = base;
  c.use_tsa = row.use_tsa;
  c.use_xaa = row.use_xaa;
  if (row.bottleneck > 0) c.bottleneck = row.bottleneck;
  return c;
}

RowSaving row_param_saving(const AblationRow& row, const ModelConfig& base) {
  using metrics::AccountMode;
  auto saving = [&](const ModelConfig& b, const ModelConfig& c) {
    ModelConfig plain = b;
    plain.use_tsa = false;
    plain.use_xaa = false;
    const auto baseline = metrics::param_account(plain, AccountMode::kStlSet);
    const auto mine =
        metrics::param_account(c, row.multi_task ? AccountMode::kMtl : AccountMode::kStlSet);
    return metrics::param_saving(mine, baseline);
  };
  RowSaving s;
  s.toy = saving(base, row_model_config(row, base));
  ModelConfig clip = ModelConfig::clip_scale();
  AblationRow scaled = row;
  if (row.bottleneck > 0) scaled.bottleneck = row.bottleneck * 16;
  s.clip = saving(clip, row_model_config(scaled, clip));
  return s;
}

std::map<Task, double> run_row(const AblationRow& row, const ModelConfig& model_cfg,
                               const TrainConfig& cfg, const data::Corpus& corpus,
                               const TeacherSet& teachers, bool verbose) {
  const ModelConfig c = row_model_config(row, model_cfg);
  if (!row.multi_task) {
    if (c.to_json() == model_cfg.to_json() && model_cfg.use_tsa && model_cfg.use_xaa)
      return teachers.test_mu;
    const TeacherSet own = train_teacher_set(c, cfg, corpus, verbose);
    return own.test_mu;
  }
  TrainConfig t = cfg;
  t.distill = row.distill;
  t.strategy = row.strategy;
  t.grad_method = row.grad_method;
  TrainHooks hooks;
  hooks.verbose = verbose;
  const auto res = train_mtl(c, t, corpus, &teachers, hooks);
  return metrics::task_means(res.report.test);
}

AblationTable run_ablation(const std::string& group, const ModelConfig& model_cfg,
                           const TrainConfig& cfg, const AblationOptions& opts) {
  const auto rows = ablation_rows(group);
  if (opts.seeds.empty()) fail(ErrorKind::kInvalidArgument, "ablation: no seeds");
  AblationTable table;
  table.group = group;
  table.seeds = opts.seeds;
  for (std::uint64_t seed : opts.seeds) {
    const data::Corpus corpus = data::build_corpus(seed, opts.n_products, opts.sizes);
    ModelConfig mc = model_cfg;
    mc.seed = seed;
    const TeacherSet teachers = train_teacher_set(mc, cfg, corpus, opts.verbose);
    std::vector<AblationResult> results;
    for (const auto& row : rows) {
      AblationResult r;
      r.row = row;
      r.mu = run_row(row, mc, cfg, corpus, teachers, opts.verbose);
      r.saving = row_param_saving(row, mc);
      results.push_back(std::move(r));
    }
    std::map<Task, double> reference = teachers.test_mu;
    if (group == "I") {
      reference = results[0].mu;
      if (results[2].mu.count(Task::kFic)) reference[Task::kFic] = results[2].mu.at(Task::kFic);
    }
    for (auto& r : results) {
      double sum = 0.0;
      for (const auto& [task, mu] : r.mu) {
        if (!reference.count(task)) continue;
        r.delta[task] = metrics::relative_change(mu, reference.at(task));
        sum += r.delta[task];
      }
      r.average_delta = r.delta.empty() ? 0.0 : sum / static_cast<double>(r.delta.size());
    }
    table.per_seed.push_back(std::move(results));
  }
  const double n = static_cast<double>(opts.seeds.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    AblationResult mean;
    mean.row = rows[i];
    mean.saving = table.per_seed[0][i].saving;
    for (const auto& seed_rows : table.per_seed) {
      const auto& r = seed_rows[i];
      for (const auto& [t, v] : r.mu) mean.mu[t] += v / n;
      for (const auto& [t, v] : r.delta) mean.delta[t] += v / n;
      mean.average_delta += r.average_delta / n;
    }
    table.rows.push_back(std::move(mean));
  }
  return table;
}

namespace {

json result_json(const AblationResult& r) {
  json mu = json::object(), delta = json::object();
  for (const auto& [t, v] : r.mu) mu[task_name(t)] = v;
  for (const auto& [t, v] : r.delta) delta[task_name(t)] = v;
  return {{"row", r.row.row},
          {"tag", r.row.tag},
          {"mu", mu},
          {"delta", delta},
          {"average_delta", r.average_delta},
          {"param_saving_toy", r.saving.toy},
          {"param_saving_clip", r.saving.clip}};
}

}  // namespace

json AblationTable::to_json() const {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["group"] = group;
  j["seeds"] = seeds;
  json rj = json::array();
  for (const auto& r : rows) rj.push_back(result_json(r));
  j["rows"] = rj;
  json ps = json::array();
  for (const auto& seed_rows : per_seed) {
    json arr = json::array();
    for (const auto& r : seed_rows) arr.push_back(result_json(r));
    ps.push_back(arr);
  }
  j["per_seed"] = ps;
  return j;
}

std::string AblationTable::to_csv() const {
  std::string out = "row,tag,params_toy,params_clip";
  for (Task t : kAllTasks) out += std::string(",mu_") + task_name(t) + ",delta_" + task_name(t);
  out += ",average_delta\n";
  auto cell = [](const std::map<Task, double>& m, Task t) {
    return m.count(t) ? num(m.at(t)) : std::string("-");
  };
  for (const auto& r : rows) {
    out += std::to_string(r.row.row) + ",\"" + r.row.tag + "\"," + num(-100.0 * r.saving.toy) +
           "," + num(-100.0 * r.saving.clip);
    for (Task t : kAllTasks) out += "," + cell(r.mu, t) + "," + cell(r.delta, t);
    out += "," + num(r.average_delta) + "\n";
  }
  return out;
}

}  // namespace fashionmt
