// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"

#include "criteria.hpp"
#include "fashionmt/error.hpp"
#include "fashionmt/training.hpp"

using namespace fashionmt;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::kShapeMismatch;
}

TrainConfig short_config(std::int64_t iterations = 24) {
  TrainConfig c;
  c.iterations = iterations;
  c.batch_size = 4;
  c.validate_every = 8;
  return c;
}

// Teachers are expensive; share one small set across cases.
const TeacherSet& tiny_teachers() {
  static const TeacherSet t =
      train_teacher_set(fixtures::tiny_config(), short_config(16), fixtures::corpus());
  return t;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("fashionmt_" + name)).string();
}

}  // namespace

TEST_CASE("optimizer hand steps") {
  ad::Tensor p = ad::Tensor::from({1}, {1.0}, true);
  AdamWConfig c;
  c.weight_decay = 0.0;
  AdamW opt({p}, c);
  const double lr[] = {0.1};
  opt.apply(lr, {{1.0}});
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
  ad::Tensor q = ad::Tensor::from({1}, {2.0}, true);
  AdamWConfig d;
  d.weight_decay = 1e-5;
  AdamW opt2({q}, d);
  const double one[] = {1.0};
  opt2.apply(one, {{0.0}});
  CHECK(q[0] == doctest::Approx(2.0 * (1 - 1e-5)).epsilon(1e-12));
  // Empty gradients leave the parameter alone.
  opt2.apply(one, {{}});
  CHECK(q[0] == doctest::Approx(2.0 * (1 - 1e-5)).epsilon(1e-12));
}

TEST_CASE("learning-rate schedule") {
  LrSchedule s;
  s.base = 1e-4;
  s.warmup_iters = 100;
  s.milestones = {500, 800};
  CHECK(s.rate(0) == doctest::Approx(2.5e-5));
  CHECK(s.rate(100) == doctest::Approx(1e-4));
  CHECK(s.rate(900) == doctest::Approx(1e-6));
  s.warmup_iters = 0;
  CHECK(s.rate(0) == doctest::Approx(1e-4));
  s.milestones = {800, 500};
  CHECK_THROWS_AS(s.validate(), Error);
  const LrSchedule t = LrSchedule::scaled(1.0, 900);
  CHECK(t.milestones == std::vector<std::int64_t>{500, 800});
  CHECK(t.warmup_iters == 100);
}

TEST_CASE("sampler contract") {
  const auto r = criteria::sampler_contract();
  INFO(r.detail);
  CHECK(r.pass);
  SamplerConfig u;
  u.strategy = SamplingStrategy::kUniform;
  u.sizes = {2000, 200, 2000, 2000};
  TaskSampler su(u);
  std::array<double, kNumTasks> counts{};
  for (int i = 0; i < 100000; ++i) counts[task_index(su.next())] += 1;
  for (double c : counts) CHECK(std::abs(c / 100000 - 0.25) <= 0.005);
  SamplerConfig rr = u;
  rr.strategy = SamplingStrategy::kRoundRobin;
  TaskSampler sr(rr);
  for (int i = 0; i < 8; ++i) CHECK(sr.next() == kAllTasks[i % 4]);
  const auto p = SamplerConfig{SamplingStrategy::kSizeProportional, {kAllTasks.begin(), kAllTasks.end()},
                               {2000, 200, 2000, 2000}, 0}
                     .probabilities();
  CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-12);
  CHECK(p[1] == doctest::Approx(200.0 / 6200));
  SamplerConfig empty = u;
  empty.tasks.clear();
  CHECK_THROWS_AS(empty.validate(), Error);
}

TEST_CASE("sampler state restores the stream") {
  SamplerConfig c;
  c.sizes = {5, 1, 5, 5};
  c.seed = 4;
  TaskSampler a(c);
  for (int i = 0; i < 17; ++i) a.next();
  TaskSampler b(c);
  b.restore(a.state());
  for (int i = 0; i < 50; ++i) CHECK(a.next() == b.next());
}

TEST_CASE("ias scales") {
  const std::map<Task, double> teacher = {{Task::kXmr, 80}, {Task::kScr, 60}, {Task::kTgir, 40}};
  auto s = ias_scale(teacher, teacher);
  for (const auto& [t, v] : s) CHECK(v == doctest::Approx(1.0));
  std::map<Task, double> val = teacher;
  val[Task::kScr] = 30;
  s = ias_scale(val, teacher);
  CHECK(s[Task::kScr] > s[Task::kXmr]);
  CHECK(s[Task::kScr] > s[Task::kTgir]);
  double mean = 0;
  for (const auto& [t, v] : s) mean += v / 3;
  CHECK(mean == doctest::Approx(1.0));
  // Renormalizing constant c = 1 / raw mean; raw scales are within [0.25, 4].
  const double c = 3.0 / (0.5 + 0.25 + 0.25);
  for (const auto& [t, v] : s) {
    CHECK(v >= 0.25 * c - 1e-12);
    CHECK(v <= 4.0 * c + 1e-12);
  }
  const std::map<Task, double> missing = {{Task::kXmr, 80}};
  CHECK(kind_of([&] { ias_scale(val, missing); }) == ErrorKind::kMissingTeacher);
}

TEST_CASE("imtlg hand cases") {
  auto w = imtlg_alpha({{1, 0}, {0, 1}});
  CHECK(w.alpha[0] == doctest::Approx(0.5));
  CHECK(w.alpha[1] == doctest::Approx(0.5));
  w = imtlg_alpha({{2, 0}, {0, 1}});
  CHECK(w.alpha[0] == doctest::Approx(1.0 / 3));
  CHECK(w.alpha[1] == doctest::Approx(2.0 / 3));
  CHECK(imtlg_projection_gap({{2, 0}, {0, 1}}, w.alpha) < 1e-12);
  w = imtlg_alpha({{1, 0}, {2, 0}});
  CHECK(w.fallback);
  CHECK(w.alpha[0] == 0.5);
  CHECK(kind_of([] { imtlg_alpha({{0, 0}, {0, 1}}); }) == ErrorKind::kDegenerateGradient);
  CHECK_THROWS_AS(imtlg_alpha({{1, 0}}), Error);
}

TEST_CASE("imtlg equal projections on random gradient sets") {
  const auto r = criteria::imtlg_property();
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("gradient buffer and imtlg step") {
  ParamStore store;
  store.add("shared", {2}, {0, 0}, ParamGroup::kBackbone);
  store.add("own.scr", {1}, {0}, ParamGroup::kHead, Task::kScr);
  const std::vector<Task> tasks = {kAllTasks.begin(), kAllTasks.end()};
  GradientBuffer buf(tasks, 2);
  buf.store(Task::kXmr, {{1, 2}, {}});
  CHECK_FALSE(buf.full());
  CHECK(kind_of([&] { imtlg_step(buf, store); }) == ErrorKind::kPartialBuffer);
  CHECK(kind_of([&] { buf.slot(Task::kFic); }) == ErrorKind::kPartialBuffer);
  for (Task t : {Task::kTgir, Task::kScr, Task::kFic})
    buf.store(t, {{1, 2}, t == Task::kScr ? std::vector<double>{7} : std::vector<double>{}});
  REQUIRE(buf.full());
  const auto res = imtlg_step(buf, store);
  CHECK(res.grads[0][0] == doctest::Approx(1.0));
  CHECK(res.grads[0][1] == doctest::Approx(2.0));
  CHECK(res.grads[1] == std::vector<double>{7});
  CHECK(std::accumulate(res.weights.alpha.begin(), res.weights.alpha.end(), 0.0) ==
        doctest::Approx(1.0));
  for (Task t : tasks) CHECK_FALSE(buf.filled(t));
  CHECK_THROWS_AS(buf.store(Task::kXmr, {{1, 2}}), Error);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.batch_size = 1;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::kConfigSchema);
  c = TrainConfig{};
  c.lr_backbone = 0;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::kConfigSchema);
  c = TrainConfig{};
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK(kind_of([] { parse_strategy("greedy"); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("frozen models reject the optimizer") {
  FameModel m(fixtures::tiny_config());
  m.freeze();
  CHECK(kind_of([&] { make_optimizer(m, TrainConfig{}); }) == ErrorKind::kFrozen);
}

TEST_CASE("a teacher improves and comes back frozen") {
  TrainConfig c = short_config(300);
  c.batch_size = 16;
  c.validate_every = 100;
  const TrainResult r = train_teacher(Task::kXmr, ModelConfig::toy(), c, fixtures::corpus());
  CHECK(r.model.frozen());
  const auto& curve = r.report.curves.at(Task::kXmr);
  double best = 0;
  for (const auto& p : curve) best = std::max(best, p.mu);
  CHECK(best > curve.front().mu);
  CHECK(r.report.best_iteration >= 0);
  CHECK(r.report.tag == "STL xmr");
}

TEST_CASE("teacher training errors") {
  ModelConfig c = fixtures::tiny_config();
  c.use_xaa = false;
  CHECK(kind_of([&] { train_teacher(Task::kFic, c, short_config(), fixtures::corpus()); }) ==
        ErrorKind::kInvalidArgument);
  TrainConfig d = short_config();
  d.distill = true;
  CHECK(kind_of([&] { train_mtl(fixtures::tiny_config(), d, fixtures::corpus(), nullptr); }) ==
        ErrorKind::kMissingTeacher);
}

TEST_CASE("training is deterministic") {
  TrainConfig c = short_config();
  c.distill = true;
  const auto a = train_mtl(fixtures::tiny_config(), c, fixtures::corpus(), &tiny_teachers());
  const auto b = train_mtl(fixtures::tiny_config(), c, fixtures::corpus(), &tiny_teachers());
  CHECK(a.model.params().checksum() == b.model.params().checksum());
  CHECK(a.report.to_json().dump() == b.report.to_json().dump());
  CHECK(a.report.tag == "MTL + TSA + XAA + MTD [size_proportional, none]");
  CHECK(RunReport::from_json(a.report.to_json()).to_json() == a.report.to_json());
}

TEST_CASE("teachers are untouched by distillation") {
  const TeacherSet& t = tiny_teachers();
  std::vector<std::uint64_t> before;
  for (const auto& m : t.models) before.push_back(m->params().checksum());
  TrainConfig c = short_config();
  c.distill = true;
  train_mtl(fixtures::tiny_config(), c, fixtures::corpus(), &t);
  for (std::size_t i = 0; i < kNumTasks; ++i) CHECK(t.models[i]->params().checksum() == before[i]);
}

TEST_CASE("resume after interruption is bit-identical") {
  for (GradMethod g : {GradMethod::kIas, GradMethod::kImtlg}) {
    TrainConfig c = short_config(30);
    c.grad_method = g;
    c.distill = g == GradMethod::kIas;
    const auto whole = train_mtl(fixtures::tiny_config(), c, fixtures::corpus(), &tiny_teachers());
    const std::string path = temp_path("resume.ckpt");
    TrainHooks stop;
    stop.checkpoint_path = path;
    stop.stop_after = 13;  // mid-cycle for imtlg
    const auto part = train_mtl(fixtures::tiny_config(), c, fixtures::corpus(), &tiny_teachers(), stop);
    CHECK_FALSE(part.finished);
    TrainHooks resume;
    resume.resume_from = path;
    const auto rest = train_mtl(fixtures::tiny_config(), c, fixtures::corpus(), &tiny_teachers(), resume);
    CHECK(rest.finished);
    CHECK(rest.model.params().checksum() == whole.model.params().checksum());
    CHECK(rest.report.to_json().dump() == whole.report.to_json().dump());
    if (g == GradMethod::kImtlg) {
      CHECK(whole.report.extras.at("imtlg.updates") == 7);
      CHECK(whole.report.extras.at("imtlg.max_projection_gap") <= 1e-8);
    }
    TrainConfig other = c;
    other.iterations = 31;
    CHECK(kind_of([&] {
            train_mtl(fixtures::tiny_config(), other, fixtures::corpus(), &tiny_teachers(), resume);
          }) == ErrorKind::kInvalidArgument);
    std::filesystem::remove(path);
  }
}

TEST_CASE("ablation rows") {
  CHECK(ablation_rows("I").size() == 4);
  CHECK(ablation_rows("II").size() == 4);
  CHECK(ablation_rows("III").size() == 7);
  const auto g4 = ablation_rows("IV");
  REQUIRE(g4.size() == 3);
  CHECK(g4[0].bottleneck == 8);
  CHECK(g4[2].bottleneck == 32);
  CHECK(ablation_rows("II")[3].tag == "MTL + TSA + XAA (base MTL)");
  CHECK(ablation_rows("III")[0].tag == "base MTL + MTD");
  CHECK(kind_of([] { ablation_rows("V"); }) == ErrorKind::kUnknownGroup);
  const ModelConfig base = ModelConfig::toy();
  CHECK(row_param_saving(g4[0], base).clip > row_param_saving(g4[2], base).clip);
  CHECK(row_param_saving(ablation_rows("I")[0], base).toy == 0.0);
}

TEST_CASE("a small ablation table has one row per definition") {
  TrainConfig c = short_config(8);
  AblationOptions o;
  const auto t = run_ablation("II", fixtures::tiny_config(), c, o);
  CHECK(t.rows.size() == 4);
  CHECK(t.per_seed.size() == 1);
  CHECK(t.to_json()["rows"].size() == 4);
  const std::string csv = t.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') >= 5);
}
