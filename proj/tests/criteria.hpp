// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Property checks shared by the unit tests and the acceptance binary. Each
// returns pass/fail with a one-line detail.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fashionmt/autodiff.hpp"
#include "fashionmt/losses.hpp"
#include "fashionmt/metrics.hpp"
#include "fashionmt/model.hpp"
#include "fashionmt/training.hpp"

#include "fixtures.hpp"

namespace criteria {

using namespace fashionmt;
using ad::Tensor;

struct Outcome {
  bool pass = false;
  std::string detail;
};

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// ---- 1: every loss passes a finite-difference check ------------------------

inline double small_param_check(const std::function<Tensor()>& f, FameModel& m) {
  std::vector<Tensor> ps;
  for (const auto& p : m.params().all())
    if (p.tensor.numel() <= 64) ps.push_back(p.tensor);
  return ad::grad_check_params(f, ps);
}

inline Outcome gradient_fidelity() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(11);
  using fixtures::rand_tensor;
  std::map<std::string, double> err;
  auto worst_of = [&](const std::string& name, double e) { err[name] = std::max(err[name], e); };

  for (int trial = 0; trial < 3; ++trial) {
    Tensor a = rand_tensor({4, 5}, rng), b = rand_tensor({4, 5}, rng);
    Tensor lt = Tensor::from({}, {std::log(0.5)}, true);
    Tensor sims = rand_tensor({4, 4}, rng);
    worst_of("info_nce", ad::grad_check_params([&] { return info_nce(sims, lt); }, {sims, lt}));
    worst_of("xmr", ad::grad_check_params([&] { return xmr_loss(a, b, lt); }, {a, b, lt}));
    worst_of("tgir", ad::grad_check_params([&] { return tgir_loss(a, b, lt); }, {a, b, lt}));
    Tensor logits = rand_tensor({4, 12}, rng, -2, 2);
    const std::vector<std::size_t> labels = {0, 5, 11, 5};
    worst_of("scr", ad::grad_check([&](const Tensor& x) { return scr_loss(x, labels); }, logits));
    Tensor vocab = rand_tensor({6, 9}, rng, -2, 2);
    const std::vector<std::size_t> targets = {3, 8, 0, 1, 0, 2};
    worst_of("fic", ad::grad_check([&](const Tensor& x) { return fic_loss(x, targets, 0); }, vocab));
    Tensor s = rand_tensor({4, 4}, rng, -3, 3);
    const Tensor t = rand_tensor({4, 4}, rng, -3, 3, false);
    worst_of("kl", ad::grad_check([&](const Tensor& x) { return kl_rows(x, t); }, s));
    worst_of("distill_xmr", ad::grad_check([&](const Tensor& x) { return distill_xmr(x, t); }, s));
    worst_of("distill_tgir", ad::grad_check([&](const Tensor& x) { return distill_tgir(x, t); }, s));
    Tensor sl = rand_tensor({4, 12}, rng, -2, 2);
    const Tensor tl = rand_tensor({4, 12}, rng, -2, 2, false);
    worst_of("distill_scr", ad::grad_check([&](const Tensor& x) { return distill_scr(x, tl); }, sl));
    Tensor sv = rand_tensor({6, 9}, rng, -2, 2);
    const Tensor tv = rand_tensor({6, 9}, rng, -2, 2, false);
    worst_of("distill_fic", ad::grad_check(
                                [&](const Tensor& x) { return distill_fic(x, tv, targets, 0); }, sv));
  }
  // Full objective through the model, with and without teachers.
  const ModelConfig tiny = fixtures::tiny_config();
  FameModel student(tiny);
  ModelConfig tc = tiny;
  tc.seed = 1;
  FameModel teacher(tc);
  teacher.freeze();
  TeacherBundle bundle;
  for (auto& m : bundle.models) m = &teacher;
  for (Task task : kAllTasks) {
    const TaskBatch batch = fixtures::task_batch(task, 3);
    worst_of(std::string("combined_") + task_name(task),
             small_param_check([&] { return combined_loss(batch, student, nullptr).total; }, student));
    worst_of(std::string("combined_mtd_") + task_name(task),
             small_param_check([&] { return combined_loss(batch, student, &bundle).total; }, student));
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [k, v] : err)
    if (v >= worst) worst = v, worst_name = k;
  return {worst < 1e-4 && secs < 60.0,
          fmt("max rel err %.2e", worst) + " (" + worst_name + ")" + fmt(", %.1fs", secs)};
}

// ---- 2: zero adapters reproduce the plain backbone ----------------------------

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Outcome backbone_recovery() {
  ModelConfig full = ModelConfig::toy();
  ModelConfig plain = full;
  plain.use_tsa = false;
  plain.use_xaa = false;
  FameModel a(full), b(plain);
  for (auto& p : a.params().all()) {
    if (p.name.rfind("tsa.", 0) == 0 && p.name.size() > 6 &&
        p.name.compare(p.name.size() - 6, 6, ".scale") == 0)
      p.tensor.mutable_data()[0] = 0.0;
    // Live adapter weights, so the zero scale is what removes them.
    if (p.name.find(".up.w") != std::string::npos) {
      auto d = p.tensor.mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.03 * (static_cast<double>(i % 5) - 2.0);
    }
  }
  const auto xb = std::get<XmrBatch>(fixtures::task_batch(Task::kXmr, 6));
  double worst = 0.0;
  for (Task t : kAllTasks) {
    const auto sa = a.forward_streams(&xb.images, &xb.captions, t, Gates{});
    const auto sb = b.forward_streams(&xb.images, &xb.captions, std::nullopt, Gates{});
    worst = std::max({worst, max_abs_diff(sa.text, sb.text), max_abs_diff(sa.vision, sb.vision)});
  }
  worst = std::max(worst, max_abs_diff(a.encode_image(xb.images, Task::kXmr),
                                       b.encode_image(xb.images, Task::kXmr)));
  worst = std::max(worst, max_abs_diff(a.encode_text(xb.captions, Task::kTgir),
                                       b.encode_text(xb.captions, Task::kTgir)));
  return {worst <= 1e-12, fmt("max |diff| %.2e", worst)};
}

// ---- 3: IMTLG equal projections ------------------------------------------------

inline Outcome imtlg_property() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  double worst_gap = 0.0, worst_sum = 0.0;
  int fallbacks = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 10 + static_cast<std::size_t>(rng() % 491);
    std::vector<std::vector<double>> g(4, std::vector<double>(dim));
    for (auto& v : g)
      for (auto& x : v) x = n01(rng);
    const auto w = imtlg_alpha(g);
    fallbacks += w.fallback;
    worst_gap = std::max(worst_gap, imtlg_projection_gap(g, w.alpha));
    worst_sum =
        std::max(worst_sum, std::abs(std::accumulate(w.alpha.begin(), w.alpha.end(), 0.0) - 1.0));
  }
  return {worst_gap <= 1e-8 && worst_sum <= 1e-12 && fallbacks == 0,
          fmt("max projection gap %.2e, max |sum-1| %.2e, fallbacks %.0f", worst_gap, worst_sum,
              fallbacks)};
}

// ---- 4: parallel teacher forcing equals sequential decoding ----------------------

inline Outcome teacher_forcing_equivalence() {
  ad::NoGradGuard ng;
  const FameModel m(ModelConfig::toy());
  const auto& c = fixtures::corpus();
  double worst = 0.0, nll_sum = 0.0;
  std::size_t count = 0;
  std::vector<const data::PairRecord*> recs;
  for (std::size_t i = 0; i < 20; ++i) recs.push_back(&c.fic[i * 13]);
  for (const auto* r : recs) {
    const std::vector<const data::PairRecord*> one = {r};
    const FicBatch fb = data::fic_batch(c, one);
    const TeacherForcing tf = teacher_forcing(fb.captions, data::kPadId);
    const Tensor logits = m.fic_logits(fb.images, tf.prefix);
    const std::size_t v = logits.dim(2);
    const Tensor parallel =
        fic_loss(ad::reshape(logits, {tf.prefix.len, v}), tf.targets, data::kPadId);
    double seq = 0.0;
    std::size_t n = 0;
    for (std::size_t pos = 0; pos < tf.targets.size(); ++pos) {
      if (tf.targets[pos] == data::kPadId) continue;
      std::vector<std::size_t> prefix(r->tokens.begin(), r->tokens.begin() + pos + 1);
      const TokenBatch tb = TokenBatch::from_sequences({prefix}, data::kPadId);
      const Tensor step = m.fic_logits(fb.images, tb);
      const Tensor lp = ad::log_softmax(ad::slice(ad::reshape(step, {pos + 1, v}), 0, pos, pos + 1), 1);
      seq -= lp[tf.targets[pos]];
      ++n;
    }
    nll_sum += seq;
    count += n;
    worst = std::max(worst, std::abs(parallel.item() - seq / static_cast<double>(n)));
  }
  // Padded batch of all 20 against the pooled sequential mean.
  const FicBatch fb = data::fic_batch(c, recs);
  const TeacherForcing tf = teacher_forcing(fb.captions, data::kPadId);
  const Tensor logits = m.fic_logits(fb.images, tf.prefix);
  const std::size_t v = logits.dim(2);
  const Tensor batched =
      fic_loss(ad::reshape(logits, {tf.prefix.batch * tf.prefix.len, v}), tf.targets, data::kPadId);
  worst = std::max(worst, std::abs(batched.item() - nll_sum / static_cast<double>(count)));
  return {worst <= 1e-10, fmt("max |parallel - sequential| %.2e over 20 samples", worst)};
}

// ---- 5: distillation terms vanish at equality, stay >= 0, spare the teacher ------

inline Outcome distillation_sanity() {
  std::mt19937_64 rng(5);
  double at_equal = 0.0, most_negative = 0.0;
  // Direct terms.
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor s = fixtures::rand_tensor({5, 5}, rng, -4, 4, false);
    const Tensor t = fixtures::rand_tensor({5, 5}, rng, -4, 4, false);
    const std::vector<std::size_t> targets = {1, 0, 3, 4, 2};
    const Tensor terms_eq[] = {distill_xmr(s, s), distill_tgir(s, s), distill_scr(s, s),
                               distill_fic(s, s, targets, 0)};
    const Tensor terms[] = {distill_xmr(s, t), distill_tgir(s, t), distill_scr(s, t),
                            distill_fic(s, t, targets, 0)};
    for (const auto& x : terms_eq) at_equal = std::max(at_equal, std::abs(x.item()));
    for (const auto& x : terms) most_negative = std::min(most_negative, x.item());
  }
  // Through the model: a teacher identical to the student, and a distinct
  // teacher that still tracks gradients.
  FameModel student(ModelConfig::toy());
  const FameModel twin = student.clone();
  ModelConfig other_cfg = ModelConfig::toy();
  other_cfg.seed = 9;
  FameModel other(other_cfg);
  TeacherBundle same, diff;
  for (auto& m : same.models) m = &twin;
  for (auto& m : diff.models) m = &other;
  const auto checksum = other.params().checksum();
  bool teacher_clean = true;
  for (Task task : kAllTasks) {
    const TaskBatch batch = fixtures::task_batch(task, 6);
    {
      ad::NoGradGuard ng;
      at_equal = std::max(at_equal, std::abs(combined_loss(batch, student, &same).distill_loss));
    }
    const LossValue lv = combined_loss(batch, student, &diff);
    most_negative = std::min(most_negative, lv.distill_loss);
    ad::backward(lv.total);
    for (const auto& p : other.params().all())
      for (double g : p.tensor.grad()) teacher_clean &= g == 0.0;
    student.params().clear_grads();
  }
  teacher_clean &= other.params().checksum() == checksum;
  return {at_equal <= 1e-10 && most_negative >= 0.0 && teacher_clean,
          fmt("max |term| at equality %.2e, min term %.2e", at_equal, most_negative) +
              (teacher_clean ? ", teacher gradient zero" : ", teacher received gradient")};
}

// ---- 6: size-proportional sampling ---------------------------------------------

inline Outcome sampler_contract() {
  SamplerConfig cfg;
  cfg.sizes = {2000, 200, 2000, 2000};
  cfg.seed = 17;
  TaskSampler s(cfg);
  std::array<double, kNumTasks> counts{};
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) counts[task_index(s.next())] += 1.0;
  double worst = 0.0;
  for (std::size_t t = 0; t < kNumTasks; ++t)
    worst = std::max(worst, std::abs(counts[t] / draws - cfg.sizes[t] / 6200.0));
  return {worst <= 0.005, fmt("max |freq - p| %.4f at 100k draws", worst)};
}

// ---- 7: retrieval equals a brute-force oracle ------------------------------------

inline std::size_t brute_rank(std::span<const double> row, std::size_t gt,
                              std::vector<std::size_t> pool) {
  std::sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
    if (row[a] != row[b]) return row[a] > row[b];
    return a < b;
  });
  return static_cast<std::size_t>(std::find(pool.begin(), pool.end(), gt) - pool.begin()) + 1;
}

inline Outcome retrieval_oracle() {
  std::mt19937_64 rng(23);
  std::size_t mismatches = 0, checked = 0;
  for (std::size_t pool : {7u, 60u, 200u, 500u}) {
    const std::size_t queries = std::min<std::size_t>(pool, 40);
    std::vector<double> sims(queries * pool);
    // Coarse values force ties.
    for (auto& s : sims) s = static_cast<double>(rng() % 9) / 8.0;
    std::vector<std::size_t> gt(queries), groups(pool);
    for (auto& g : gt) g = rng() % pool;
    for (auto& g : groups) g = rng() % 3;
    metrics::RetrievalProblem p{sims, queries, pool, gt, groups};
    for (auto protocol : {metrics::Protocol::kFull, metrics::Protocol::kRandom100}) {
      const auto r = metrics::rank_queries(p, protocol, 99);
      std::vector<std::size_t> all(pool);
      std::iota(all.begin(), all.end(), 0);
      for (std::size_t q = 0; q < queries; ++q) {
        const std::span<const double> row(sims.data() + q * pool, pool);
        std::vector<std::size_t> members = all;
        if (protocol == metrics::Protocol::kRandom100) {
          members = r.pools[q];
          std::size_t same = 0;
          for (std::size_t c = 0; c < pool; ++c) same += groups[c] == groups[gt[q]];
          std::vector<std::size_t> sorted = members;
          std::sort(sorted.begin(), sorted.end());
          const bool valid =
              members.size() == std::min<std::size_t>(same, 100) &&
              std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end() &&
              std::find(members.begin(), members.end(), gt[q]) != members.end() &&
              std::all_of(members.begin(), members.end(),
                          [&](std::size_t c) { return groups[c] == groups[gt[q]]; });
          mismatches += !valid;
        }
        mismatches += brute_rank(row, gt[q], members) != r.ranks[q];
        ++checked;
      }
      for (std::size_t k : {1u, 5u}) {
        if (k > r.min_pool()) continue;
        std::size_t hits = 0;
        for (std::size_t q = 0; q < queries; ++q) hits += r.ranks[q] <= k;
        mismatches += metrics::recall_at(r, k) != static_cast<double>(hits) / queries;
      }
    }
  }
  return {mismatches == 0, fmt("%.0f mismatches over %.0f ranked queries", mismatches, checked)};
}

// ---- 8: parameter accounting --------------------------------------------------------

inline Outcome parameter_accounting() {
  bool exact = true;
  for (bool tsa : {false, true})
    for (bool xaa : {false, true}) {
      ModelConfig c = ModelConfig::toy();
      c.use_tsa = tsa;
      c.use_xaa = xaa;
      FameModel m(c);
      const auto closed = metrics::param_account(c, metrics::AccountMode::kMtl);
      const auto counted = metrics::enumerate_params(m);
      exact &= closed.total == counted.total && closed.components == counted.components &&
               counted.total == m.params().count();
    }
  ModelConfig clip = ModelConfig::clip_scale();
  auto saving = [&](std::size_t bottleneck) {
    ModelConfig c = clip;
    c.bottleneck = bottleneck;
    // The STL set is four vanilla single-task models (captioning keeps its cross attention).
    ModelConfig plain = c;
    plain.use_tsa = false;
    plain.use_xaa = false;
    return metrics::param_saving(metrics::param_account(c, metrics::AccountMode::kMtl),
                                 metrics::param_account(plain, metrics::AccountMode::kStlSet));
  };
  const double s64 = saving(64), s512 = saving(512);
  return {exact && s64 >= 0.60 && s64 <= 0.70 && s512 < s64,
          std::string(exact ? "toy counts exact" : "toy counts differ") +
              fmt(", CLIP saving %.2f%% (bottleneck 64), %.2f%% (bottleneck 512)", 100 * s64,
                  100 * s512)};
}

}  // namespace criteria
