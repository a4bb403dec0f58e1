// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "fashionmt/adapters.hpp"
#include "fashionmt/error.hpp"

namespace fashionmt::metrics {

using nlohmann::json;

const char* protocol_name(Protocol p) {
  return p == Protocol::kRandom100 ? "random100" : "full";
}

std::size_t RankingResult::min_pool() const {
  if (pool_sizes.empty()) return 0;
  return *std::min_element(pool_sizes.begin(), pool_sizes.end());
}

std::size_t rank_in_pool(std::span<const double> row, std::size_t gt,
                         std::span<const std::size_t> pool) {
  const double s = row[gt];
  std::size_t rank = 1;
  bool seen = false;
  for (std::size_t c : pool) {
    if (c == gt) {
      seen = true;
      continue;
    }
    if (row[c] > s || (row[c] == s && c < gt)) ++rank;
  }
  if (!seen) fail(ErrorKind::kInvalidArgument, "rank_in_pool: pool lacks the ground truth");
  return rank;
}

RankingResult rank_queries(const RetrievalProblem& p, Protocol protocol, std::uint64_t seed) {
  if (p.candidates == 0) fail(ErrorKind::kInvalidArgument, "retrieval: empty pool");
  if (p.sims.size() != p.queries * p.candidates || p.ground_truth.size() != p.queries) {
    fail(ErrorKind::kShapeMismatch, "retrieval: similarity matrix does not match query count");
  }
  if (protocol == Protocol::kRandom100 && p.candidate_groups.size() != p.candidates) {
    fail(ErrorKind::kInvalidArgument, "retrieval: random100 needs a group per candidate");
  }
  RankingResult r;
  r.protocol = protocol;
  std::vector<std::size_t> all(p.candidates);
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t q = 0; q < p.queries; ++q) {
    const std::size_t gt = p.ground_truth[q];
    if (gt >= p.candidates) fail(ErrorKind::kInvalidArgument, "retrieval: ground truth out of range");
    const auto row = p.sims.subspan(q * p.candidates, p.candidates);
    if (protocol == Protocol::kFull) {
      r.ranks.push_back(rank_in_pool(row, gt, all));
      r.pool_sizes.push_back(p.candidates);
      continue;
    }
    std::vector<std::size_t> others;
    for (std::size_t c = 0; c < p.candidates; ++c)
      if (c != gt && p.candidate_groups[c] == p.candidate_groups[gt]) others.push_back(c);
    const std::size_t take = std::min(others.size(), kRandomPoolSize - 1);
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j =
          i + std::uniform_int_distribution<std::size_t>(0, others.size() - 1 - i)(rng);
      std::swap(others[i], others[j]);
    }
    others.resize(take);
    others.push_back(gt);
    r.ranks.push_back(rank_in_pool(row, gt, others));
    r.pool_sizes.push_back(others.size());
    r.pools.push_back(std::move(others));
  }
  return r;
}

double recall_at(const RankingResult& r, std::size_t k) {
  if (r.ranks.empty()) fail(ErrorKind::kInvalidArgument, "recall_at: no queries");
  if (k == 0 || k > r.min_pool()) {
    fail(ErrorKind::kInvalidArgument, "recall_at: k = " + std::to_string(k) +
                                          " exceeds pool size " + std::to_string(r.min_pool()));
  }
  std::size_t hits = 0;
  for (std::size_t rank : r.ranks) hits += rank <= k;
  return static_cast<double>(hits) / static_cast<double>(r.ranks.size());
}

RetrievalScores eval_retrieval(const RetrievalProblem& problem, Protocol protocol,
                               std::span<const std::size_t> ks, std::uint64_t seed) {
  const RankingResult r = rank_queries(problem, protocol, seed);
  RetrievalScores s;
  s.protocol = protocol;
  s.min_pool = r.min_pool();
  for (std::size_t k : ks) s.recall.emplace_back(k, recall_at(r, k));
  return s;
}

// ---- classification ---------------------------------------------------------

ClassificationScores classification_metrics(std::span<const std::size_t> preds,
                                            std::span<const std::size_t> labels,
                                            std::size_t num_classes) {
  if (preds.size() != labels.size()) {
    fail(ErrorKind::kShapeMismatch, "classification_metrics: length mismatch");
  }
  if (labels.empty()) fail(ErrorKind::kInvalidArgument, "classification_metrics: no samples");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || preds[i] >= num_classes) {
      fail(ErrorKind::kInvalidArgument, "classification_metrics: label out of range");
    }
    if (preds[i] == labels[i]) {
      ++correct;
      ++tp[labels[i]];
    } else {
      ++fp[preds[i]];
      ++fn[labels[i]];
    }
  }
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    if (denom > 0.0) f1_sum += 2.0 * tp[c] / denom;
  }
  return {static_cast<double>(correct) / labels.size(), f1_sum / num_classes};
}

// ---- captions -----------------------------------------------------------

namespace {

using NgramCounts = std::map<std::vector<std::string>, double>;

NgramCounts ngrams(const Sentence& s, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= s.size(); ++i)
    out[std::vector<std::string>(s.begin() + i, s.begin() + i + n)] += 1.0;
  return out;
}

std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double bleu4(const Sentence& hyp, const std::vector<Sentence>& refs) {
  if (hyp.empty()) return 0.0;
  if (refs.empty()) fail(ErrorKind::kInvalidArgument, "bleu4: no references");
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const NgramCounts h = ngrams(hyp, n);
    NgramCounts max_ref;
    for (const Sentence& r : refs)
      for (const auto& [g, c] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
    double clipped = 0.0, total = 0.0;
    for (const auto& [g, c] : h) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(c, it->second);
    }
    const double precision =
        (total == 0.0 || clipped == 0.0) ? kBleuEpsilon : clipped / total;
    log_sum += 0.25 * std::log(precision);
  }
  // closest reference length, shorter wins ties
  std::size_t ref_len = refs[0].size();
  for (const Sentence& r : refs) {
    const auto d = [&](std::size_t l) {
      return l > hyp.size() ? l - hyp.size() : hyp.size() - l;
    };
    if (d(r.size()) < d(ref_len) || (d(r.size()) == d(ref_len) && r.size() < ref_len))
      ref_len = r.size();
  }
  const double bp = hyp.size() >= ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / hyp.size());
  return bp * std::exp(log_sum);
}

double rouge_l(const Sentence& hyp, const Sentence& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  const double l = static_cast<double>(lcs_length(hyp, ref));
  if (l == 0.0) return 0.0;
  const double p = l / hyp.size(), r = l / ref.size();
  return 2.0 * p * r / (p + r);
}

double cider(const std::vector<Sentence>& hyps, const std::vector<std::vector<Sentence>>& refs) {
  if (hyps.size() != refs.size()) fail(ErrorKind::kShapeMismatch, "cider: one reference set per hypothesis");
  if (hyps.empty()) fail(ErrorKind::kInvalidArgument, "cider: empty evaluation set");
  const double n_docs = static_cast<double>(refs.size());
  double total = 0.0;
  std::vector<double> per_item(hyps.size(), 0.0);
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<std::string>, double> df;
    std::vector<std::vector<NgramCounts>> ref_counts(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
      std::map<std::vector<std::string>, bool> seen;
      for (const Sentence& r : refs[i]) {
        ref_counts[i].push_back(ngrams(r, n));
        for (const auto& [g, c] : ref_counts[i].back()) seen[g] = true;
      }
      for (const auto& [g, b] : seen) df[g] += 1.0;
    }
    auto weigh = [&](const NgramCounts& counts) {
      std::map<std::vector<std::string>, double> v;
      for (const auto& [g, c] : counts) {
        auto it = df.find(g);
        const double d = it == df.end() ? 0.0 : it->second;
        v[g] = c * std::log(n_docs / std::max(1.0, d));
      }
      return v;
    };
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      const auto h = weigh(ngrams(hyps[i], n));
      double hn = 0.0;
      for (const auto& [g, w] : h) hn += w * w;
      double score = 0.0;
      for (const NgramCounts& rc : ref_counts[i]) {
        const auto r = weigh(rc);
        double rn = 0.0, dot = 0.0;
        for (const auto& [g, w] : r) {
          rn += w * w;
          auto it = h.find(g);
          if (it != h.end()) dot += w * it->second;
        }
        if (hn > 0.0 && rn > 0.0) score += dot / (std::sqrt(hn) * std::sqrt(rn));
      }
      if (!refs[i].empty()) score /= static_cast<double>(refs[i].size());
      per_item[i] += score / 4.0;
    }
  }
  for (double v : per_item) total += v;
  return 10.0 * total / static_cast<double>(hyps.size());
}

// ---- summaries --------------------------------------------------------------

double TaskMetrics::mean() const {
  if (values.empty()) fail(ErrorKind::kInvalidArgument, "task metrics: empty metric set");
  double s = 0.0;
  for (const auto& [name, v] : values) s += v;
  return s / static_cast<double>(values.size());
}

double MetricSummary::average_delta() const {
  if (delta.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [t, d] : delta) s += d;
  return s / static_cast<double>(delta.size());
}

double relative_change(double mu, double reference) {
  if (reference == 0.0) fail(ErrorKind::kInvalidArgument, "relative change against a zero reference");
  return (mu - reference) / reference;
}

std::map<Task, double> task_means(const MetricTable& raw) {
  std::map<Task, double> out;
  for (const auto& [t, m] : raw) out[t] = m.mean();
  return out;
}

MetricSummary summarize(const MetricTable& raw, const std::map<Task, double>* reference) {
  MetricSummary s;
  s.mu = task_means(raw);
  if (reference) {
    for (const auto& [t, mu] : s.mu) {
      auto it = reference->find(t);
      if (it != reference->end()) s.delta[t] = relative_change(mu, it->second);
    }
  }
  return s;
}

json table_to_json(const MetricTable& raw) {
  json j = json::object();
  for (const auto& [t, m] : raw) {
    json task = json::array();
    for (const auto& [name, v] : m.values) task.push_back({{"metric", name}, {"value", v}});
    j[task_name(t)] = task;
  }
  return j;
}

MetricTable table_from_json(const json& j) {
  MetricTable out;
  for (const auto& [name, arr] : j.items()) {
    TaskMetrics m;
    for (const json& e : arr) m.values.emplace_back(e.at("metric").get<std::string>(), e.at("value").get<double>());
    out[parse_task(name)] = m;
  }
  return out;
}

// ---- parameter accounting ------------------------------------------------

std::size_t ParamAccount::component(const std::string& name) const {
  std::size_t s = 0;
  for (const auto& [n, c] : components)
    if (n == name) s += c;
  return s;
}

std::size_t stream_param_count(const StreamConfig& s, std::size_t embed_dim) {
  const std::size_t d = s.width, h = d * s.mlp_ratio;
  std::size_t n = 0;
  if (s.kind == StreamKind::kText) {
    n += s.vocab_size * d;
  } else {
    n += s.patch_dim() * d + d;  // patch projection
    n += d;                      // class token
  }
  n += s.max_tokens() * d;  // positions
  const std::size_t layer = 2 * d                 // ln1
                            + 4 * (d * d + d)     // q, k, v, o
                            + 2 * d               // ln2
                            + (d * h + h)         // fc1
                            + (h * d + d);        // fc2
  n += s.layers * layer;
  n += 2 * d;              // final norm
  n += d * embed_dim;      // projection
  return n;
}

std::size_t tsa_set_param_count(const ModelConfig& cfg) {
  return cfg.text.layers * (adapt_mlp_param_count(cfg.text.width, cfg.bottleneck) +
                            adapt_mlp_param_count(cfg.vision.width, cfg.bottleneck));
}

std::size_t xaa_param_total(const ModelConfig& cfg, bool image_to_text, bool text_to_image) {
  std::size_t per_layer = 0;
  if (image_to_text)
    per_layer += xaa_param_count(cfg.text.width, cfg.vision.width, cfg.xaa_width, cfg.bottleneck);
  if (text_to_image)
    per_layer += xaa_param_count(cfg.vision.width, cfg.text.width, cfg.xaa_width, cfg.bottleneck);
  return cfg.text.layers * per_layer;
}

std::size_t head_param_count(const ModelConfig& cfg, Task task) {
  switch (task) {
    case Task::kXmr:
    case Task::kTgir: return 1;  // temperature
    case Task::kScr: return cfg.embed_dim * cfg.num_classes + cfg.num_classes;
    case Task::kFic: return cfg.tie_caption_head ? 0 : cfg.text.width * cfg.text.vocab_size;
  }
  return 0;
}

ParamAccount param_account(const ModelConfig& cfg, AccountMode mode) {
  cfg.validate();
  ParamAccount a;
  a.mode = mode;
  const std::size_t text = stream_param_count(cfg.text, cfg.embed_dim);
  const std::size_t vision = stream_param_count(cfg.vision, cfg.embed_dim);
  if (mode == AccountMode::kMtl) {
    a.components.emplace_back("backbone.text", text);
    a.components.emplace_back("backbone.vision", vision);
    if (cfg.use_tsa)
      for (Task t : kAllTasks)
        a.components.emplace_back(std::string("tsa.") + task_name(t), tsa_set_param_count(cfg));
    if (cfg.use_xaa) a.components.emplace_back("xaa", xaa_param_total(cfg, true, true));
    for (Task t : kAllTasks)
      a.components.emplace_back(std::string("head.") + task_name(t), head_param_count(cfg, t));
  } else {
    for (Task t : kAllTasks) {
      const std::string p = std::string(task_name(t)) + ".";
      a.components.emplace_back(p + "backbone.text", text);
      a.components.emplace_back(p + "backbone.vision", vision);
      if (cfg.use_tsa) a.components.emplace_back(p + "tsa", tsa_set_param_count(cfg));
      if (cfg.use_xaa)
        a.components.emplace_back(p + "xaa", xaa_param_total(cfg, true, true));
      else if (t == Task::kFic)
        a.components.emplace_back(p + "xaa", xaa_param_total(cfg, true, false));
      a.components.emplace_back(p + "head", head_param_count(cfg, t));
    }
  }
  for (const auto& [n, c] : a.components) a.total += c;
  return a;
}

double param_saving(const ParamAccount& account, const ParamAccount& baseline) {
  if (baseline.total == 0) fail(ErrorKind::kInvalidArgument, "param_saving: empty baseline");
  return 1.0 - static_cast<double>(account.total) / static_cast<double>(baseline.total);
}

ParamAccount enumerate_params(const FameModel& model) {
  ParamAccount a;
  a.mode = AccountMode::kMtl;
  std::map<std::string, std::size_t> by;
  auto bump = [&](const std::string& key, std::size_t n) { by[key] += n; };
  for (const ParamInfo& p : model.params().all()) {
    const std::string& n = p.name;
    const std::size_t c = p.tensor.numel();
    if (n.rfind("text.", 0) == 0) {
      bump("backbone.text", c);
    } else if (n.rfind("vision.", 0) == 0) {
      bump("backbone.vision", c);
    } else if (n.rfind("tsa.", 0) == 0) {
      bump("tsa." + n.substr(4, n.find('.', 4) - 4), c);
    } else if (n.rfind("xaa.", 0) == 0) {
      bump("xaa", c);
    } else if (n.rfind("head.scr", 0) == 0) {
      bump("head.scr", c);
    } else if (n.rfind("head.fic", 0) == 0) {
      bump("head.fic", c);
    } else if (n == "temperature.xmr") {
      bump("head.xmr", c);
    } else if (n == "temperature.tgir") {
      bump("head.tgir", c);
    } else {
      fail(ErrorKind::kInvalidArgument, "enumerate_params: unclassified parameter '" + n + "'");
    }
  }
  // Same component order as param_account.
  std::vector<std::string> canon = {"backbone.text", "backbone.vision"};
  for (Task t : kAllTasks) canon.push_back(std::string("tsa.") + task_name(t));
  canon.push_back("xaa");
  for (Task t : kAllTasks) canon.push_back(std::string("head.") + task_name(t));
  for (const auto& k : canon) {
    const bool head = k.rfind("head.", 0) == 0;
    if (!by.count(k) && !head) continue;
    a.components.emplace_back(k, by[k]);
    a.total += by[k];
  }
  return a;
}

}  // namespace fashionmt::metrics
