// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Evaluation quantities: retrieval ranks and R@K, accuracy and macro-F1,
// BLEU-4 / ROUGE-L / CIDEr, per-task means with relative change, and
// closed-form parameter accounting.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fashionmt/model.hpp"
#include "fashionmt/params.hpp"

namespace fashionmt::metrics {

// ---- retrieval ------------------------------------------------------------

enum class Protocol { kRandom100, kFull };
const char* protocol_name(Protocol p);

inline constexpr std::size_t kRandomPoolSize = 100;

struct RankingResult {
  Protocol protocol = Protocol::kFull;
  std::vector<std::size_t> ranks;       // 1-based, per query
  std::vector<std::size_t> pool_sizes;  // per query
  std::vector<std::vector<std::size_t>> pools;  // random100 members per query
  std::size_t min_pool() const;
};

// Similarities are row-major (queries x candidates). Candidate ids are the
// column indices; ties rank the lower id first.
struct RetrievalProblem {
  std::span<const double> sims;
  std::size_t queries = 0;
  std::size_t candidates = 0;
  std::span<const std::size_t> ground_truth;       // candidate column per query
  std::span<const std::size_t> candidate_groups;   // category per candidate (random100)
};

// Rank of column `gt` among `pool` (which must contain gt) for one row.
std::size_t rank_in_pool(std::span<const double> row, std::size_t gt,
                         std::span<const std::size_t> pool);

// Full: every candidate. Random100: the ground truth plus up to 99 others of
// its group, sampled with `seed`; smaller groups shrink the pool.
RankingResult rank_queries(const RetrievalProblem& problem, Protocol protocol,
                           std::uint64_t seed);

// Mean fraction of queries with rank <= k. k larger than the smallest pool
// is an error.
double recall_at(const RankingResult& r, std::size_t k);

struct RetrievalScores {
  Protocol protocol = Protocol::kFull;
  std::size_t min_pool = 0;
  std::vector<std::pair<std::size_t, double>> recall;  // (k, R@k)
};

RetrievalScores eval_retrieval(const RetrievalProblem& problem, Protocol protocol,
                               std::span<const std::size_t> ks, std::uint64_t seed);

// ---- classification ---------------------------------------------------------

struct ClassificationScores {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

// Classes absent from both labels and predictions count as F1 = 0.
ClassificationScores classification_metrics(std::span<const std::size_t> preds,
                                            std::span<const std::size_t> labels,
                                            std::size_t num_classes);

// ---- captions -----------------------------------------------------------

using Sentence = std::vector<std::string>;

inline constexpr double kBleuEpsilon = 1e-9;

// Clipped 1-4 gram precisions (zero counts replaced by kBleuEpsilon),
// geometric mean, brevity penalty against the closest reference length.
double bleu4(const Sentence& hyp, const std::vector<Sentence>& refs);
// LCS F-measure, beta = 1.
double rouge_l(const Sentence& hyp, const Sentence& ref);
// Mean over items of the averaged 1-4 gram tf-idf cosine, x10. Document
// frequencies come from the reference sets of this evaluation.
double cider(const std::vector<Sentence>& hyps, const std::vector<std::vector<Sentence>>& refs);

// ---- summaries --------------------------------------------------------------

// Named metrics of one task, percentages (x100) for rates.
struct TaskMetrics {
  std::vector<std::pair<std::string, double>> values;
  double mean() const;
};

using MetricTable = std::map<Task, TaskMetrics>;

struct MetricSummary {
  std::map<Task, double> mu;
  std::map<Task, double> delta;  // fractions; present where a reference exists
  double average_delta() const;  // over tasks with a delta
};

// delta_t = (mu_t - ref_t) / ref_t.
double relative_change(double mu, double reference);
MetricSummary summarize(const MetricTable& raw, const std::map<Task, double>* reference);
std::map<Task, double> task_means(const MetricTable& raw);

nlohmann::json table_to_json(const MetricTable& raw);
MetricTable table_from_json(const nlohmann::json& j);

// ---- parameter accounting ------------------------------------------------

enum class AccountMode { kStlSet, kMtl };

struct ParamAccount {
  AccountMode mode = AccountMode::kMtl;
  std::vector<std::pair<std::string, std::size_t>> components;
  std::size_t total = 0;

  std::size_t component(const std::string& name) const;
};

// Closed-form counts per component.
std::size_t stream_param_count(const StreamConfig& s, std::size_t embed_dim);
std::size_t tsa_set_param_count(const ModelConfig& cfg);  // one task, every layer, both streams
std::size_t xaa_param_total(const ModelConfig& cfg, bool image_to_text, bool text_to_image);
std::size_t head_param_count(const ModelConfig& cfg, Task task);

// kMtl: one backbone, the shared cross-attention adapters, four TSA sets and
// every task head. kStlSet: four independent single-task models, each with
// its own backbone, its own TSA set and XAA when the config enables them,
// and its own head; the captioning model always carries the image-to-text
// XAA, which the decoder needs.
ParamAccount param_account(const ModelConfig& cfg, AccountMode mode);
// 1 - total / baseline.total
double param_saving(const ParamAccount& account, const ParamAccount& baseline);

// Sum over an instantiated model's parameter tensors, grouped by the same
// component names as param_account(kMtl).
ParamAccount enumerate_params(const FameModel& model);

}  // namespace fashionmt::metrics
