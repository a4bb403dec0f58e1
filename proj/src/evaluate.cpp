// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/evaluate.hpp"

#include <algorithm>
#include <tuple>

#include "fashionmt/error.hpp"

namespace fashionmt {

using ad::Tensor;

namespace {

// Stacks row-chunked encodings into one (N, E) value buffer.
template <typename F>
std::vector<double> encode_chunks(std::size_t n, std::size_t chunk, std::size_t& width, F f) {
  std::vector<double> out;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    Tensor e = f(begin, end);
    width = e.dim(1);
    out.insert(out.end(), e.data().begin(), e.data().end());
  }
  return out;
}

std::vector<double> dot_rows(const std::vector<double>& a, const std::vector<double>& b,
                             std::size_t d) {
  const std::size_t na = a.size() / d, nb = b.size() / d;
  std::vector<double> s(na * nb, 0.0);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += a[i * d + k] * b[j * d + k];
      s[i * nb + j] = acc;
    }
  return s;
}

std::vector<double> transpose_square(const std::vector<double>& s, std::size_t n) {
  std::vector<double> t(s.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * n + i] = s[i * n + j];
  return t;
}

std::vector<const data::PairRecord*> pair_ptrs(const data::EvalSplit& split, std::size_t b,
                                               std::size_t e) {
  std::vector<const data::PairRecord*> out;
  for (std::size_t i = b; i < e; ++i) out.push_back(&split.pairs[i]);
  return out;
}

void add_retrieval(metrics::TaskMetrics& m, std::map<std::string, double>& extras,
                   const std::string& prefix, const metrics::RetrievalProblem& p,
                   const EvalOptions& opts, bool in_table, std::uint64_t seed) {
  const auto scores = metrics::eval_retrieval(p, metrics::Protocol::kFull, opts.ks, seed);
  for (const auto& [k, r] : scores.recall) {
    const std::string name = prefix + "R@" + std::to_string(k);
    if (in_table)
      m.values.emplace_back(name, 100.0 * r);
    else
      extras["full." + name] = 100.0 * r;
  }
}

}  // namespace

std::vector<Task> supported_tasks(const ModelConfig& cfg) {
  std::vector<Task> out = {Task::kXmr, Task::kTgir, Task::kScr};
  if (cfg.use_xaa) out.push_back(Task::kFic);
  return out;
}

EvalResult evaluate(const FameModel& model, const data::Corpus& corpus,
                    const data::EvalSplit& split, std::span<const Task> tasks,
                    const EvalOptions& opts) {
  ad::NoGradGuard no_grad;
  EvalResult res;
  const std::size_t np = split.pairs.size();
  if (np < 2) fail(ErrorKind::kInvalidArgument, "evaluate: split has fewer than two products");
  for (Task task : tasks) {
    metrics::TaskMetrics m;
    switch (task) {
      case Task::kXmr: {
        std::size_t d = 0;
        auto img = encode_chunks(np, opts.chunk, d, [&](std::size_t b, std::size_t e) {
          auto recs = pair_ptrs(split, b, e);
          return model.encode_image(data::xmr_batch(corpus, recs).images, Task::kXmr);
        });
        auto txt = encode_chunks(np, opts.chunk, d, [&](std::size_t b, std::size_t e) {
          auto recs = pair_ptrs(split, b, e);
          return model.encode_text(data::xmr_batch(corpus, recs).captions, Task::kXmr);
        });
        const auto i2t = dot_rows(img, txt, d);
        const auto t2i = transpose_square(i2t, np);
        std::vector<std::size_t> gt(np), groups(np);
        for (std::size_t i = 0; i < np; ++i) {
          gt[i] = i;
          groups[i] = corpus.catalog.products[split.pairs[i].product].attrs.category;
        }
        metrics::RetrievalProblem p1{i2t, np, np, gt, groups};
        metrics::RetrievalProblem p2{t2i, np, np, gt, groups};
        add_retrieval(m, res.extras, "i2t.", p1, opts, true, opts.seed);
        add_retrieval(m, res.extras, "t2i.", p2, opts, true, opts.seed + 1);
        if (opts.xmr_random100) {
          for (auto [name, p, s] : {std::tuple{"i2t.", &p1, opts.seed + 2},
                                    std::tuple{"t2i.", &p2, opts.seed + 3}}) {
            const auto sc = metrics::eval_retrieval(*p, metrics::Protocol::kRandom100, opts.ks, s);
            for (const auto& [k, r] : sc.recall)
              res.extras[std::string("xmr.random100.") + name + "R@" + std::to_string(k)] = 100.0 * r;
            res.extras["xmr.random100.pool"] = static_cast<double>(sc.min_pool);
          }
        }
        break;
      }
      case Task::kTgir: {
        const auto& prods = split.products;
        const auto& trip = split.triplets;
        if (trip.empty()) fail(ErrorKind::kInvalidArgument, "evaluate: split has no triplets");
        std::size_t d = 0;
        auto cand = encode_chunks(prods.size(), opts.chunk, d, [&](std::size_t b, std::size_t e) {
          std::vector<std::size_t> ids(prods.begin() + b, prods.begin() + e);
          return model.encode_image(data::image_batch(corpus, ids), Task::kTgir);
        });
        auto query = encode_chunks(trip.size(), opts.chunk, d, [&](std::size_t b, std::size_t e) {
          std::vector<const data::TgirTriplet*> recs;
          for (std::size_t i = b; i < e; ++i) recs.push_back(&trip[i]);
          TgirBatch tb = data::tgir_batch(corpus, recs);
          return model.encode_fusion(tb.refs, tb.mods, Task::kTgir);
        });
        const auto sims = dot_rows(query, cand, d);
        std::vector<std::size_t> gt;
        for (const auto& t : trip) {
          const auto it = std::find(prods.begin(), prods.end(), t.target);
          gt.push_back(static_cast<std::size_t>(it - prods.begin()));
        }
        metrics::RetrievalProblem p{sims, trip.size(), prods.size(), gt, {}};
        add_retrieval(m, res.extras, "", p, opts, true, opts.seed);
        break;
      }
      case Task::kScr: {
        std::vector<std::size_t> preds, labels;
        for (std::size_t b = 0; b < np; b += opts.chunk) {
          auto recs = pair_ptrs(split, b, std::min(np, b + opts.chunk));
          ScrBatch sb = data::scr_batch(corpus, recs);
          Tensor logits = model.scr_logits(sb.images, sb.captions);
          const std::size_t c = logits.dim(1);
          for (std::size_t r = 0; r < sb.labels.size(); ++r) {
            const double* row = logits.data().data() + r * c;
            preds.push_back(static_cast<std::size_t>(std::max_element(row, row + c) - row));
            labels.push_back(sb.labels[r]);
          }
        }
        const auto s = metrics::classification_metrics(preds, labels, model.config().num_classes);
        m.values.emplace_back("accuracy", 100.0 * s.accuracy);
        m.values.emplace_back("macro_f1", 100.0 * s.macro_f1);
        break;
      }
      case Task::kFic: {
        const data::Vocabulary& vocab = data::Vocabulary::instance();
        std::vector<metrics::Sentence> hyps;
        std::vector<std::vector<metrics::Sentence>> refs;
        std::size_t valid = 0, exact = 0;
        for (std::size_t b = 0; b < np; b += opts.chunk) {
          const std::size_t e = std::min(np, b + opts.chunk);
          std::vector<std::size_t> ids;
          for (std::size_t i = b; i < e; ++i) ids.push_back(split.pairs[i].product);
          const auto gen = model.generate_captions(data::image_batch(corpus, ids),
                                                   data::kMaxCaptionTokens, data::kSosId,
                                                   data::kEosId);
          for (std::size_t i = 0; i < gen.size(); ++i) {
            const auto& attrs = corpus.catalog.products[ids[i]].attrs;
            const bool terminated = gen[i].back() == data::kEosId;
            const auto parsed = data::parse_caption(gen[i]);
            if (terminated && parsed) {
              ++valid;
              if (*parsed == attrs) ++exact;
            }
            metrics::Sentence h;
            for (std::size_t id : gen[i])
              if (id != data::kSosId && id != data::kEosId && id != data::kPadId)
                h.push_back(vocab.word(id));
            hyps.push_back(std::move(h));
            std::vector<metrics::Sentence> r;
            for (std::size_t t = 0; t < data::kNumCaptionTemplates; ++t) {
              metrics::Sentence s;
              for (std::size_t id : data::tokenize(data::caption_text(attrs, t)))
                s.push_back(vocab.word(id));
              r.push_back(std::move(s));
            }
            refs.push_back(std::move(r));
          }
        }
        double bleu = 0.0, rouge = 0.0;
        for (std::size_t i = 0; i < hyps.size(); ++i) {
          bleu += metrics::bleu4(hyps[i], refs[i]);
          double best = 0.0;
          for (const auto& r : refs[i]) best = std::max(best, metrics::rouge_l(hyps[i], r));
          rouge += best;
        }
        const double n = static_cast<double>(hyps.size());
        m.values.emplace_back("bleu4", 100.0 * bleu / n);
        m.values.emplace_back("rouge_l", 100.0 * rouge / n);
        m.values.emplace_back("cider", 10.0 * metrics::cider(hyps, refs));
        res.extras["fic.valid_rate"] = static_cast<double>(valid) / n;
        res.extras["fic.exact_rate"] = static_cast<double>(exact) / n;
        break;
      }
    }
    res.table[task] = std::move(m);
  }
  return res;
}

}  // namespace fashionmt
