// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"

#include "fashionmt/data.hpp"
#include "fashionmt/error.hpp"
#include "fixtures.hpp"

using namespace fashionmt;
using namespace fashionmt::data;

namespace {

std::vector<Attributes> all_attributes() {
  std::vector<Attributes> out;
  for (std::size_t i = 0; i < kAttributeSpace; ++i) out.push_back(attributes_from_index(i));
  return out;
}

std::size_t attribute_value(const Attributes& a, int which) {
  switch (which) {
    case 0: return a.category;
    case 1: return a.color;
    case 2: return a.pattern;
    case 3: return a.sleeve;
    default: return a.neckline;
  }
}

constexpr std::size_t kAttributeCardinality[] = {kNumCategories, kNumColors, kNumPatterns,
                                                 kNumSleeves, kNumNecklines};

// Depth-2 binary tree found by exhaustive search over (feature, threshold) at
// the root and best stump on each side. Leaves carry the positive fraction.
struct Tree {
  std::size_t f0 = 0, fl = 0, fr = 0;
  double t0 = 0, tl = 0, tr = 0;
  double leaf[4] = {0, 0, 0, 0};

  double score(const std::vector<double>& x) const {
    if (x[f0] <= t0) return x[fl] <= tl ? leaf[0] : leaf[1];
    return x[fr] <= tr ? leaf[2] : leaf[3];
  }
};

using Features = std::vector<std::vector<double>>;

std::vector<std::vector<double>> thresholds(const Features& xs) {
  std::vector<std::vector<double>> out(xs[0].size());
  for (std::size_t f = 0; f < out.size(); ++f) {
    std::vector<double> v;
    for (const auto& x : xs) v.push_back(x[f]);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    for (std::size_t i = 0; i + 1 < v.size(); ++i) out[f].push_back(0.5 * (v[i] + v[i + 1]));
    out[f].push_back(v.back());
  }
  return out;
}

struct Stump {
  std::size_t f = 0;
  double t = 0;
  std::size_t errors = 0;
  double lo = 0, hi = 0;
};

Stump best_stump(const Features& xs, const std::vector<int>& y, const std::vector<std::size_t>& idx,
                 const std::vector<std::vector<double>>& ths) {
  Stump best;
  best.errors = idx.size() + 1;
  for (std::size_t f = 0; f < ths.size(); ++f)
    for (double t : ths[f]) {
      std::size_t n[2] = {0, 0}, pos[2] = {0, 0};
      for (std::size_t i : idx) {
        const int side = xs[i][f] > t;
        ++n[side];
        pos[side] += y[i];
      }
      const std::size_t err =
          std::min(pos[0], n[0] - pos[0]) + std::min(pos[1], n[1] - pos[1]);
      if (err < best.errors) {
        best = {f, t, err, n[0] ? double(pos[0]) / n[0] : 0.0, n[1] ? double(pos[1]) / n[1] : 0.0};
      }
    }
  return best;
}

Tree fit_tree(const Features& xs, const std::vector<int>& y) {
  const auto ths = thresholds(xs);
  Tree best;
  std::size_t best_err = xs.size() + 1;
  for (std::size_t f = 0; f < ths.size(); ++f)
    for (double t : ths[f]) {
      std::vector<std::size_t> l, r;
      for (std::size_t i = 0; i < xs.size(); ++i) (xs[i][f] <= t ? l : r).push_back(i);
      if (l.empty() || r.empty()) continue;
      const Stump sl = best_stump(xs, y, l, ths), sr = best_stump(xs, y, r, ths);
      if (sl.errors + sr.errors < best_err) {
        best_err = sl.errors + sr.errors;
        best = {f, sl.f, sr.f, t, sl.t, sr.t, {sl.lo, sl.hi, sr.lo, sr.hi}};
      }
    }
  return best;
}

}  // namespace

TEST_CASE("catalog is deterministic, complete and split 80/10/10") {
  CHECK(catalog_to_json(gen_catalog(7, 864)).dump() == catalog_to_json(gen_catalog(7, 864)).dump());
  CHECK(catalog_to_json(gen_catalog(7, 864)).dump() != catalog_to_json(gen_catalog(8, 864)).dump());
  const Catalog c = gen_catalog(7, 864);
  std::set<std::size_t> seen;
  for (const auto& p : c.products) seen.insert(attribute_index(p.attrs));
  CHECK(seen.size() == kAttributeSpace);
  const auto tr = c.ids_in(Split::kTrain), va = c.ids_in(Split::kVal), te = c.ids_in(Split::kTest);
  CHECK(tr.size() + va.size() + te.size() == 864);
  CHECK(tr.size() == 691);
  CHECK(va.size() == 86);
  CHECK_THROWS_AS(gen_catalog(7, 865), Error);
  CHECK_THROWS_AS(gen_catalog(7, 0), Error);
}

TEST_CASE("render is deterministic and local") {
  Attributes a{1, 2, 0, 1, 2};
  CHECK(render_image(a) == render_image(a));
  Attributes b = a;
  b.color = 5;
  const auto ia = render_image(a), ib = render_image(b);
  for (std::size_t y = 0; y < kImageSide; ++y)
    for (std::size_t x = 0; x < kImageSide; ++x)
      for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
        const std::size_t k = (y * kImageSide + x) * kImageChannels + ch;
        const bool body = x / kCellSide == 1 && y / kCellSide >= 1 && ch < 2;
        CHECK((ia[k] != ib[k]) == body);
      }
  // Every attribute moves at least four pixels.
  for (int which = 0; which < 5; ++which) {
    Attributes c = a;
    if (which == 0) c.category = 3;
    if (which == 1) c.color = 0;
    if (which == 2) c.pattern = 2;
    if (which == 3) c.sleeve = 0;
    if (which == 4) c.neckline = 0;
    const auto ic = render_image(c);
    std::size_t moved = 0;
    for (std::size_t p = 0; p < kImageSide * kImageSide; ++p)
      for (std::size_t ch = 0; ch < kImageChannels; ++ch)
        if (ia[p * kImageChannels + ch] != ic[p * kImageChannels + ch]) {
          ++moved;
          break;
        }
    CHECK(moved >= 4);
  }
}

TEST_CASE("a depth-2 tree per attribute value recovers every attribute") {
  const Corpus& corpus = fixtures::corpus();
  Features train, held;
  std::vector<Attributes> train_a, held_a;
  for (std::size_t pid : corpus.catalog.ids_in(Split::kTrain)) {
    train.push_back(cell_means(corpus.image(pid)));
    train_a.push_back(corpus.catalog.products[pid].attrs);
  }
  for (std::size_t pid : corpus.val.products) {
    held.push_back(cell_means(corpus.image(pid)));
    held_a.push_back(corpus.catalog.products[pid].attrs);
  }
  for (std::size_t pid : corpus.test.products) {
    if (held.size() == 100) break;
    held.push_back(cell_means(corpus.image(pid)));
    held_a.push_back(corpus.catalog.products[pid].attrs);
  }
  REQUIRE(held.size() == 100);
  for (int which = 0; which < 5; ++which) {
    std::vector<Tree> trees;
    for (std::size_t v = 0; v < kAttributeCardinality[which]; ++v) {
      std::vector<int> y;
      for (const auto& a : train_a) y.push_back(attribute_value(a, which) == v);
      trees.push_back(fit_tree(train, y));
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < held.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t v = 1; v < trees.size(); ++v)
        if (trees[v].score(held[i]) > trees[best].score(held[i])) best = v;
      correct += best == attribute_value(held_a[i], which);
    }
    INFO("attribute " << which);
    CHECK(correct == 100);
  }
}

TEST_CASE("a linear probe on cell means classifies subcategories") {
  const Corpus& corpus = fixtures::corpus();
  auto features = [&](const std::vector<std::size_t>& ids, Features& x, std::vector<std::size_t>& y) {
    for (std::size_t pid : ids) {
      auto f = cell_means(corpus.image(pid));
      f.push_back(1.0);
      x.push_back(std::move(f));
      y.push_back(subcategory(corpus.catalog.products[pid].attrs));
    }
  };
  Features xtr, xte;
  std::vector<std::size_t> ytr, yte;
  features(corpus.catalog.ids_in(Split::kTrain), xtr, ytr);
  features(corpus.test.products, xte, yte);
  const std::size_t d = xtr[0].size(), k = kNumSubcategories;
  std::vector<double> w(d * k, 0.0), grad(d * k);
  std::vector<double> p(k);
  for (int epoch = 0; epoch < 3000; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < xtr.size(); ++i) {
      double mx = -1e300;
      for (std::size_t c = 0; c < k; ++c) {
        p[c] = 0;
        for (std::size_t j = 0; j < d; ++j) p[c] += w[c * d + j] * xtr[i][j];
        mx = std::max(mx, p[c]);
      }
      double z = 0;
      for (auto& v : p) z += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < k; ++c) {
        const double g = p[c] / z - (c == ytr[i]);
        for (std::size_t j = 0; j < d; ++j) grad[c * d + j] += g * xtr[i][j];
      }
    }
    for (std::size_t q = 0; q < w.size(); ++q) w[q] -= 2.0 * grad[q] / xtr.size();
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xte.size(); ++i) {
    std::size_t best = 0;
    double best_s = -1e300;
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += w[c * d + j] * xte[i][j];
      if (s > best_s) best_s = s, best = c;
    }
    correct += best == yte[i];
  }
  CHECK(double(correct) / xte.size() >= 0.95);
}

TEST_CASE("captions parse back and fit the length bound") {
  std::mt19937_64 rng(3);
  for (const auto& a : all_attributes()) {
    for (std::size_t t = 0; t < kNumCaptionTemplates; ++t) {
      const std::string text = caption_text(a, t);
      const auto ids = tokenize(text);
      CHECK(detokenize(ids) == text);
      for (auto id : ids) CHECK(id < kVocabSize);
      CHECK(parse_caption(ids) == a);
    }
    const auto c = caption(a, rng);
    CHECK(c.size() <= kMaxCaptionTokens);
    CHECK(c.front() == kSosId);
    CHECK(c.back() == kEosId);
    CHECK(parse_caption(c) == a);
  }
  std::mt19937_64 r1(9), r2(9);
  const Attributes a{2, 3, 1, 0, 1};
  CHECK(caption(a, r1) == caption(a, r2));
  CHECK(tokenize("").empty());
  CHECK(detokenize(std::vector<std::size_t>{}).empty());
  CHECK(tokenize("zebra").front() == kUnkId);
  CHECK_FALSE(parse_caption(tokenize("red red red")).has_value());
}

TEST_CASE("modifying text round trips") {
  const Attributes ref{0, 1, 0, 1, 1};
  AttributeDelta d;
  d.color = 6;
  d.sleeve = 2;
  CHECK(d.size() == 2);
  const auto ids = modifying_tokens(ref, d);
  CHECK(parse_modifying_text(ids, ref) == d);
  CHECK(detokenize(ids) == modifying_text(ref, d));
  CHECK(delta_between(ref, d.apply(ref)) == d);
  // "instead of" must name the reference's value.
  const Attributes other{0, 2, 0, 1, 1};
  CHECK_FALSE(parse_modifying_text(ids, other).has_value());
  CHECK_THROWS_AS(modifying_text(ref, AttributeDelta{}), Error);
}

TEST_CASE("task datasets respect splits, labels and triplet consistency") {
  const Corpus& c = fixtures::corpus();
  CHECK(c.xmr.size() == 2000);
  CHECK(c.tgir.size() == 200);
  CHECK(c.train_size(Task::kTgir) == 200);
  auto train = [&](std::size_t pid) { return c.catalog.splits[pid] == Split::kTrain; };
  for (const auto* set : {&c.xmr, &c.scr, &c.fic})
    for (const auto& r : *set) {
      CHECK(train(r.product));
      CHECK(parse_caption(r.tokens) == c.catalog.products[r.product].attrs);
    }
  for (const auto& t : c.tgir) {
    CHECK(train(t.ref));
    CHECK(train(t.target));
    const auto& ra = c.catalog.products[t.ref].attrs;
    const auto& ta = c.catalog.products[t.target].attrs;
    CHECK(t.delta.apply(ra) == ta);
    CHECK(ra.category == ta.category);
    CHECK(t.delta.size() >= 1);
    CHECK(t.delta.size() <= 2);
    CHECK(parse_modifying_text(t.tokens, ra) == t.delta);
  }
  for (const auto& t : c.val.triplets) CHECK(c.catalog.splits[t.target] == Split::kVal);
  CHECK(c.val.triplets.size() <= kMaxEvalTriplets);
  std::vector<const PairRecord*> recs = {&c.scr[0], &c.scr[1]};
  const ScrBatch b = scr_batch(c, recs);
  CHECK(b.labels[0] == subcategory(c.catalog.products[c.scr[0].product].attrs));
  CHECK_THROWS_AS(build_corpus(1, 2, {}), Error);
}

TEST_CASE("corpus build is deterministic and survives save/load") {
  const Corpus a = build_corpus(11, 864, {});
  const Corpus b = build_corpus(11, 864, {});
  CHECK(a.xmr.size() == b.xmr.size());
  for (std::size_t i = 0; i < a.xmr.size(); ++i) {
    CHECK(a.xmr[i].product == b.xmr[i].product);
    CHECK(a.xmr[i].tokens == b.xmr[i].tokens);
  }
  const auto dir = std::filesystem::temp_directory_path() / "fashionmt_test_corpus";
  std::filesystem::remove_all(dir);
  save_corpus(a, dir.string());
  const Corpus c = load_corpus(dir.string());
  CHECK(catalog_to_json(c.catalog) == catalog_to_json(a.catalog));
  CHECK(c.images == a.images);
  CHECK(c.tgir.size() == a.tgir.size());
  for (std::size_t i = 0; i < a.tgir.size(); ++i) {
    CHECK(c.tgir[i].tokens == a.tgir[i].tokens);
    CHECK(c.tgir[i].delta == a.tgir[i].delta);
  }
  CHECK(c.val.triplets.size() == a.val.triplets.size());
  CHECK(c.test.pairs.size() == a.test.pairs.size());
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_corpus(dir.string()), Error);
}

TEST_CASE("seed streams are distinct") {
  std::set<std::uint64_t> s;
  for (std::uint64_t k = 0; k < 40; ++k) s.insert(mix_seed(5, k));
  CHECK(s.size() == 40);
  CHECK(mix_seed(5, 1) != mix_seed(6, 1));
}
