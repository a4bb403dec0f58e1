// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/data.hpp"

#include <algorithm>
#include <bit>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "fashionmt/error.hpp"

namespace fashionmt::data {

using nlohmann::json;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::array<std::uint64_t, 1> out{};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

namespace {

constexpr std::array<std::string_view, 32> kGrammarWords = {
    "dress", "shirt",  "toptee", "pants",  "black",   "blue",    "green", "purple",
    "grey",  "pink",   "red",    "yellow", "solid",   "striped", "dotted", "no",
    "short", "long",   "crew",   "v",      "collar",  "sleeve",  "sleeves", "in",
    ".",     "with",   "and",    "neckline", "is",    "instead", "of",    "has"};

constexpr std::array<std::string_view, 88> kFillerWords = {
    "coat",    "jacket",  "skirt",   "jeans",    "shorts",    "sweater", "hoodie",  "blazer",
    "vest",    "scarf",   "hat",     "boots",    "sneakers",  "sandals", "heels",   "bag",
    "belt",    "gloves",  "socks",   "tie",      "cotton",    "wool",    "silk",    "linen",
    "denim",   "leather", "knit",    "lace",     "velvet",    "suede",   "white",   "brown",
    "orange",  "navy",    "beige",   "cream",    "olive",     "maroon",  "teal",    "gold",
    "silver",  "floral",  "plaid",   "checked",  "printed",   "ribbed",  "fitted",  "loose",
    "slim",    "relaxed", "cropped", "oversized", "high",     "low",     "waist",   "hem",
    "pocket",  "button",  "zip",     "hood",     "cuff",      "seam",    "lined",   "casual",
    "formal",  "classic", "modern",  "soft",     "light",     "dark",    "bright",  "pale",
    "warm",    "cool",    "summer",  "winter",   "autumn",    "spring",  "party",   "office",
    "weekend", "evening", "a",       "the",      "for",       "on",      "made",    "midi"};

// Body red/green per color; distinct red levels.
constexpr std::array<std::array<double, 2>, kNumColors> kPalette = {{
    {0.20, 0.20},  // black
    {0.30, 0.50},  // blue
    {0.40, 0.90},  // green
    {0.50, 0.30},  // purple
    {0.60, 0.60},  // grey
    {0.70, 0.40},  // pink
    {0.80, 0.10},  // red
    {0.90, 0.80},  // yellow
}};

constexpr double kCategoryShade = 0.5;

std::string_view sleeve_word(std::size_t sleeve) {
  return sleeve == 0 ? std::string_view("no") : kSleeveNames[sleeve];
}

template <std::size_t N>
std::optional<std::size_t> lookup(const std::array<std::string_view, N>& names,
                                  std::string_view w) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == w) return i;
  return std::nullopt;
}

std::optional<std::size_t> lookup_sleeve(std::string_view w) {
  if (w == "no") return 0;
  if (w == "none") return std::nullopt;
  return lookup(kSleeveNames, w);
}

void set_pixel(std::vector<double>& img, std::size_t y, std::size_t x, double r, double g,
               double b) {
  double* p = img.data() + (y * kImageSide + x) * kImageChannels;
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

// Glyph pixels inside one cell, (row, col) offsets; drawn in order until `n`.
void fill_cell_prefix(std::vector<double>& img, std::size_t cy, std::size_t cx, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t y = cy * kCellSide + k / kCellSide;
    const std::size_t x = cx * kCellSide + k % kCellSide;
    set_pixel(img, y, x, 1.0, 1.0, 1.0);
  }
}

std::vector<std::string> words_of(std::span<const std::size_t> ids) {
  const Vocabulary& v = Vocabulary::instance();
  std::vector<std::string> out;
  for (std::size_t id : ids) {
    if (id == kSosId || id == kEosId || id == kPadId) continue;
    out.push_back(v.word(id));
  }
  return out;
}

std::vector<std::size_t> with_sentinels(std::vector<std::size_t> ids) {
  ids.insert(ids.begin(), kSosId);
  ids.push_back(kEosId);
  return ids;
}

// Strips sentinels only in their canonical positions.
std::optional<std::vector<std::string>> sentence_words(std::span<const std::size_t> ids) {
  std::size_t begin = 0, end = ids.size();
  if (end > 0 && ids[0] == kSosId) begin = 1;
  if (end > begin && ids[end - 1] == kEosId) --end;
  const Vocabulary& v = Vocabulary::instance();
  std::vector<std::string> out;
  for (std::size_t i = begin; i < end; ++i) {
    if (ids[i] >= v.size() || ids[i] < 4) return std::nullopt;
    out.push_back(v.word(ids[i]));
  }
  return out;
}


std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

// ---- attributes -----------------------------------------------------------

void validate(const Attributes& a) {
  if (a.category >= kNumCategories || a.color >= kNumColors || a.pattern >= kNumPatterns ||
      a.sleeve >= kNumSleeves || a.neckline >= kNumNecklines) {
    fail(ErrorKind::kInvalidArgument, "attribute value out of range");
  }
}

std::size_t attribute_index(const Attributes& a) {
  validate(a);
  return (((a.category * kNumColors + a.color) * kNumPatterns + a.pattern) * kNumSleeves +
          a.sleeve) *
             kNumNecklines +
         a.neckline;
}

Attributes attributes_from_index(std::size_t index) {
  if (index >= kAttributeSpace) fail(ErrorKind::kInvalidArgument, "attribute index out of range");
  Attributes a;
  a.neckline = index % kNumNecklines;
  index /= kNumNecklines;
  a.sleeve = index % kNumSleeves;
  index /= kNumSleeves;
  a.pattern = index % kNumPatterns;
  index /= kNumPatterns;
  a.color = index % kNumColors;
  a.category = index / kNumColors;
  return a;
}

std::size_t subcategory(const Attributes& a) { return a.category * kNumPatterns + a.pattern; }

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::vector<std::size_t> Catalog::ids_in(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < products.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

std::optional<std::size_t> Catalog::find(const Attributes& a) const {
  for (const Product& p : products)
    if (p.attrs == a) return p.id;
  return std::nullopt;
}

Catalog gen_catalog(std::uint64_t seed, std::size_t n_products) {
  if (n_products < 1 || n_products > kAttributeSpace) {
    fail(ErrorKind::kInfeasible, "gen_catalog: n_products must be in [1, " +
                                     std::to_string(kAttributeSpace) + "], got " +
                                     std::to_string(n_products));
  }
  std::vector<std::size_t> order(kAttributeSpace);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 1));
  // Fisher-Yates with our own index draws; std::shuffle is not portable.
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
  Catalog c;
  c.seed = seed;
  const std::size_t n_train = n_products * 8 / 10;
  const std::size_t n_val = n_products / 10;
  for (std::size_t i = 0; i < n_products; ++i) {
    c.products.push_back({i, attributes_from_index(order[i])});
    c.splits.push_back(i < n_train ? Split::kTrain
                                   : (i < n_train + n_val ? Split::kVal : Split::kTest));
  }
  return c;
}

// ---- images ---------------------------------------------------------------

std::vector<double> render_image(const Attributes& a) {
  validate(a);
  std::vector<double> img(kImageValues, 0.0);
  // category corner
  const std::size_t cy = (a.category / 2) * 2, cx = (a.category % 2) * 2;
  for (std::size_t y = 0; y < kCellSide; ++y)
    for (std::size_t x = 0; x < kCellSide; ++x)
      set_pixel(img, cy * kCellSide + y, cx * kCellSide + x, kCategoryShade, kCategoryShade,
                kCategoryShade);
  // body
  const auto [r, g] = kPalette[a.color];
  for (std::size_t cell_y : {1, 2})
    for (std::size_t y = 0; y < kCellSide; ++y)
      for (std::size_t x = 0; x < kCellSide; ++x)
        set_pixel(img, cell_y * kCellSide + y, kCellSide + x, r, g, 0.0);
  // pattern on the lower body cell
  for (std::size_t y = 0; y < kCellSide; ++y)
    for (std::size_t x = 0; x < kCellSide; ++x) {
      bool on = false;
      if (a.pattern == 1) on = y % 2 == 0;
      if (a.pattern == 2) on = y % 2 == 0 && x % 2 == 0;
      if (on) img[((2 * kCellSide + y) * kImageSide + kCellSide + x) * kImageChannels + 2] = 1.0;
    }
  // sleeves
  constexpr std::array<std::size_t, kNumSleeves> kSleevePixels = {0, 12, 32};
  fill_cell_prefix(img, 1, 0, kSleevePixels[a.sleeve]);
  fill_cell_prefix(img, 1, 2, kSleevePixels[a.sleeve]);
  // neckline
  constexpr std::array<std::size_t, kNumNecklines> kNeckPixels = {16, 10, 24};
  fill_cell_prefix(img, 0, 1, kNeckPixels[a.neckline]);
  return img;
}

std::vector<double> cell_means(std::span<const double> image) {
  if (image.size() != kImageValues) fail(ErrorKind::kShapeMismatch, "cell_means: bad image size");
  std::vector<double> out(9 * kImageChannels, 0.0);
  for (std::size_t y = 0; y < kImageSide; ++y)
    for (std::size_t x = 0; x < kImageSide; ++x) {
      const std::size_t cell = (y / kCellSide) * 3 + x / kCellSide;
      for (std::size_t c = 0; c < kImageChannels; ++c)
        out[cell * kImageChannels + c] += image[(y * kImageSide + x) * kImageChannels + c];
    }
  for (double& v : out) v /= static_cast<double>(kCellSide * kCellSide);
  return out;
}

// ---- vocabulary -----------------------------------------------------------

Vocabulary::Vocabulary() {
  words_ = {"<pad>", "<sos>", "<eos>", "<unk>"};
  for (auto w : kGrammarWords) words_.emplace_back(w);
  for (auto w : kFillerWords) words_.emplace_back(w);
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
  if (words_.size() != kVocabSize || index_.size() != kVocabSize) {
    fail(ErrorKind::kInvalidArgument, "vocabulary: duplicate or missing words");
  }
}

const Vocabulary& Vocabulary::instance() {
  static const Vocabulary v;
  return v;
}

std::size_t Vocabulary::id(std::string_view word) const {
  auto it = index_.find(word);
  if (it == index_.end() || it->second < 4) return kUnkId;
  return it->second;
}

const std::string& Vocabulary::word(std::size_t id) const {
  if (id >= words_.size()) fail(ErrorKind::kInvalidArgument, "token id out of range");
  return words_[id];
}

std::vector<std::size_t> tokenize(std::string_view text) {
  const Vocabulary& v = Vocabulary::instance();
  std::vector<std::size_t> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.push_back(v.id(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

std::string detokenize(std::span<const std::size_t> ids) {
  std::string out;
  for (const std::string& w : words_of(ids)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

// ---- captions -------------------------------------------------------------

std::string caption_text(const Attributes& a, std::size_t template_id) {
  validate(a);
  std::ostringstream s;
  if (template_id == 0) {
    s << sleeve_word(a.sleeve) << " sleeve " << kPatternNames[a.pattern] << ' '
      << kCategoryNames[a.category] << " in " << kColorNames[a.color] << " . "
      << kNecklineNames[a.neckline] << " neckline .";
  } else if (template_id == 1) {
    s << kColorNames[a.color] << ' ' << kPatternNames[a.pattern] << ' '
      << kCategoryNames[a.category] << " with " << sleeve_word(a.sleeve) << " sleeves and "
      << kNecklineNames[a.neckline] << " neckline .";
  } else {
    fail(ErrorKind::kInvalidArgument, "caption_text: unknown template");
  }
  return s.str();
}

std::vector<std::size_t> caption(const Attributes& a, std::mt19937_64& rng) {
  const std::size_t t = uniform_index(rng, kNumCaptionTemplates);
  return with_sentinels(tokenize(caption_text(a, t)));
}

std::optional<Attributes> parse_caption(std::span<const std::size_t> ids) {
  const auto words = sentence_words(ids);
  if (!words || words->size() != 10) return std::nullopt;
  const auto& w = *words;
  Attributes a;
  std::optional<std::size_t> sleeve, pattern, category, color, neck;
  if (w[1] == "sleeve") {
    if (w[4] != "in" || w[6] != "." || w[8] != "neckline" || w[9] != ".") return std::nullopt;
    sleeve = lookup_sleeve(w[0]);
    pattern = lookup(kPatternNames, w[2]);
    category = lookup(kCategoryNames, w[3]);
    color = lookup(kColorNames, w[5]);
    neck = lookup(kNecklineNames, w[7]);
  } else {
    if (w[3] != "with" || w[5] != "sleeves" || w[6] != "and" || w[8] != "neckline" ||
        w[9] != ".")
      return std::nullopt;
    color = lookup(kColorNames, w[0]);
    pattern = lookup(kPatternNames, w[1]);
    category = lookup(kCategoryNames, w[2]);
    sleeve = lookup_sleeve(w[4]);
    neck = lookup(kNecklineNames, w[7]);
  }
  if (!sleeve || !pattern || !category || !color || !neck) return std::nullopt;
  a.category = *category;
  a.color = *color;
  a.pattern = *pattern;
  a.sleeve = *sleeve;
  a.neckline = *neck;
  return a;
}

// ---- triplets -------------------------------------------------------------

std::size_t AttributeDelta::size() const {
  return color.has_value() + pattern.has_value() + sleeve.has_value() + neckline.has_value();
}

Attributes AttributeDelta::apply(const Attributes& ref) const {
  Attributes a = ref;
  if (color) a.color = *color;
  if (pattern) a.pattern = *pattern;
  if (sleeve) a.sleeve = *sleeve;
  if (neckline) a.neckline = *neckline;
  validate(a);
  return a;
}

AttributeDelta delta_between(const Attributes& ref, const Attributes& target) {
  if (ref.category != target.category) {
    fail(ErrorKind::kInvalidArgument, "delta_between: categories differ");
  }
  AttributeDelta d;
  if (ref.color != target.color) d.color = target.color;
  if (ref.pattern != target.pattern) d.pattern = target.pattern;
  if (ref.sleeve != target.sleeve) d.sleeve = target.sleeve;
  if (ref.neckline != target.neckline) d.neckline = target.neckline;
  return d;
}

std::string modifying_text(const Attributes& ref, const AttributeDelta& delta) {
  if (delta.size() < 1 || delta.size() > 2) {
    fail(ErrorKind::kInvalidArgument, "modifying_text: delta must change 1 or 2 attributes");
  }
  std::vector<std::string> clauses;
  if (delta.color) {
    clauses.push_back("is " + std::string(kColorNames[*delta.color]) + " instead of " +
                      std::string(kColorNames[ref.color]));
  }
  if (delta.pattern) {
    clauses.push_back("is " + std::string(kPatternNames[*delta.pattern]) + " instead of " +
                      std::string(kPatternNames[ref.pattern]));
  }
  if (delta.sleeve) clauses.push_back("has " + std::string(sleeve_word(*delta.sleeve)) + " sleeves");
  if (delta.neckline) {
    clauses.push_back("has " + std::string(kNecklineNames[*delta.neckline]) + " neckline");
  }
  std::string out = clauses[0];
  for (std::size_t i = 1; i < clauses.size(); ++i) out += " and " + clauses[i];
  return out;
}

std::vector<std::size_t> modifying_tokens(const Attributes& ref, const AttributeDelta& delta) {
  return with_sentinels(tokenize(modifying_text(ref, delta)));
}

std::optional<AttributeDelta> parse_modifying_text(std::span<const std::size_t> ids,
                                                   const Attributes& ref) {
  const auto words = sentence_words(ids);
  if (!words || words->empty()) return std::nullopt;
  std::vector<std::vector<std::string>> clauses(1);
  for (const auto& w : *words) {
    if (w == "and") {
      clauses.emplace_back();
    } else {
      clauses.back().push_back(w);
    }
  }
  if (clauses.size() > 2) return std::nullopt;
  AttributeDelta d;
  for (const auto& c : clauses) {
    if (c.size() == 5 && c[0] == "is" && c[2] == "instead" && c[3] == "of") {
      if (auto to = lookup(kColorNames, c[1]), from = lookup(kColorNames, c[4]); to && from) {
        if (d.color || *from != ref.color || *to == ref.color) return std::nullopt;
        d.color = *to;
      } else if (auto pto = lookup(kPatternNames, c[1]), pfrom = lookup(kPatternNames, c[4]);
                 pto && pfrom) {
        if (d.pattern || *pfrom != ref.pattern || *pto == ref.pattern) return std::nullopt;
        d.pattern = *pto;
      } else {
        return std::nullopt;
      }
    } else if (c.size() == 3 && c[0] == "has" && c[2] == "sleeves") {
      auto s = lookup_sleeve(c[1]);
      if (!s || d.sleeve || *s == ref.sleeve) return std::nullopt;
      d.sleeve = *s;
    } else if (c.size() == 3 && c[0] == "has" && c[2] == "neckline") {
      auto n = lookup(kNecklineNames, c[1]);
      if (!n || d.neckline || *n == ref.neckline) return std::nullopt;
      d.neckline = *n;
    } else {
      return std::nullopt;
    }
  }
  return d;
}

// ---- datasets -------------------------------------------------------------

std::size_t TaskSizes::of(Task t) const {
  switch (t) {
    case Task::kXmr: return xmr;
    case Task::kTgir: return tgir;
    case Task::kScr: return scr;
    case Task::kFic: return fic;
  }
  return 0;
}

std::array<std::size_t, kNumTasks> TaskSizes::as_array() const { return {xmr, tgir, scr, fic}; }

std::size_t Corpus::train_size(Task t) const {
  switch (t) {
    case Task::kXmr: return xmr.size();
    case Task::kTgir: return tgir.size();
    case Task::kScr: return scr.size();
    case Task::kFic: return fic.size();
  }
  return 0;
}

namespace {

std::vector<PairRecord> sample_pairs(const Catalog& c, const std::vector<std::size_t>& pool,
                                     std::size_t n, std::mt19937_64& rng) {
  std::vector<PairRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pid = pool[uniform_index(rng, pool.size())];
    out.push_back({pid, caption(c.products[pid].attrs, rng)});
  }
  return out;
}

// All ordered (ref, target) pairs in `pool` with the same category and 1-2
// changed attributes.
std::vector<std::pair<std::size_t, std::size_t>> triplet_candidates(
    const Catalog& c, const std::vector<std::size_t>& pool) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t r : pool)
    for (std::size_t t : pool) {
      const Attributes& a = c.products[r].attrs;
      const Attributes& b = c.products[t].attrs;
      if (r == t || a.category != b.category) continue;
      const std::size_t k = delta_between(a, b).size();
      if (k >= 1 && k <= 2) out.emplace_back(r, t);
    }
  return out;
}

TgirTriplet make_triplet(const Catalog& c, std::size_t ref, std::size_t target) {
  const Attributes& a = c.products[ref].attrs;
  TgirTriplet tr;
  tr.ref = ref;
  tr.target = target;
  tr.delta = delta_between(a, c.products[target].attrs);
  tr.tokens = modifying_tokens(a, tr.delta);
  return tr;
}

EvalSplit build_eval_split(const Catalog& c, Split s, std::mt19937_64& rng) {
  EvalSplit e;
  e.split = s;
  e.products = c.ids_in(s);
  for (std::size_t pid : e.products) e.pairs.push_back({pid, caption(c.products[pid].attrs, rng)});
  auto cands = triplet_candidates(c, e.products);
  for (std::size_t i = 0; i < cands.size() && i < kMaxEvalTriplets; ++i) {
    std::swap(cands[i], cands[i + uniform_index(rng, cands.size() - i)]);
    e.triplets.push_back(make_triplet(c, cands[i].first, cands[i].second));
  }
  return e;
}

}  // namespace

Corpus build_corpus(std::uint64_t seed, std::size_t n_products, const TaskSizes& sizes) {
  Corpus corpus;
  corpus.catalog = gen_catalog(seed, n_products);
  corpus.sizes = sizes;
  const Catalog& c = corpus.catalog;
  const std::vector<std::size_t> train = c.ids_in(Split::kTrain);
  if (train.size() < 2) fail(ErrorKind::kInfeasible, "build_corpus: training split too small");
  std::mt19937_64 xmr_rng(mix_seed(seed, 10)), scr_rng(mix_seed(seed, 11)),
      fic_rng(mix_seed(seed, 12)), tgir_rng(mix_seed(seed, 13)), val_rng(mix_seed(seed, 14)),
      test_rng(mix_seed(seed, 15));
  corpus.xmr = sample_pairs(c, train, sizes.xmr, xmr_rng);
  corpus.scr = sample_pairs(c, train, sizes.scr, scr_rng);
  corpus.fic = sample_pairs(c, train, sizes.fic, fic_rng);
  const auto cands = triplet_candidates(c, train);
  if (sizes.tgir > 0 && cands.empty()) {
    fail(ErrorKind::kInfeasible, "build_corpus: no text-guided retrieval pairs in training split");
  }
  for (std::size_t i = 0; i < sizes.tgir; ++i) {
    const auto& [r, t] = cands[uniform_index(tgir_rng, cands.size())];
    corpus.tgir.push_back(make_triplet(c, r, t));
  }
  corpus.val = build_eval_split(c, Split::kVal, val_rng);
  corpus.test = build_eval_split(c, Split::kTest, test_rng);
  corpus.images.reserve(c.products.size());
  for (const Product& p : c.products) corpus.images.push_back(render_image(p.attrs));
  return corpus;
}

// ---- batching -------------------------------------------------------------

ImageBatch image_batch(const Corpus& corpus, std::span<const std::size_t> products) {
  ImageBatch b;
  b.batch = products.size();
  b.side = kImageSide;
  b.channels = kImageChannels;
  b.pixels.reserve(products.size() * kImageValues);
  for (std::size_t pid : products) {
    const auto& img = corpus.image(pid);
    b.pixels.insert(b.pixels.end(), img.begin(), img.end());
  }
  return b;
}

TokenBatch token_batch(std::span<const std::vector<std::size_t>* const> seqs) {
  std::vector<std::vector<std::size_t>> copy;
  copy.reserve(seqs.size());
  for (const auto* s : seqs) copy.push_back(*s);
  return TokenBatch::from_sequences(copy, kPadId);
}

namespace {

template <typename Rec>
std::pair<ImageBatch, TokenBatch> pair_inputs(const Corpus& c, std::span<const Rec* const> recs) {
  std::vector<std::size_t> pids;
  std::vector<const std::vector<std::size_t>*> toks;
  for (const Rec* r : recs) {
    pids.push_back(r->product);
    toks.push_back(&r->tokens);
  }
  return {image_batch(c, pids), token_batch(toks)};
}

}  // namespace

XmrBatch xmr_batch(const Corpus& c, std::span<const PairRecord* const> recs) {
  auto [img, tok] = pair_inputs(c, recs);
  return {std::move(img), std::move(tok)};
}

ScrBatch scr_batch(const Corpus& c, std::span<const PairRecord* const> recs) {
  auto [img, tok] = pair_inputs(c, recs);
  std::vector<std::size_t> labels;
  for (const PairRecord* r : recs) labels.push_back(subcategory(c.catalog.products[r->product].attrs));
  return {std::move(img), std::move(tok), std::move(labels)};
}

FicBatch fic_batch(const Corpus& c, std::span<const PairRecord* const> recs) {
  auto [img, tok] = pair_inputs(c, recs);
  return {std::move(img), std::move(tok)};
}

TgirBatch tgir_batch(const Corpus& c, std::span<const TgirTriplet* const> recs) {
  std::vector<std::size_t> refs, targets;
  std::vector<const std::vector<std::size_t>*> toks;
  for (const TgirTriplet* t : recs) {
    refs.push_back(t->ref);
    targets.push_back(t->target);
    toks.push_back(&t->tokens);
  }
  return {image_batch(c, refs), token_batch(toks), image_batch(c, targets)};
}

// ---- serialization --------------------------------------------------------

namespace {

json attrs_json(const Attributes& a) {
  return {{"category", kCategoryNames[a.category]}, {"color", kColorNames[a.color]},
          {"pattern", kPatternNames[a.pattern]},    {"sleeve", kSleeveNames[a.sleeve]},
          {"neckline", kNecklineNames[a.neckline]}};
}

template <std::size_t N>
std::size_t name_index(const std::array<std::string_view, N>& names, const json& j,
                       const char* key) {
  const auto v = lookup(names, j.at(key).get<std::string>());
  if (!v) fail(ErrorKind::kFormat, std::string("unknown ") + key + " value");
  return *v;
}

Attributes attrs_from_json(const json& j) {
  Attributes a;
  a.category = name_index(kCategoryNames, j, "category");
  a.color = name_index(kColorNames, j, "color");
  a.pattern = name_index(kPatternNames, j, "pattern");
  a.sleeve = name_index(kSleeveNames, j, "sleeve");
  a.neckline = name_index(kNecklineNames, j, "neckline");
  return a;
}

Split split_from_name(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  fail(ErrorKind::kFormat, "unknown split '" + s + "'");
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write '" + p.string() + "'");
  out << text;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + p.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

std::string pairs_jsonl(const std::vector<PairRecord>& recs) {
  std::string out;
  for (const auto& r : recs) out += json{{"product", r.product}, {"tokens", r.tokens}}.dump() + "\n";
  return out;
}

std::string triplets_jsonl(const std::vector<TgirTriplet>& recs) {
  std::string out;
  for (const auto& t : recs)
    out += json{{"ref", t.ref}, {"target", t.target}, {"tokens", t.tokens}}.dump() + "\n";
  return out;
}

json parse_line(const std::string& line, const std::filesystem::path& p) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, "bad record in '" + p.string() + "': " + e.what());
  }
}

std::vector<PairRecord> read_pairs(const std::filesystem::path& p) {
  std::vector<PairRecord> out;
  for (const auto& line : read_lines(p)) {
    const json j = parse_line(line, p);
    out.push_back({j.at("product").get<std::size_t>(), j.at("tokens").get<std::vector<std::size_t>>()});
  }
  return out;
}

std::vector<TgirTriplet> read_triplets(const Catalog& c, const std::filesystem::path& p) {
  std::vector<TgirTriplet> out;
  for (const auto& line : read_lines(p)) {
    const json j = parse_line(line, p);
    TgirTriplet t = make_triplet(c, j.at("ref").get<std::size_t>(), j.at("target").get<std::size_t>());
    if (t.tokens != j.at("tokens").get<std::vector<std::size_t>>()) {
      fail(ErrorKind::kFormat, "triplet text does not match its products in '" + p.string() + "'");
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

json catalog_to_json(const Catalog& c) {
  json products = json::array();
  for (const Product& p : c.products)
    products.push_back({{"id", p.id}, {"split", split_name(c.splits[p.id])}, {"attributes", attrs_json(p.attrs)}});
  return {{"seed", c.seed}, {"count", c.products.size()}, {"products", products}};
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create '" + dir + "': " + ec.message());
  const fs::path root(dir);
  json manifest = {{"format", "fashionmt-corpus"},
                   {"version", 1},
                   {"catalog", catalog_to_json(corpus.catalog)},
                   {"sizes",
                    {{"xmr", corpus.sizes.xmr},
                     {"tgir", corpus.sizes.tgir},
                     {"scr", corpus.sizes.scr},
                     {"fic", corpus.sizes.fic}}},
                   {"image", {{"side", kImageSide}, {"channels", kImageChannels}, {"dtype", "f64le"}}}};
  write_text(root / "manifest.json", manifest.dump(2) + "\n");
  std::ofstream blob(root / "images.bin", std::ios::binary);
  if (!blob) fail(ErrorKind::kIo, "cannot write images.bin");
  for (const auto& img : corpus.images)
    for (double v : img) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      std::array<char, 8> bytes{};
      for (std::size_t i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
      blob.write(bytes.data(), 8);
    }
  write_text(root / "xmr_train.jsonl", pairs_jsonl(corpus.xmr));
  write_text(root / "scr_train.jsonl", pairs_jsonl(corpus.scr));
  write_text(root / "fic_train.jsonl", pairs_jsonl(corpus.fic));
  write_text(root / "tgir_train.jsonl", triplets_jsonl(corpus.tgir));
  for (const EvalSplit* e : {&corpus.val, &corpus.test}) {
    const std::string s = split_name(e->split);
    write_text(root / (s + "_pairs.jsonl"), pairs_jsonl(e->pairs));
    write_text(root / (s + "_triplets.jsonl"), triplets_jsonl(e->triplets));
  }
}

Corpus load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  std::ifstream in(root / "manifest.json");
  if (!in) fail(ErrorKind::kIo, "cannot open '" + (root / "manifest.json").string() + "'");
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad manifest: ") + e.what());
  }
  Corpus corpus;
  const json& cat = m.at("catalog");
  corpus.catalog.seed = cat.at("seed").get<std::uint64_t>();
  for (const json& p : cat.at("products")) {
    const std::size_t id = p.at("id").get<std::size_t>();
    if (id != corpus.catalog.products.size()) fail(ErrorKind::kFormat, "manifest: product ids out of order");
    corpus.catalog.products.push_back({id, attrs_from_json(p.at("attributes"))});
    corpus.catalog.splits.push_back(split_from_name(p.at("split").get<std::string>()));
  }
  const json& s = m.at("sizes");
  corpus.sizes = {s.at("xmr").get<std::size_t>(), s.at("tgir").get<std::size_t>(),
                  s.at("scr").get<std::size_t>(), s.at("fic").get<std::size_t>()};
  std::ifstream blob(root / "images.bin", std::ios::binary);
  if (!blob) fail(ErrorKind::kIo, "cannot open images.bin");
  for (std::size_t p = 0; p < corpus.catalog.products.size(); ++p) {
    std::vector<double> img(kImageValues);
    for (double& v : img) {
      std::array<unsigned char, 8> bytes{};
      blob.read(reinterpret_cast<char*>(bytes.data()), 8);
      if (!blob) fail(ErrorKind::kFormat, "images.bin truncated");
      std::uint64_t bits = 0;
      for (std::size_t i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
      v = std::bit_cast<double>(bits);
    }
    corpus.images.push_back(std::move(img));
  }
  corpus.xmr = read_pairs(root / "xmr_train.jsonl");
  corpus.scr = read_pairs(root / "scr_train.jsonl");
  corpus.fic = read_pairs(root / "fic_train.jsonl");
  corpus.tgir = read_triplets(corpus.catalog, root / "tgir_train.jsonl");
  for (EvalSplit* e : {&corpus.val, &corpus.test}) {
    e->split = e == &corpus.val ? Split::kVal : Split::kTest;
    e->products = corpus.catalog.ids_in(e->split);
    const std::string sn = split_name(e->split);
    e->pairs = read_pairs(root / (sn + "_pairs.jsonl"));
    e->triplets = read_triplets(corpus.catalog, root / (sn + "_triplets.jsonl"));
  }
  return corpus;
}

}  // namespace fashionmt::data
