// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic fashion corpus: attribute-tuple products, deterministic 24x24
// renderings, a two-template caption grammar and the four task datasets.
//
// Image layout, 3x3 grid of 8x8 cells (row, col):
//   (0,1)        neckline glyph, white pixels: crew 16, v 10, collar 24
//   (1,0) (1,2)  sleeve glyphs, white pixels: none 0, short 12, long 32
//   (1,1) (2,1)  body, palette red/green, blue channel zero
//   (2,1)        pattern in the blue channel: solid none, dotted 16 px, striped 32 px
//   corners      category: one corner filled grey (dress TL, shirt TR, toptee BL, pants BR)

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "fashionmt/batch.hpp"

namespace fashionmt::data {

inline constexpr std::size_t kNumCategories = 4;
inline constexpr std::size_t kNumColors = 8;
inline constexpr std::size_t kNumPatterns = 3;
inline constexpr std::size_t kNumSleeves = 3;
inline constexpr std::size_t kNumNecklines = 3;
inline constexpr std::size_t kAttributeSpace =
    kNumCategories * kNumColors * kNumPatterns * kNumSleeves * kNumNecklines;  // 864
inline constexpr std::size_t kNumSubcategories = kNumCategories * kNumPatterns;

inline constexpr std::array<std::string_view, kNumCategories> kCategoryNames = {
    "dress", "shirt", "toptee", "pants"};
inline constexpr std::array<std::string_view, kNumColors> kColorNames = {
    "black", "blue", "green", "purple", "grey", "pink", "red", "yellow"};
inline constexpr std::array<std::string_view, kNumPatterns> kPatternNames = {
    "solid", "striped", "dotted"};
inline constexpr std::array<std::string_view, kNumSleeves> kSleeveNames = {
    "none", "short", "long"};
inline constexpr std::array<std::string_view, kNumNecklines> kNecklineNames = {
    "crew", "v", "collar"};

struct Attributes {
  std::size_t category = 0;
  std::size_t color = 0;
  std::size_t pattern = 0;
  std::size_t sleeve = 0;
  std::size_t neckline = 0;

  bool operator==(const Attributes&) const = default;
  auto operator<=>(const Attributes&) const = default;
};

void validate(const Attributes& a);
// Dense index in [0, 864).
std::size_t attribute_index(const Attributes& a);
Attributes attributes_from_index(std::size_t index);
// category * 3 + pattern, in [0, 12).
std::size_t subcategory(const Attributes& a);

struct Product {
  std::size_t id = 0;
  Attributes attrs;
};

// Independent 64-bit seed for a named random stream.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };
const char* split_name(Split s);

struct Catalog {
  std::uint64_t seed = 0;
  std::vector<Product> products;
  std::vector<Split> splits;  // per product id

  std::vector<std::size_t> ids_in(Split s) const;
  std::optional<std::size_t> find(const Attributes& a) const;
};

// Distinct attribute tuples, seeded shuffle, first 80% train, next 10% val,
// rest test.
Catalog gen_catalog(std::uint64_t seed, std::size_t n_products);

// ---- images ---------------------------------------------------------------

inline constexpr std::size_t kImageSide = 24;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kCellSide = 8;
inline constexpr std::size_t kImageValues = kImageSide * kImageSide * kImageChannels;

// (H, W, C) row-major values in [0, 1].
std::vector<double> render_image(const Attributes& a);
// Mean of each 8x8 cell per channel: 9 cells x 3 channels, cell-major.
std::vector<double> cell_means(std::span<const double> image);

// ---- vocabulary -----------------------------------------------------------

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kSosId = 1;
inline constexpr std::size_t kEosId = 2;
inline constexpr std::size_t kUnkId = 3;
inline constexpr std::size_t kNumWords = 120;
inline constexpr std::size_t kVocabSize = kNumWords + 4;
inline constexpr std::size_t kMaxCaptionTokens = 16;

class Vocabulary {
 public:
  static const Vocabulary& instance();

  std::size_t id(std::string_view word) const;  // kUnkId when unknown
  const std::string& word(std::size_t id) const;
  std::size_t size() const { return words_.size(); }

 private:
  Vocabulary();
  std::vector<std::string> words_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

std::vector<std::size_t> tokenize(std::string_view text);
// Joins words with single spaces; sentinels and pads are skipped.
std::string detokenize(std::span<const std::size_t> ids);

// ---- captions -------------------------------------------------------------

inline constexpr std::size_t kNumCaptionTemplates = 2;

std::string caption_text(const Attributes& a, std::size_t template_id);
// Template drawn from rng; result carries start and end sentinels.
std::vector<std::size_t> caption(const Attributes& a, std::mt19937_64& rng);
// Accepts either template, with or without sentinels. nullopt when the
// sequence is not a grammar sentence.
std::optional<Attributes> parse_caption(std::span<const std::size_t> ids);

// ---- text-guided retrieval triplets ----------------------------------------

// Target values for the attributes that change; category never changes.
struct AttributeDelta {
  std::optional<std::size_t> color;
  std::optional<std::size_t> pattern;
  std::optional<std::size_t> sleeve;
  std::optional<std::size_t> neckline;

  std::size_t size() const;
  Attributes apply(const Attributes& ref) const;
  bool operator==(const AttributeDelta&) const = default;
};

AttributeDelta delta_between(const Attributes& ref, const Attributes& target);
// "is red instead of blue and has long sleeves". Requires 1 or 2 changes.
std::string modifying_text(const Attributes& ref, const AttributeDelta& delta);
std::vector<std::size_t> modifying_tokens(const Attributes& ref, const AttributeDelta& delta);
// Recovers the delta; checks every "instead of" clause against `ref`.
std::optional<AttributeDelta> parse_modifying_text(std::span<const std::size_t> ids,
                                                   const Attributes& ref);

struct TgirTriplet {
  std::size_t ref = 0;
  std::size_t target = 0;
  AttributeDelta delta;
  std::vector<std::size_t> tokens;  // with sentinels
};

// ---- task datasets ------------------------------------------------------

struct PairRecord {
  std::size_t product = 0;
  std::vector<std::size_t> tokens;  // caption with sentinels
};

struct TaskSizes {
  std::size_t xmr = 2000;
  std::size_t tgir = 200;
  std::size_t scr = 2000;
  std::size_t fic = 2000;

  std::size_t of(Task t) const;
  std::array<std::size_t, kNumTasks> as_array() const;
};

// Evaluation data for one held-out split: one captioned pair per product and
// text-guided triplets whose candidate pool is every product of the split.
struct EvalSplit {
  Split split = Split::kVal;
  std::vector<std::size_t> products;
  std::vector<PairRecord> pairs;
  std::vector<TgirTriplet> triplets;
};

inline constexpr std::size_t kMaxEvalTriplets = 120;

struct Corpus {
  Catalog catalog;
  TaskSizes sizes;
  std::vector<PairRecord> xmr;
  std::vector<TgirTriplet> tgir;
  std::vector<PairRecord> scr;
  std::vector<PairRecord> fic;
  EvalSplit val;
  EvalSplit test;
  std::vector<std::vector<double>> images;  // per product id

  std::size_t train_size(Task t) const;
  const std::vector<double>& image(std::size_t product) const { return images.at(product); }
};

Corpus build_corpus(std::uint64_t seed, std::size_t n_products, const TaskSizes& sizes);

// ---- batching -------------------------------------------------------------

ImageBatch image_batch(const Corpus& corpus, std::span<const std::size_t> products);
TokenBatch token_batch(std::span<const std::vector<std::size_t>* const> seqs);

XmrBatch xmr_batch(const Corpus& c, std::span<const PairRecord* const> recs);
ScrBatch scr_batch(const Corpus& c, std::span<const PairRecord* const> recs);
FicBatch fic_batch(const Corpus& c, std::span<const PairRecord* const> recs);
TgirBatch tgir_batch(const Corpus& c, std::span<const TgirTriplet* const> recs);

// ---- serialization --------------------------------------------------------

// Writes manifest.json (seed, counts, splits, attributes), images.bin (f64
// little-endian, product-major) and one JSON-lines file per task dataset.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);
nlohmann::json catalog_to_json(const Catalog& c);

}  // namespace fashionmt::data
