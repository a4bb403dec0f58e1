// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include "doctest.h"

#include "fashionmt/checkpoint.hpp"
#include "fashionmt/data.hpp"
#include "fashionmt/error.hpp"
#include "fashionmt/metrics.hpp"
#include "fashionmt/model.hpp"

using namespace fashionmt;
using ad::Tensor;

namespace {

const data::Corpus& corpus() {
  static const data::Corpus c = data::build_corpus(3, 864, {});
  return c;
}

ImageBatch images(std::size_t n) {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(i * 7);
  return data::image_batch(corpus(), ids);
}

TokenBatch captions(std::size_t n) {
  std::vector<std::vector<std::size_t>> seqs;
  for (std::size_t i = 0; i < n; ++i) seqs.push_back(corpus().xmr[i].tokens);
  return TokenBatch::from_sequences(seqs, data::kPadId);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void zero_tsa_scales(FameModel& m) {
  for (auto& p : m.params().all())
    if (p.name.rfind("tsa.", 0) == 0 && p.name.size() > 6 &&
        p.name.substr(p.name.size() - 6) == ".scale")
      p.tensor.mutable_data()[0] = 0.0;
}

}  // namespace

TEST_CASE("backbone recovery with zero TSA scales and closed gates") {
  ModelConfig full = ModelConfig::toy();
  ModelConfig plain = full;
  plain.use_tsa = false;
  plain.use_xaa = false;
  FameModel a(full), b(plain);
  zero_tsa_scales(a);
  const ImageBatch img = images(4);
  const TokenBatch tok = captions(4);
  for (Task t : kAllTasks) {
    const auto sa = a.forward_streams(&img, &tok, t, Gates{});
    const auto sb = b.forward_streams(&img, &tok, std::nullopt, Gates{});
    CHECK(max_abs_diff(sa.text, sb.text) <= 1e-12);
    CHECK(max_abs_diff(sa.vision, sb.vision) <= 1e-12);
  }
  CHECK(max_abs_diff(a.encode_image(img, Task::kXmr), b.encode_image(img, Task::kXmr)) <= 1e-12);
  CHECK(max_abs_diff(a.encode_text(tok, Task::kTgir), b.encode_text(tok, Task::kTgir)) <= 1e-12);
}

TEST_CASE("default TSA scale changes the output") {
  ModelConfig full = ModelConfig::toy();
  ModelConfig plain = full;
  plain.use_tsa = false;
  plain.use_xaa = false;
  FameModel a(full), b(plain);
  // Up-projections start at zero, so perturb them to make the adapters live.
  // A constant fill would only shift every channel equally, which layer norm removes.
  for (auto& p : a.params().all())
    if (p.name.find(".up.w") != std::string::npos) {
      auto d = p.tensor.mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.02 * (static_cast<double>(i % 7) - 3.0);
    }
  const ImageBatch img = images(2);
  CHECK(max_abs_diff(a.encode_image(img, Task::kXmr), b.encode_image(img, Task::kXmr)) > 1e-6);
}

TEST_CASE("mode output shapes") {
  FameModel m(ModelConfig::toy());
  const ImageBatch img = images(3);
  const TokenBatch tok = captions(3);
  const auto e = m.encode_image(img, Task::kXmr);
  CHECK(e.shape() == ad::Shape{3, m.config().embed_dim});
  double n = 0.0;
  for (std::size_t k = 0; k < e.dim(1); ++k) n += e[k] * e[k];
  CHECK(n == doctest::Approx(1.0));
  CHECK(m.scr_logits(img, tok).shape() == ad::Shape{3, m.config().num_classes});
  const auto [q, t] = m.tgir_pair(img, tok, img);
  CHECK(q.shape() == t.shape());
  CHECK(m.fic_logits(img, tok).shape() == ad::Shape{3, tok.len, m.config().text.vocab_size});
  CHECK_THROWS_AS(m.encode_image(img, Task::kScr), Error);
}

TEST_CASE("captioning needs cross attention") {
  ModelConfig c = ModelConfig::toy();
  c.use_xaa = false;
  FameModel m(c);
  CHECK_THROWS_AS(m.fic_logits(images(2), captions(2)), Error);
}

TEST_CASE("decoder is causal") {
  FameModel m(ModelConfig::toy());
  const ImageBatch img = images(1);
  TokenBatch tok = captions(1);
  const Tensor before = m.fic_logits(img, tok);
  tok.ids[tok.len - 2] = 50;
  const Tensor after = m.fic_logits(img, tok);
  const std::size_t v = m.config().text.vocab_size;
  for (std::size_t pos = 0; pos + 2 < tok.len; ++pos)
    for (std::size_t k = 0; k < v; ++k) CHECK(before[pos * v + k] == after[pos * v + k]);
  bool changed = false;
  for (std::size_t k = 0; k < v; ++k)
    changed |= before[(tok.len - 2) * v + k] != after[(tok.len - 2) * v + k];
  CHECK(changed);
}

TEST_CASE("greedy generation is deterministic and bounded") {
  FameModel m(ModelConfig::toy());
  const ImageBatch img = images(3);
  const auto g1 = m.generate_captions(img, data::kMaxCaptionTokens, data::kSosId, data::kEosId);
  const auto g2 = m.generate_captions(img, data::kMaxCaptionTokens, data::kSosId, data::kEosId);
  CHECK(g1 == g2);
  for (const auto& s : g1) {
    CHECK(s.front() == data::kSosId);
    CHECK(s.size() <= data::kMaxCaptionTokens);
  }
}

TEST_CASE("frozen models stop tracking gradients") {
  FameModel m(ModelConfig::toy());
  m.freeze();
  CHECK(m.frozen());
  const Tensor e = m.encode_image(images(2), Task::kXmr);
  CHECK_FALSE(e.requires_grad());
  FameModel c = m.clone();
  CHECK(c.frozen());
  CHECK(c.params().checksum() == m.params().checksum());
}

TEST_CASE("same seed, same parameters; clones are independent") {
  FameModel a(ModelConfig::toy()), b(ModelConfig::toy());
  CHECK(a.params().checksum() == b.params().checksum());
  FameModel c = a.clone();
  c.params().all()[0].tensor.mutable_data()[0] += 1.0;
  CHECK(c.params().checksum() != a.params().checksum());
}

TEST_CASE("temperatures are clamped") {
  FameModel m(ModelConfig::toy());
  CHECK(m.temperature(Task::kXmr) == doctest::Approx(kInitTemperature));
  m.params().get("temperature.xmr").mutable_data()[0] = std::log(1e-6);
  m.clamp_temperatures();
  CHECK(m.temperature(Task::kXmr) == doctest::Approx(kMinTemperature));
}

TEST_CASE("checkpoint round trip reproduces bytes and parameters") {
  FameModel m(ModelConfig::toy());
  const Checkpoint ck = model_checkpoint(m);
  std::stringstream s1;
  write_checkpoint(s1, ck);
  const std::string bytes = s1.str();
  std::stringstream in(bytes);
  const Checkpoint back = read_checkpoint(in);
  std::stringstream s2;
  write_checkpoint(s2, back);
  CHECK(s2.str() == bytes);
  const FameModel m2 = model_from_checkpoint(back);
  CHECK(m2.params().checksum() == m.params().checksum());
}

TEST_CASE("corrupt checkpoints are rejected") {
  std::stringstream bad("not a checkpoint at all");
  CHECK_THROWS_AS(read_checkpoint(bad), Error);
  FameModel m(ModelConfig::toy());
  std::stringstream s;
  write_checkpoint(s, model_checkpoint(m));
  std::string bytes = s.str();
  bytes.resize(bytes.size() / 2);
  std::stringstream cut(bytes);
  CHECK_THROWS_AS(read_checkpoint(cut), Error);
}

TEST_CASE("parameter enumeration equals the closed-form account") {
  for (bool tsa : {false, true})
    for (bool xaa : {false, true}) {
      ModelConfig c = ModelConfig::toy();
      c.use_tsa = tsa;
      c.use_xaa = xaa;
      FameModel m(c);
      const auto closed = metrics::param_account(c, metrics::AccountMode::kMtl);
      const auto counted = metrics::enumerate_params(m);
      CHECK(counted.total == m.params().count());
      CHECK(closed.total == counted.total);
      CHECK(closed.components == counted.components);
    }
}
