// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Shared helpers for tests and the acceptance binary.

#pragma once

#include <random>
#include <vector>

#include "fashionmt/autodiff.hpp"
#include "fashionmt/batch.hpp"
#include "fashionmt/data.hpp"
#include "fashionmt/model.hpp"

namespace fixtures {

using fashionmt::ad::Tensor;

inline Tensor rand_tensor(fashionmt::ad::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                          double hi = 1.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(fashionmt::ad::numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Smallest configuration that still exercises every module.
inline fashionmt::ModelConfig tiny_config() {
  fashionmt::ModelConfig c = fashionmt::ModelConfig::toy();
  c.text.width = 8;
  c.text.layers = 1;
  c.text.heads = 2;
  c.vision.width = 8;
  c.vision.layers = 1;
  c.vision.heads = 2;
  c.embed_dim = 8;
  c.bottleneck = 2;
  c.xaa_width = 8;
  c.xaa_heads = 2;
  return c;
}

inline const fashionmt::data::Corpus& corpus() {
  static const fashionmt::data::Corpus c = fashionmt::data::build_corpus(5, 864, {});
  return c;
}

// Batch of `n` distinct products for `task`, starting at record `offset` (wrapping).
inline fashionmt::TaskBatch task_batch(fashionmt::Task task, std::size_t n,
                                       std::size_t offset = 0) {
  namespace data = fashionmt::data;
  const auto& c = corpus();
  std::vector<const data::PairRecord*> pairs;
  std::vector<const data::TgirTriplet*> trips;
  std::vector<std::size_t> seen;
  auto fresh = [&](std::size_t id) {
    for (auto s : seen)
      if (s == id) return false;
    seen.push_back(id);
    return true;
  };
  switch (task) {
    case fashionmt::Task::kTgir:
      for (std::size_t i = offset; trips.size() < n; ++i) {
        const auto& r = c.tgir[i % c.tgir.size()];
        if (fresh(r.target)) trips.push_back(&r);
      }
      return data::tgir_batch(c, trips);
    default: {
      const auto& pool = task == fashionmt::Task::kXmr   ? c.xmr
                         : task == fashionmt::Task::kScr ? c.scr
                                                         : c.fic;
      for (std::size_t i = offset; pairs.size() < n; ++i) {
        const auto& r = pool[i % pool.size()];
        if (fresh(r.product)) pairs.push_back(&r);
      }
      if (task == fashionmt::Task::kXmr) return data::xmr_batch(c, pairs);
      if (task == fashionmt::Task::kScr) return data::scr_batch(c, pairs);
      return data::fic_batch(c, pairs);
    }
  }
}

}  // namespace fixtures
