// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Task-specific adapters (scaled parallel bottleneck MLPs) and cross-attention
// adapters (multi-head cross attention followed by the same bottleneck MLP),
// plus the gated four-term residual that combines them with a layer's MLP.

#pragma once

#include <array>
#include <map>
#include <tuple>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fashionmt/autodiff.hpp"
#include "fashionmt/params.hpp"
#include "fashionmt/transformer.hpp"

namespace fashionmt {

struct AdaptMlpParams {
  NormParams ln;
  LinearParams down;  // D -> bottleneck
  LinearParams up;    // bottleneck -> D
  ad::Tensor scale;   // learnable scalar s
};

struct XaaParams {
  AttentionParams cross;  // queries from the current stream, keys/values from the other
  AdaptMlpParams mlp;
};

inline constexpr double kAdapterInitScale = 0.1;

// Up-projection starts at zero and s at 0.1, so a fresh adapter is an exact
// no-op on top of the backbone.
AdaptMlpParams init_adapt_mlp(ParamStore& store, const std::string& name,
                              std::size_t width, std::size_t bottleneck,
                              std::optional<Task> owner, std::mt19937_64& rng);
XaaParams init_xaa(ParamStore& store, const std::string& name,
                   std::size_t current_width, std::size_t other_width,
                   std::size_t attn_width, std::size_t heads,
                   std::size_t bottleneck, std::mt19937_64& rng);

// Closed-form scalar counts, used by parameter accounting.
std::size_t adapt_mlp_param_count(std::size_t width, std::size_t bottleneck);
std::size_t xaa_param_count(std::size_t current_width, std::size_t other_width,
                            std::size_t attn_width, std::size_t bottleneck);

// s * AdaptMLP(LN(x))
ad::Tensor adapt_mlp(const ad::Tensor& x, const AdaptMlpParams& p);

enum class StreamId { kText = 0, kVision = 1 };
// Information flow of a cross-attention adapter: which stream receives.
enum class XaaDirection { kImageToText = 0, kTextToImage = 1 };

// Per-(task, layer, stream) TSA sets and per-(layer, direction) shared XAA.
class AdapterBank {
 public:
  AdapterBank() = default;

  void add_tsa(Task task, std::size_t layer, StreamId stream, AdaptMlpParams p);
  void add_xaa(std::size_t layer, XaaDirection dir, XaaParams p);

  bool has_tsa() const { return !tsa_.empty(); }
  bool has_xaa() const { return !xaa_.empty(); }
  const AdaptMlpParams& tsa(Task task, std::size_t layer, StreamId stream) const;
  const XaaParams& xaa(std::size_t layer, XaaDirection dir) const;

 private:
  std::map<std::tuple<int, std::size_t, int>, AdaptMlpParams> tsa_;
  std::map<std::pair<std::size_t, int>, XaaParams> xaa_;
};

ad::Tensor tsa_forward(const ad::Tensor& z_prime, const AdapterBank& bank,
                       Task task, std::size_t layer, StreamId stream);

// s * AdaptMLP(LN(MHXA(z', y))). `memory_mask` masks padded memory rows and is
// empty when the memory has none.
ad::Tensor xaa_forward(const ad::Tensor& z_prime, const ad::Tensor& memory,
                       const XaaParams& p, std::span<const double> memory_mask);

// MLP(LN(z')) + z' + z_tsa + eps * z_xaa. Undefined z_tsa / z_xaa tensors
// stand for exact zeros; with eps == 0 the cross-attention term is skipped.
ad::Tensor layer_combine(const ad::Tensor& mlp_out, const ad::Tensor& z_prime,
                         const ad::Tensor& z_tsa, const ad::Tensor& z_xaa,
                         int eps);

}  // namespace fashionmt
