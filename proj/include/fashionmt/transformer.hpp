// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Pre-norm transformer blocks shared by the language and vision streams.

#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fashionmt/autodiff.hpp"
#include "fashionmt/params.hpp"

namespace fashionmt {

enum class StreamKind { kText, kVision };

struct StreamConfig {
  StreamKind kind = StreamKind::kText;
  std::size_t width = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  // text
  std::size_t vocab_size = 124;
  std::size_t max_seq_len = 16;
  // vision
  std::size_t image_side = 24;
  std::size_t channels = 3;
  std::size_t patch_side = 8;

  // Positions the stream can hold: max_seq_len, or patches + class token.
  std::size_t max_tokens() const;
  std::size_t patch_dim() const { return patch_side * patch_side * channels; }
  void validate() const;
};

// Padded id matrix. Row b holds lengths[b] real tokens followed by pads.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> lengths;

  static TokenBatch from_sequences(const std::vector<std::vector<std::size_t>>& seqs,
                                   std::size_t pad_id);
};

// Row-major (B, H, W, C) pixels.
struct ImageBatch {
  std::size_t batch = 0;
  std::size_t side = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;
};

struct LinearParams {
  ad::Tensor w;  // (in, out)
  ad::Tensor b;  // (out)
};

struct NormParams {
  ad::Tensor gain;
  ad::Tensor bias;
};

struct AttentionParams {
  LinearParams q, k, v, o;
  std::size_t heads = 1;
};

struct LayerParams {
  NormParams ln1, ln2;
  AttentionParams attn;
  LinearParams fc1, fc2;
};

struct StreamParams {
  ad::Tensor token_embedding;  // text: (vocab, D)
  LinearParams patch;          // vision: (patch_dim, D)
  ad::Tensor class_token;      // vision: (1, D)
  ad::Tensor position;         // (max_tokens, D)
  std::vector<LayerParams> layers;
  NormParams ln_final;
  ad::Tensor projection;  // (D, embed_dim), no bias
};

inline constexpr double kWeightInitStd = 0.02;
inline constexpr double kPositionInitStd = 0.01;

LinearParams init_linear(ParamStore& store, const std::string& name,
                         std::size_t in, std::size_t out, ParamGroup group,
                         std::optional<Task> owner, std::mt19937_64& rng);
NormParams init_norm(ParamStore& store, const std::string& name, std::size_t d,
                     ParamGroup group, std::optional<Task> owner);
AttentionParams init_attention(ParamStore& store, const std::string& name,
                               std::size_t query_width, std::size_t kv_width,
                               std::size_t attn_width, std::size_t out_width,
                               std::size_t heads, ParamGroup group,
                               std::optional<Task> owner, std::mt19937_64& rng);
StreamParams init_stream(ParamStore& store, const std::string& prefix,
                         const StreamConfig& cfg, std::size_t embed_dim,
                         std::mt19937_64& rng);

ad::Tensor linear(const ad::Tensor& x, const LinearParams& p);
ad::Tensor norm(const ad::Tensor& x, const NormParams& p);

// Token embedding plus learned position; (B, N, D).
ad::Tensor embed_text(const TokenBatch& tokens, const StreamParams& params,
                      const StreamConfig& cfg);
// Linear patch projection, class token, learned position; (B, P + 1, D).
ad::Tensor embed_image(const ImageBatch& images, const StreamParams& params,
                       const StreamConfig& cfg);

// Strict upper triangle masked, n x n.
std::vector<double> causal_mask(std::size_t n);
// Causal mask plus pad columns, (B, N, N).
std::vector<double> text_self_mask(const TokenBatch& tokens);
// Masks pad columns of a text memory for nq queries per row, (B, nq, N).
std::vector<double> memory_pad_mask(const TokenBatch& tokens, std::size_t nq);

// Scaled dot-product multi-head attention. Queries come from `query_src`
// (B, N, Dq), keys and values from `kv_src` (B, M, Dk). `mask` is additive,
// sized N*M (shared) or B*N*M, or empty.
ad::Tensor attention(const ad::Tensor& query_src, const ad::Tensor& kv_src,
                     const AttentionParams& p, std::span<const double> mask);
inline ad::Tensor mhsa(const ad::Tensor& z, const AttentionParams& p,
                       std::span<const double> mask) {
  return attention(z, z, p, mask);
}
// linear -> quick-gelu -> linear
ad::Tensor mlp_block(const ad::Tensor& z, const LayerParams& p);

// z' = z + MHSA(LN(z))
ad::Tensor attention_residual(const ad::Tensor& z, const LayerParams& p,
                              std::span<const double> mask);
// z' + MLP(LN(z'))
ad::Tensor mlp_residual(const ad::Tensor& z_prime, const LayerParams& p);
// Plain pre-norm layer.
ad::Tensor transformer_layer(const ad::Tensor& z, const LayerParams& p,
                             std::span<const double> mask);

// Gathers one row per batch element: out[b] = z[b, positions[b]].
ad::Tensor gather_positions(const ad::Tensor& z,
                            std::span<const std::size_t> positions);

}  // namespace fashionmt
