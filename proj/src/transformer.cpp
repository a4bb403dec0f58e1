// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/transformer.hpp"

#include <cmath>

#include "fashionmt/error.hpp"

namespace fashionmt {

using ad::Tensor;

std::size_t StreamConfig::max_tokens() const {
  if (kind == StreamKind::kText) return max_seq_len;
  const std::size_t per_side = image_side / patch_side;
  return per_side * per_side + 1;
}

void StreamConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::kInvalidArgument, msg); };
  if (width == 0 || layers == 0 || heads == 0 || mlp_ratio == 0)
    bad("StreamConfig: width, layers, heads and mlp_ratio must be positive");
  if (width % heads != 0) bad("StreamConfig: width must be divisible by heads");
  if (kind == StreamKind::kText) {
    if (vocab_size == 0 || max_seq_len < 2)
      bad("StreamConfig: text stream needs vocab_size > 0 and max_seq_len >= 2");
  } else {
    if (patch_side == 0 || image_side % patch_side != 0)
      bad("StreamConfig: image side must be divisible by patch side");
  }
}

TokenBatch TokenBatch::from_sequences(
    const std::vector<std::vector<std::size_t>>& seqs, std::size_t pad_id) {
  TokenBatch t;
  t.batch = seqs.size();
  for (const auto& s : seqs) t.len = std::max(t.len, s.size());
  t.ids.assign(t.batch * t.len, pad_id);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    std::copy(seqs[b].begin(), seqs[b].end(), t.ids.begin() + b * t.len);
    t.lengths.push_back(seqs[b].size());
  }
  return t;
}

LinearParams init_linear(ParamStore& store, const std::string& name,
                         std::size_t in, std::size_t out, ParamGroup group,
                         std::optional<Task> owner, std::mt19937_64& rng) {
  LinearParams p;
  p.w = store.add(name + ".w", {in, out}, normal_values(rng, in * out, kWeightInitStd),
                  group, owner);
  p.b = store.add(name + ".b", {out}, std::vector<double>(out, 0.0), group, owner);
  return p;
}

NormParams init_norm(ParamStore& store, const std::string& name, std::size_t d,
                     ParamGroup group, std::optional<Task> owner) {
  NormParams p;
  p.gain = store.add(name + ".gain", {d}, std::vector<double>(d, 1.0), group, owner);
  p.bias = store.add(name + ".bias", {d}, std::vector<double>(d, 0.0), group, owner);
  return p;
}

AttentionParams init_attention(ParamStore& store, const std::string& name,
                               std::size_t query_width, std::size_t kv_width,
                               std::size_t attn_width, std::size_t out_width,
                               std::size_t heads, ParamGroup group,
                               std::optional<Task> owner, std::mt19937_64& rng) {
  if (heads == 0 || attn_width % heads != 0) {
    fail(ErrorKind::kInvalidArgument,
         name + ": attention width must be divisible by heads");
  }
  AttentionParams p;
  p.heads = heads;
  p.q = init_linear(store, name + ".q", query_width, attn_width, group, owner, rng);
  p.k = init_linear(store, name + ".k", kv_width, attn_width, group, owner, rng);
  p.v = init_linear(store, name + ".v", kv_width, attn_width, group, owner, rng);
  p.o = init_linear(store, name + ".o", attn_width, out_width, group, owner, rng);
  return p;
}

StreamParams init_stream(ParamStore& store, const std::string& prefix,
                         const StreamConfig& cfg, std::size_t embed_dim,
                         std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.width;
  const auto g = ParamGroup::kBackbone;
  StreamParams s;
  if (cfg.kind == StreamKind::kText) {
    s.token_embedding = store.add(prefix + ".token_embedding", {cfg.vocab_size, d},
                                  normal_values(rng, cfg.vocab_size * d, kWeightInitStd),
                                  g);
  } else {
    s.patch = init_linear(store, prefix + ".patch", cfg.patch_dim(), d, g,
                          std::nullopt, rng);
    s.class_token = store.add(prefix + ".class_token", {1, d},
                              normal_values(rng, d, kWeightInitStd), g);
  }
  const std::size_t n = cfg.max_tokens();
  s.position = store.add(prefix + ".position", {n, d},
                         normal_values(rng, n * d, kPositionInitStd), g);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    LayerParams layer;
    layer.ln1 = init_norm(store, lp + ".ln1", d, g, std::nullopt);
    layer.attn = init_attention(store, lp + ".attn", d, d, d, d, cfg.heads, g,
                                std::nullopt, rng);
    layer.ln2 = init_norm(store, lp + ".ln2", d, g, std::nullopt);
    layer.fc1 = init_linear(store, lp + ".fc1", d, d * cfg.mlp_ratio, g,
                            std::nullopt, rng);
    layer.fc2 = init_linear(store, lp + ".fc2", d * cfg.mlp_ratio, d, g,
                            std::nullopt, rng);
    s.layers.push_back(std::move(layer));
  }
  s.ln_final = init_norm(store, prefix + ".ln_final", d, g, std::nullopt);
  s.projection = store.add(prefix + ".projection", {d, embed_dim},
                           normal_values(rng, d * embed_dim, kWeightInitStd), g);
  return s;
}

Tensor linear(const Tensor& x, const LinearParams& p) {
  return ad::add(ad::matmul(x, p.w), p.b);
}

Tensor norm(const Tensor& x, const NormParams& p) {
  return ad::layer_norm(x, p.gain, p.bias);
}

Tensor embed_text(const TokenBatch& tokens, const StreamParams& params,
                  const StreamConfig& cfg) {
  if (tokens.len > cfg.max_seq_len) {
    fail(ErrorKind::kInvalidArgument,
         "embed_text: sequence length " + std::to_string(tokens.len) +
             " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  if (tokens.len == 0 || tokens.batch == 0) {
    fail(ErrorKind::kInvalidArgument, "embed_text: empty token batch");
  }
  for (std::size_t id : tokens.ids) {
    if (id >= cfg.vocab_size) {
      fail(ErrorKind::kInvalidArgument, "embed_text: token id " + std::to_string(id) +
                                            " >= vocab_size " +
                                            std::to_string(cfg.vocab_size));
    }
  }
  const std::size_t d = cfg.width;
  Tensor tok = ad::embedding(params.token_embedding, tokens.ids);
  tok = ad::reshape(tok, {tokens.batch, tokens.len, d});
  Tensor pos = ad::slice(params.position, 0, 0, tokens.len);
  return ad::add(tok, pos);
}

Tensor embed_image(const ImageBatch& images, const StreamParams& params,
                   const StreamConfig& cfg) {
  const std::size_t ps = cfg.patch_side;
  if (images.side != cfg.image_side || images.channels != cfg.channels ||
      images.side % ps != 0) {
    fail(ErrorKind::kShapeMismatch,
         "embed_image: image " + std::to_string(images.side) + "x" +
             std::to_string(images.side) + "x" + std::to_string(images.channels) +
             " incompatible with patch side " + std::to_string(ps) +
             " and configured side " + std::to_string(cfg.image_side));
  }
  const std::size_t per_side = images.side / ps;
  const std::size_t np = per_side * per_side;
  const std::size_t c = images.channels;
  const std::size_t pd = ps * ps * c;
  std::vector<double> patches(images.batch * np * pd);
  for (std::size_t b = 0; b < images.batch; ++b)
    for (std::size_t py = 0; py < per_side; ++py)
      for (std::size_t px = 0; px < per_side; ++px) {
        double* dst = patches.data() + ((b * np) + py * per_side + px) * pd;
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t iy = py * ps + y, ix = px * ps + x;
              dst[(y * ps + x) * c + ch] =
                  images.pixels[((b * images.side + iy) * images.side + ix) * c + ch];
            }
      }
  const std::size_t d = cfg.width;
  Tensor x = Tensor::from({images.batch, np, pd}, std::move(patches));
  Tensor tokens = linear(x, params.patch);
  Tensor cls = ad::add(Tensor::zeros({images.batch, 1, d}), params.class_token);
  Tensor z = ad::concat({cls, tokens}, 1);
  return ad::add(z, params.position);
}

std::vector<double> causal_mask(std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = ad::kMaskValue;
  return m;
}

std::vector<double> text_self_mask(const TokenBatch& tokens) {
  const std::size_t n = tokens.len;
  std::vector<double> m(tokens.batch * n * n, 0.0);
  for (std::size_t b = 0; b < tokens.batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (j > i || j >= tokens.lengths[b]) m[(b * n + i) * n + j] = ad::kMaskValue;
  return m;
}

std::vector<double> memory_pad_mask(const TokenBatch& tokens, std::size_t nq) {
  const std::size_t n = tokens.len;
  std::vector<double> m(tokens.batch * nq * n, 0.0);
  for (std::size_t b = 0; b < tokens.batch; ++b)
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = tokens.lengths[b]; j < n; ++j)
        m[(b * nq + i) * n + j] = ad::kMaskValue;
  return m;
}

namespace {

// (B, N, A) -> (B*H, N, A/H)
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0), n = x.dim(1), a = x.dim(2);
  Tensor r = ad::reshape(x, {b, n, heads, a / heads});
  r = ad::permute(r, {0, 2, 1, 3});
  return ad::reshape(r, {b * heads, n, a / heads});
}

// (B*H, N, dh) -> (B, N, H*dh)
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  const std::size_t n = x.dim(1), dh = x.dim(2);
  Tensor r = ad::reshape(x, {batch, heads, n, dh});
  r = ad::permute(r, {0, 2, 1, 3});
  return ad::reshape(r, {batch, n, heads * dh});
}

}  // namespace

Tensor attention(const Tensor& query_src, const Tensor& kv_src,
                 const AttentionParams& p, std::span<const double> mask) {
  if (query_src.rank() != 3 || kv_src.rank() != 3 ||
      query_src.dim(0) != kv_src.dim(0)) {
    fail(ErrorKind::kShapeMismatch,
         "attention: query " + ad::shape_str(query_src.shape()) + " vs memory " +
             ad::shape_str(kv_src.shape()));
  }
  if (kv_src.dim(1) == 0) {
    fail(ErrorKind::kInvalidArgument, "attention: empty memory");
  }
  const std::size_t b = query_src.dim(0), n = query_src.dim(1), m = kv_src.dim(1);
  const std::size_t h = p.heads;
  if (!mask.empty() && mask.size() != n * m && mask.size() != b * n * m) {
    fail(ErrorKind::kShapeMismatch,
         "attention: mask of " + std::to_string(mask.size()) +
             " entries does not broadcast to logits (" + std::to_string(b) + ", " +
             std::to_string(n) + ", " + std::to_string(m) + ")");
  }
  Tensor q = split_heads(linear(query_src, p.q), h);
  Tensor k = split_heads(linear(kv_src, p.k), h);
  Tensor v = split_heads(linear(kv_src, p.v), h);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  Tensor logits = ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt);
  if (!mask.empty()) {
    std::vector<double> full(b * h * n * m);
    const bool shared = mask.size() == n * m;
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t hi = 0; hi < h; ++hi)
        std::copy_n(mask.data() + (shared ? 0 : bi * n * m), n * m,
                    full.data() + (bi * h + hi) * n * m);
    logits = ad::masked_fill(logits, full);
  }
  Tensor attn = ad::softmax(logits, 2);
  Tensor out = merge_heads(ad::matmul(attn, v), b, h);
  return linear(out, p.o);
}

Tensor mlp_block(const Tensor& z, const LayerParams& p) {
  return linear(ad::quick_gelu(linear(z, p.fc1)), p.fc2);
}

Tensor attention_residual(const Tensor& z, const LayerParams& p,
                          std::span<const double> mask) {
  return ad::add(mhsa(norm(z, p.ln1), p.attn, mask), z);
}

Tensor mlp_residual(const Tensor& z_prime, const LayerParams& p) {
  return ad::add(mlp_block(norm(z_prime, p.ln2), p), z_prime);
}

Tensor transformer_layer(const Tensor& z, const LayerParams& p,
                         std::span<const double> mask) {
  return mlp_residual(attention_residual(z, p, mask), p);
}

Tensor gather_positions(const Tensor& z, std::span<const std::size_t> positions) {
  const std::size_t b = z.dim(0), n = z.dim(1), d = z.dim(2);
  if (positions.size() != b) {
    fail(ErrorKind::kShapeMismatch, "gather_positions: one position per row required");
  }
  std::vector<std::size_t> rows(b);
  for (std::size_t i = 0; i < b; ++i) rows[i] = i * n + positions[i];
  return ad::embedding(ad::reshape(z, {b * n, d}), rows);
}

}  // namespace fashionmt
