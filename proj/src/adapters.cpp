// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/adapters.hpp"

#include "fashionmt/error.hpp"

namespace fashionmt {

using ad::Tensor;

AdaptMlpParams init_adapt_mlp(ParamStore& store, const std::string& name,
                              std::size_t width, std::size_t bottleneck,
                              std::optional<Task> owner, std::mt19937_64& rng) {
  if (bottleneck == 0) {
    fail(ErrorKind::kInvalidArgument, name + ": bottleneck must be >= 1");
  }
  const auto g = ParamGroup::kAdapter;
  AdaptMlpParams p;
  p.ln = init_norm(store, name + ".ln", width, g, owner);
  p.down = init_linear(store, name + ".down", width, bottleneck, g, owner, rng);
  p.up.w = store.add(name + ".up.w", {bottleneck, width},
                     std::vector<double>(bottleneck * width, 0.0), g, owner);
  p.up.b = store.add(name + ".up.b", {width}, std::vector<double>(width, 0.0), g, owner);
  p.scale = store.add(name + ".scale", {}, {kAdapterInitScale}, g, owner);
  return p;
}

XaaParams init_xaa(ParamStore& store, const std::string& name,
                   std::size_t current_width, std::size_t other_width,
                   std::size_t attn_width, std::size_t heads,
                   std::size_t bottleneck, std::mt19937_64& rng) {
  XaaParams p;
  p.cross = init_attention(store, name + ".cross", current_width, other_width,
                           attn_width, current_width, heads, ParamGroup::kAdapter,
                           std::nullopt, rng);
  p.mlp = init_adapt_mlp(store, name + ".mlp", current_width, bottleneck,
                         std::nullopt, rng);
  return p;
}

std::size_t adapt_mlp_param_count(std::size_t width, std::size_t bottleneck) {
  return 2 * width * bottleneck + bottleneck + width + 2 * width + 1;
}

std::size_t xaa_param_count(std::size_t current_width, std::size_t other_width,
                            std::size_t attn_width, std::size_t bottleneck) {
  const std::size_t q = current_width * attn_width + attn_width;
  const std::size_t kv = 2 * (other_width * attn_width + attn_width);
  const std::size_t o = attn_width * current_width + current_width;
  return q + kv + o + adapt_mlp_param_count(current_width, bottleneck);
}

Tensor adapt_mlp(const Tensor& x, const AdaptMlpParams& p) {
  Tensor h = linear(ad::quick_gelu(linear(norm(x, p.ln), p.down)), p.up);
  return ad::mul(h, p.scale);
}

void AdapterBank::add_tsa(Task task, std::size_t layer, StreamId stream,
                          AdaptMlpParams p) {
  tsa_[{static_cast<int>(task), layer, static_cast<int>(stream)}] = std::move(p);
}

void AdapterBank::add_xaa(std::size_t layer, XaaDirection dir, XaaParams p) {
  xaa_[{layer, static_cast<int>(dir)}] = std::move(p);
}

const AdaptMlpParams& AdapterBank::tsa(Task task, std::size_t layer,
                                       StreamId stream) const {
  auto it = tsa_.find({static_cast<int>(task), layer, static_cast<int>(stream)});
  if (it == tsa_.end()) {
    fail(ErrorKind::kUnknownTask, std::string("no task-specific adapter for task '") +
                                      task_name(task) + "' at layer " +
                                      std::to_string(layer));
  }
  return it->second;
}

const XaaParams& AdapterBank::xaa(std::size_t layer, XaaDirection dir) const {
  auto it = xaa_.find({layer, static_cast<int>(dir)});
  if (it == xaa_.end()) {
    fail(ErrorKind::kInvalidArgument,
         "no cross-attention adapter at layer " + std::to_string(layer));
  }
  return it->second;
}

Tensor tsa_forward(const Tensor& z_prime, const AdapterBank& bank, Task task,
                   std::size_t layer, StreamId stream) {
  return adapt_mlp(z_prime, bank.tsa(task, layer, stream));
}

Tensor xaa_forward(const Tensor& z_prime, const Tensor& memory, const XaaParams& p,
                   std::span<const double> memory_mask) {
  if (memory.rank() != 3 || memory.dim(1) == 0) {
    fail(ErrorKind::kInvalidArgument, "xaa_forward: empty memory");
  }
  return adapt_mlp(attention(z_prime, memory, p.cross, memory_mask), p.mlp);
}

Tensor layer_combine(const Tensor& mlp_out, const Tensor& z_prime,
                     const Tensor& z_tsa, const Tensor& z_xaa, int eps) {
  if (eps != 0 && eps != 1) {
    fail(ErrorKind::kInvalidArgument, "layer_combine: gate must be 0 or 1");
  }
  auto same = [&](const Tensor& t) {
    if (t.defined() && t.shape() != z_prime.shape()) {
      fail(ErrorKind::kShapeMismatch, "layer_combine: shape mismatch " +
                                          ad::shape_str(t.shape()) + " vs " +
                                          ad::shape_str(z_prime.shape()));
    }
  };
  same(mlp_out);
  same(z_tsa);
  if (eps == 1) same(z_xaa);
  Tensor z = ad::add(mlp_out, z_prime);
  if (z_tsa.defined()) z = ad::add(z, z_tsa);
  if (eps == 1 && z_xaa.defined()) z = ad::add(z, z_xaa);
  return z;
}

}  // namespace fashionmt
