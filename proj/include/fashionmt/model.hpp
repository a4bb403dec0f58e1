// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// The unified two-stream model and its operational modes:
//   contrastive  single stream, task adapters on, cross attention off
//   fusion       both streams in lockstep, cross attention on in both directions
//   generative   vision encoder + causal text decoder reading image memories
// Text-guided retrieval mixes fusion (query) and contrastive (target).

#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fashionmt/adapters.hpp"
#include "fashionmt/autodiff.hpp"
#include "fashionmt/params.hpp"
#include "fashionmt/transformer.hpp"

namespace fashionmt {

struct ModelConfig {
  StreamConfig text;
  StreamConfig vision;
  std::size_t embed_dim = 32;
  std::size_t bottleneck = 4;
  std::size_t xaa_width = 32;
  std::size_t xaa_heads = 2;
  std::size_t num_classes = 12;
  bool use_tsa = true;
  bool use_xaa = true;
  bool tie_caption_head = true;
  std::uint64_t seed = 0;

  // Desk-scale defaults for the synthetic corpus.
  static ModelConfig toy();
  // CLIP ViT-B/16 dimensions (12x512 text, 12x768 vision). Only used for
  // parameter accounting; never instantiated.
  static ModelConfig clip_scale();

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

enum class Mode { kContrastive, kFusion, kGenerative };

// Cross-attention gates (eps) for a lockstep forward.
struct Gates {
  bool text_from_image = false;
  bool image_from_text = false;
};

inline constexpr double kInitTemperature = 0.07;
inline constexpr double kMinTemperature = 1e-3;
inline constexpr double kMaxTemperature = 10.0;

class FameModel {
 public:
  explicit FameModel(const ModelConfig& cfg);
  FameModel(FameModel&&) = default;
  FameModel& operator=(FameModel&&) = default;
  FameModel(const FameModel&) = delete;
  FameModel& operator=(const FameModel&) = delete;

  // Independent deep copy.
  FameModel clone() const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const StreamParams& text_stream() const { return text_; }
  const StreamParams& vision_stream() const { return vision_; }
  const AdapterBank& adapters() const { return bank_; }

  bool frozen() const { return frozen_; }
  // Detaches every parameter from gradient tracking for good.
  void freeze();

  // Final hidden states of a lockstep forward. Either input may be null for a
  // single-stream pass. `tsa_task` selects the task adapters (ignored when the
  // model has none).
  struct Streams {
    ad::Tensor text;
    ad::Tensor vision;
  };
  Streams forward_streams(const ImageBatch* images, const TokenBatch* tokens,
                          std::optional<Task> tsa_task, Gates gates) const;

  // Class-token / end-token pooling, final LN and projection; (B, E).
  ad::Tensor pool_image(const ad::Tensor& vision_hidden) const;
  ad::Tensor pool_text(const ad::Tensor& text_hidden, const TokenBatch& tokens) const;

  // Contrastive mode; unit-norm rows. Valid tasks: XMR, TGIR.
  ad::Tensor encode_image(const ImageBatch& images, Task task) const;
  ad::Tensor encode_text(const TokenBatch& tokens, Task task) const;

  // Fusion mode: pooled image stream + pooled text stream. Normalized for
  // TGIR queries, raw for SCR. Valid tasks: SCR, TGIR.
  ad::Tensor encode_fusion(const ImageBatch& images, const TokenBatch& tokens,
                           Task task) const;
  ad::Tensor scr_logits(const ImageBatch& images, const TokenBatch& tokens) const;
  std::pair<ad::Tensor, ad::Tensor> tgir_pair(const ImageBatch& refs,
                                              const TokenBatch& mods,
                                              const ImageBatch& targets) const;

  // Generative mode. Per-layer memories are the vision stream's post-MHSA
  // states; decoder layer l cross-attends to memory l.
  std::vector<ad::Tensor> encode_memories(const ImageBatch& images) const;
  ad::Tensor decode_logits(const std::vector<ad::Tensor>& memories,
                           const TokenBatch& prefix) const;
  // (B, N, vocab) next-token logits for every prefix position.
  ad::Tensor fic_logits(const ImageBatch& images, const TokenBatch& prefix) const;
  // Greedy decoding from the start sentinel until the end sentinel or
  // max_len tokens. Ties break toward the lowest id. Returned sequences
  // include both sentinels when emitted.
  std::vector<std::vector<std::size_t>> generate_captions(
      const ImageBatch& images, std::size_t max_len, std::size_t sos_id,
      std::size_t eos_id) const;

  ad::Tensor log_temperature(Task task) const;
  double temperature(Task task) const;
  void clamp_temperatures();

 private:
  void build();
  void require_trainable_task(Task task, bool needs_xaa) const;

  ModelConfig cfg_;
  ParamStore store_;
  StreamParams text_;
  StreamParams vision_;
  AdapterBank bank_;
  LinearParams scr_head_;
  LinearParams caption_head_;  // only when the head is untied
  ad::Tensor log_tau_xmr_;
  ad::Tensor log_tau_tgir_;
  bool frozen_ = false;
};

}  // namespace fashionmt
