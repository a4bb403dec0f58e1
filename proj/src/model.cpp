// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/model.hpp"

#include <algorithm>
#include <cmath>

#include "fashionmt/error.hpp"

namespace fashionmt {

using ad::Tensor;
using nlohmann::json;

namespace {

json stream_to_json(const StreamConfig& s) {
  json j{{"kind", s.kind == StreamKind::kText ? "text" : "vision"},
         {"width", s.width},
         {"layers", s.layers},
         {"heads", s.heads},
         {"mlp_ratio", s.mlp_ratio}};
  if (s.kind == StreamKind::kText) {
    j["vocab_size"] = s.vocab_size;
    j["max_seq_len"] = s.max_seq_len;
  } else {
    j["image_side"] = s.image_side;
    j["channels"] = s.channels;
    j["patch_side"] = s.patch_side;
  }
  return j;
}

StreamConfig stream_from_json(const json& j, StreamKind kind) {
  StreamConfig s;
  s.kind = kind;
  s.width = j.at("width").get<std::size_t>();
  s.layers = j.at("layers").get<std::size_t>();
  s.heads = j.at("heads").get<std::size_t>();
  s.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  if (kind == StreamKind::kText) {
    s.vocab_size = j.at("vocab_size").get<std::size_t>();
    s.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  } else {
    s.image_side = j.at("image_side").get<std::size_t>();
    s.channels = j.at("channels").get<std::size_t>();
    s.patch_side = j.at("patch_side").get<std::size_t>();
  }
  return s;
}

}  // namespace

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.text.kind = StreamKind::kText;
  c.text.width = 32;
  c.text.layers = 2;
  c.text.heads = 2;
  c.text.mlp_ratio = 2;
  c.text.vocab_size = 124;
  c.text.max_seq_len = 16;
  c.vision.kind = StreamKind::kVision;
  c.vision.width = 32;
  c.vision.layers = 2;
  c.vision.heads = 2;
  c.vision.mlp_ratio = 2;
  c.vision.image_side = 24;
  c.vision.channels = 3;
  c.vision.patch_side = 8;
  c.embed_dim = 32;
  c.bottleneck = 4;
  c.xaa_width = 32;
  c.xaa_heads = 2;
  c.num_classes = 12;
  c.tie_caption_head = false;
  return c;
}

ModelConfig ModelConfig::clip_scale() {
  ModelConfig c;
  c.text.kind = StreamKind::kText;
  c.text.width = 512;
  c.text.layers = 12;
  c.text.heads = 8;
  c.text.mlp_ratio = 4;
  c.text.vocab_size = 49408;
  c.text.max_seq_len = 77;
  c.vision.kind = StreamKind::kVision;
  c.vision.width = 768;
  c.vision.layers = 12;
  c.vision.heads = 12;
  c.vision.mlp_ratio = 4;
  c.vision.image_side = 224;
  c.vision.channels = 3;
  c.vision.patch_side = 16;
  c.embed_dim = 512;
  c.bottleneck = 64;
  c.xaa_width = 512;
  c.xaa_heads = 8;
  c.num_classes = 48;
  return c;
}

void ModelConfig::validate() const {
  text.validate();
  vision.validate();
  if (text.kind != StreamKind::kText || vision.kind != StreamKind::kVision)
    fail(ErrorKind::kInvalidArgument, "ModelConfig: stream kinds swapped");
  if (text.layers != vision.layers)
    fail(ErrorKind::kInvalidArgument,
         "ModelConfig: streams must have equal layer counts for lockstep cross attention");
  if (embed_dim == 0 || num_classes == 0)
    fail(ErrorKind::kInvalidArgument, "ModelConfig: embed_dim and num_classes must be positive");
  if (use_tsa && bottleneck == 0)
    fail(ErrorKind::kInvalidArgument, "ModelConfig: bottleneck must be >= 1");
  if (use_xaa && (xaa_heads == 0 || xaa_width % xaa_heads != 0))
    fail(ErrorKind::kInvalidArgument, "ModelConfig: xaa_width must be divisible by xaa_heads");
}

json ModelConfig::to_json() const {
  return json{{"text", stream_to_json(text)},
              {"vision", stream_to_json(vision)},
              {"embed_dim", embed_dim},
              {"bottleneck", bottleneck},
              {"xaa_width", xaa_width},
              {"xaa_heads", xaa_heads},
              {"num_classes", num_classes},
              {"use_tsa", use_tsa},
              {"use_xaa", use_xaa},
              {"tie_caption_head", tie_caption_head},
              {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.text = stream_from_json(j.at("text"), StreamKind::kText);
  c.vision = stream_from_json(j.at("vision"), StreamKind::kVision);
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.bottleneck = j.at("bottleneck").get<std::size_t>();
  c.xaa_width = j.at("xaa_width").get<std::size_t>();
  c.xaa_heads = j.at("xaa_heads").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.use_tsa = j.at("use_tsa").get<bool>();
  c.use_xaa = j.at("use_xaa").get<bool>();
  c.tie_caption_head = j.at("tie_caption_head").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

FameModel::FameModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  build();
}

void FameModel::build() {
  // Independent streams per component so the backbone values do not depend on
  // which adapters are present.
  std::mt19937_64 backbone_rng(cfg_.seed * 4 + 0);
  std::mt19937_64 adapter_rng(cfg_.seed * 4 + 1);
  std::mt19937_64 head_rng(cfg_.seed * 4 + 2);

  text_ = init_stream(store_, "text", cfg_.text, cfg_.embed_dim, backbone_rng);
  vision_ = init_stream(store_, "vision", cfg_.vision, cfg_.embed_dim, backbone_rng);

  const std::size_t layers = cfg_.text.layers;
  if (cfg_.use_tsa) {
    for (Task t : kAllTasks)
      for (std::size_t l = 0; l < layers; ++l) {
        const std::string base =
            std::string("tsa.") + task_name(t) + ".layer" + std::to_string(l);
        bank_.add_tsa(t, l, StreamId::kText,
                      init_adapt_mlp(store_, base + ".text", cfg_.text.width,
                                     cfg_.bottleneck, t, adapter_rng));
        bank_.add_tsa(t, l, StreamId::kVision,
                      init_adapt_mlp(store_, base + ".vision", cfg_.vision.width,
                                     cfg_.bottleneck, t, adapter_rng));
      }
  }
  if (cfg_.use_xaa) {
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string base = "xaa.layer" + std::to_string(l);
      bank_.add_xaa(l, XaaDirection::kImageToText,
                    init_xaa(store_, base + ".image_to_text", cfg_.text.width,
                             cfg_.vision.width, cfg_.xaa_width, cfg_.xaa_heads,
                             cfg_.bottleneck, adapter_rng));
      bank_.add_xaa(l, XaaDirection::kTextToImage,
                    init_xaa(store_, base + ".text_to_image", cfg_.vision.width,
                             cfg_.text.width, cfg_.xaa_width, cfg_.xaa_heads,
                             cfg_.bottleneck, adapter_rng));
    }
  }
  scr_head_ = init_linear(store_, "head.scr", cfg_.embed_dim, cfg_.num_classes,
                          ParamGroup::kHead, Task::kScr, head_rng);
  if (!cfg_.tie_caption_head) {
    caption_head_.w = store_.add(
        "head.fic.w", {cfg_.text.width, cfg_.text.vocab_size},
        normal_values(head_rng, cfg_.text.width * cfg_.text.vocab_size, kWeightInitStd),
        ParamGroup::kHead, Task::kFic);
  }
  const double log_tau = std::log(kInitTemperature);
  log_tau_xmr_ = store_.add("temperature.xmr", {}, {log_tau},
                            ParamGroup::kTemperature, Task::kXmr);
  log_tau_tgir_ = store_.add("temperature.tgir", {}, {log_tau},
                             ParamGroup::kTemperature, Task::kTgir);
}

FameModel FameModel::clone() const {
  FameModel copy(cfg_);
  copy.store_.copy_values_from(store_);
  if (frozen_) copy.freeze();
  return copy;
}

void FameModel::freeze() {
  store_.set_requires_grad(false);
  frozen_ = true;
}

void FameModel::require_trainable_task(Task task, bool needs_xaa) const {
  if (needs_xaa && !cfg_.use_xaa) {
    fail(ErrorKind::kInvalidArgument,
         std::string("task '") + task_name(task) +
             "' needs cross-attention adapters, which this model does not have");
  }
}

FameModel::Streams FameModel::forward_streams(const ImageBatch* images,
                                              const TokenBatch* tokens,
                                              std::optional<Task> tsa_task,
                                              Gates gates) const {
  if (!images && !tokens) {
    fail(ErrorKind::kInvalidArgument, "forward_streams: no input");
  }
  if ((gates.text_from_image || gates.image_from_text) &&
      (!images || !tokens || !cfg_.use_xaa)) {
    fail(ErrorKind::kInvalidArgument,
         "forward_streams: cross attention needs both streams and XAA modules");
  }
  if (images && tokens && images->batch != tokens->batch) {
    fail(ErrorKind::kShapeMismatch, "forward_streams: batch sizes differ");
  }
  const bool tsa = cfg_.use_tsa && tsa_task.has_value();
  Tensor zt, zv;
  std::vector<double> text_mask, image_query_mask;
  if (tokens) {
    zt = embed_text(*tokens, text_, cfg_.text);
    text_mask = text_self_mask(*tokens);
  }
  if (images) {
    zv = embed_image(*images, vision_, cfg_.vision);
    if (tokens) image_query_mask = memory_pad_mask(*tokens, zv.dim(1));
  }
  for (std::size_t l = 0; l < cfg_.text.layers; ++l) {
    Tensor zt_prime, zv_prime;
    if (tokens) zt_prime = attention_residual(zt, text_.layers[l], text_mask);
    if (images) zv_prime = attention_residual(zv, vision_.layers[l], {});
    if (tokens) {
      const LayerParams& lp = text_.layers[l];
      Tensor mlp = mlp_block(norm(zt_prime, lp.ln2), lp);
      Tensor z_tsa = tsa ? tsa_forward(zt_prime, bank_, *tsa_task, l, StreamId::kText)
                         : Tensor();
      Tensor z_xaa;
      if (gates.text_from_image)
        z_xaa = xaa_forward(zt_prime, zv_prime,
                            bank_.xaa(l, XaaDirection::kImageToText), {});
      zt = layer_combine(mlp, zt_prime, z_tsa, z_xaa, gates.text_from_image ? 1 : 0);
    }
    if (images) {
      const LayerParams& lp = vision_.layers[l];
      Tensor mlp = mlp_block(norm(zv_prime, lp.ln2), lp);
      Tensor z_tsa = tsa ? tsa_forward(zv_prime, bank_, *tsa_task, l, StreamId::kVision)
                         : Tensor();
      Tensor z_xaa;
      if (gates.image_from_text)
        z_xaa = xaa_forward(zv_prime, zt_prime,
                            bank_.xaa(l, XaaDirection::kTextToImage), image_query_mask);
      zv = layer_combine(mlp, zv_prime, z_tsa, z_xaa, gates.image_from_text ? 1 : 0);
    }
  }
  return {zt, zv};
}

Tensor FameModel::pool_image(const Tensor& vision_hidden) const {
  std::vector<std::size_t> pos(vision_hidden.dim(0), 0);
  Tensor cls = gather_positions(vision_hidden, pos);
  return ad::matmul(norm(cls, vision_.ln_final), vision_.projection);
}

Tensor FameModel::pool_text(const Tensor& text_hidden, const TokenBatch& tokens) const {
  std::vector<std::size_t> pos(tokens.batch);
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    if (tokens.lengths[b] == 0)
      fail(ErrorKind::kInvalidArgument, "pool_text: empty sequence");
    pos[b] = tokens.lengths[b] - 1;
  }
  Tensor eos = gather_positions(text_hidden, pos);
  return ad::matmul(norm(eos, text_.ln_final), text_.projection);
}

namespace {

void require_contrastive_task(Task task) {
  if (task != Task::kXmr && task != Task::kTgir) {
    fail(ErrorKind::kInvalidArgument,
         std::string("contrastive mode does not serve task '") + task_name(task) + "'");
  }
}

}  // namespace

Tensor FameModel::encode_image(const ImageBatch& images, Task task) const {
  require_contrastive_task(task);
  Streams s = forward_streams(&images, nullptr, task, {});
  return ad::l2_normalize(pool_image(s.vision));
}

Tensor FameModel::encode_text(const TokenBatch& tokens, Task task) const {
  require_contrastive_task(task);
  Streams s = forward_streams(nullptr, &tokens, task, {});
  return ad::l2_normalize(pool_text(s.text, tokens));
}

Tensor FameModel::encode_fusion(const ImageBatch& images, const TokenBatch& tokens,
                                Task task) const {
  if (task != Task::kScr && task != Task::kTgir) {
    fail(ErrorKind::kInvalidArgument,
         std::string("fusion mode does not serve task '") + task_name(task) + "'");
  }
  for (std::size_t len : tokens.lengths) {
    if (len == 0) fail(ErrorKind::kInvalidArgument, "encode_fusion: empty caption");
  }
  Gates gates;
  gates.text_from_image = cfg_.use_xaa;
  gates.image_from_text = cfg_.use_xaa;
  Streams s = forward_streams(&images, &tokens, task, gates);
  Tensor fused = ad::add(pool_image(s.vision), pool_text(s.text, tokens));
  if (task == Task::kTgir) fused = ad::l2_normalize(fused);
  return fused;
}

Tensor FameModel::scr_logits(const ImageBatch& images, const TokenBatch& tokens) const {
  return linear(encode_fusion(images, tokens, Task::kScr), scr_head_);
}

std::pair<Tensor, Tensor> FameModel::tgir_pair(const ImageBatch& refs,
                                               const TokenBatch& mods,
                                               const ImageBatch& targets) const {
  return {encode_fusion(refs, mods, Task::kTgir), encode_image(targets, Task::kTgir)};
}

std::vector<Tensor> FameModel::encode_memories(const ImageBatch& images) const {
  require_trainable_task(Task::kFic, true);
  const bool tsa = cfg_.use_tsa;
  Tensor zv = embed_image(images, vision_, cfg_.vision);
  std::vector<Tensor> memories;
  for (std::size_t l = 0; l < cfg_.vision.layers; ++l) {
    const LayerParams& lp = vision_.layers[l];
    Tensor zv_prime = attention_residual(zv, lp, {});
    memories.push_back(zv_prime);
    if (l + 1 == cfg_.vision.layers) break;  // last layer's output is unused
    Tensor mlp = mlp_block(norm(zv_prime, lp.ln2), lp);
    Tensor z_tsa = tsa ? tsa_forward(zv_prime, bank_, Task::kFic, l, StreamId::kVision)
                       : Tensor();
    zv = layer_combine(mlp, zv_prime, z_tsa, Tensor(), 0);
  }
  return memories;
}

Tensor FameModel::decode_logits(const std::vector<Tensor>& memories,
                                const TokenBatch& prefix) const {
  require_trainable_task(Task::kFic, true);
  if (memories.size() != cfg_.text.layers) {
    fail(ErrorKind::kShapeMismatch, "decode_logits: one memory per layer required");
  }
  const bool tsa = cfg_.use_tsa;
  Tensor zt = embed_text(prefix, text_, cfg_.text);
  const std::vector<double> mask = text_self_mask(prefix);
  for (std::size_t l = 0; l < cfg_.text.layers; ++l) {
    const LayerParams& lp = text_.layers[l];
    Tensor zt_prime = attention_residual(zt, lp, mask);
    Tensor mlp = mlp_block(norm(zt_prime, lp.ln2), lp);
    Tensor z_tsa = tsa ? tsa_forward(zt_prime, bank_, Task::kFic, l, StreamId::kText)
                       : Tensor();
    Tensor z_xaa = xaa_forward(zt_prime, memories[l],
                               bank_.xaa(l, XaaDirection::kImageToText), {});
    zt = layer_combine(mlp, zt_prime, z_tsa, z_xaa, 1);
  }
  Tensor h = norm(zt, text_.ln_final);
  if (cfg_.tie_caption_head) return ad::matmul(h, ad::transpose(text_.token_embedding));
  return ad::matmul(h, caption_head_.w);
}

Tensor FameModel::fic_logits(const ImageBatch& images, const TokenBatch& prefix) const {
  for (std::size_t b = 0; b < prefix.batch; ++b) {
    if (prefix.lengths[b] == 0)
      fail(ErrorKind::kInvalidArgument, "fic_logits: prefix must start with the start sentinel");
  }
  return decode_logits(encode_memories(images), prefix);
}

std::vector<std::vector<std::size_t>> FameModel::generate_captions(
    const ImageBatch& images, std::size_t max_len, std::size_t sos_id,
    std::size_t eos_id) const {
  if (max_len > cfg_.text.max_seq_len || max_len < 1) {
    fail(ErrorKind::kInvalidArgument,
         "generate_captions: max_len must be in [1, " +
             std::to_string(cfg_.text.max_seq_len) + "]");
  }
  ad::NoGradGuard no_grad;
  const std::size_t b = images.batch;
  const std::vector<Tensor> memories = encode_memories(images);
  std::vector<std::vector<std::size_t>> seqs(b, std::vector<std::size_t>{sos_id});
  std::vector<bool> done(b, false);
  const std::size_t vocab = cfg_.text.vocab_size;
  for (std::size_t step = 1; step < max_len; ++step) {
    bool all_done = true;
    for (bool d : done) all_done = all_done && d;
    if (all_done) break;
    // finished rows keep being fed their last token; their outputs are ignored
    std::vector<std::vector<std::size_t>> feed(b);
    for (std::size_t i = 0; i < b; ++i) {
      feed[i] = seqs[i];
      feed[i].resize(step, seqs[i].back());
    }
    TokenBatch prefix = TokenBatch::from_sequences(feed, 0);
    Tensor logits = decode_logits(memories, prefix);
    for (std::size_t i = 0; i < b; ++i) {
      if (done[i]) continue;
      const double* row = logits.data().data() + ((i * step) + step - 1) * vocab;
      std::size_t best = 0;
      for (std::size_t v = 1; v < vocab; ++v)
        if (row[v] > row[best]) best = v;
      seqs[i].push_back(best);
      if (best == eos_id) done[i] = true;
    }
  }
  return seqs;
}

Tensor FameModel::log_temperature(Task task) const {
  switch (task) {
    case Task::kXmr: return log_tau_xmr_;
    case Task::kTgir: return log_tau_tgir_;
    default:
      fail(ErrorKind::kInvalidArgument,
           std::string("no learnable temperature for task '") + task_name(task) + "'");
  }
}

double FameModel::temperature(Task task) const {
  return std::exp(log_temperature(task).item());
}

void FameModel::clamp_temperatures() {
  const double lo = std::log(kMinTemperature), hi = std::log(kMaxTemperature);
  for (Tensor t : {log_tau_xmr_, log_tau_tgir_}) {
    double& v = t.mutable_data()[0];
    v = std::clamp(v, lo, hi);
  }
}

}  // namespace fashionmt
