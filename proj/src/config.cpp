// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/config.hpp"

#include <fstream>
#include <sstream>

#include "fashionmt/error.hpp"
#include "fashionmt/schema.hpp"

namespace fashionmt {

using json = nlohmann::json;

namespace {

void read_stream(SchemaReader r, StreamConfig& s, bool vision) {
  r.field("width", s.width).field("layers", s.layers).field("heads", s.heads);
  r.field("mlp_ratio", s.mlp_ratio);
  if (vision) r.field("patch_side", s.patch_side);
  r.finish(false);
}

json stream_json(const StreamConfig& s, bool vision) {
  json j = {{"width", s.width}, {"layers", s.layers}, {"heads", s.heads},
            {"mlp_ratio", s.mlp_ratio}};
  if (vision) j["patch_side"] = s.patch_side;
  return j;
}

}  // namespace

json RunConfig::to_json() const {
  const auto& m = model;
  return {{"seed", seed},
          {"seeds", seeds},
          {"data",
           {{"seed", data.seed},
            {"products", data.products},
            {"sizes",
             {{"xmr", data.sizes.xmr},
              {"tgir", data.sizes.tgir},
              {"scr", data.sizes.scr},
              {"fic", data.sizes.fic}}}}},
          {"model",
           {{"embed_dim", m.embed_dim},
            {"bottleneck", m.bottleneck},
            {"xaa_width", m.xaa_width},
            {"xaa_heads", m.xaa_heads},
            {"use_tsa", m.use_tsa},
            {"use_xaa", m.use_xaa},
            {"tie_caption_head", m.tie_caption_head},
            {"text", stream_json(m.text, false)},
            {"vision", stream_json(m.vision, true)}}},
          {"train", train.to_json()}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  SchemaReader r(j);
  r.field("seed", c.seed).field("seeds", c.seeds);
  {
    SchemaReader d = r.child("data");
    d.field("seed", c.data.seed).field("products", c.data.products);
    SchemaReader s = d.child("sizes");
    s.field("xmr", c.data.sizes.xmr).field("tgir", c.data.sizes.tgir);
    s.field("scr", c.data.sizes.scr).field("fic", c.data.sizes.fic);
    s.finish(false);
    d.finish(false);
  }
  {
    SchemaReader m = r.child("model");
    m.field("embed_dim", c.model.embed_dim).field("bottleneck", c.model.bottleneck);
    m.field("xaa_width", c.model.xaa_width).field("xaa_heads", c.model.xaa_heads);
    m.field("use_tsa", c.model.use_tsa).field("use_xaa", c.model.use_xaa);
    m.field("tie_caption_head", c.model.tie_caption_head);
    read_stream(m.child("text"), c.model.text, false);
    read_stream(m.child("vision"), c.model.vision, true);
    m.finish(false);
  }
  {
    SchemaReader t = r.child("train");
    TrainConfig::read(t, c.train);
    t.finish(false);
  }
  r.finish();
  if (c.seeds.empty()) fail(ErrorKind::kConfigSchema, "seeds: must not be empty");
  c.model.seed = c.seed;
  try {
    c.model.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kConfigSchema, std::string("model: ") + e.what());
  }
  c.train.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kFormat, "config '" + path + "' is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j);
}

}  // namespace fashionmt
