// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration file. A single JSON object; every key is optional and
// unknown keys are rejected:
//
//   {
//     "seed": 0,                       model initialization seed
//     "seeds": [0, 1, 2],              ablation seeds (data and model)
//     "data":  {"seed": 0, "products": 864,
//               "sizes": {"xmr": 2000, "tgir": 200, "scr": 2000, "fic": 2000}},
//     "model": {"embed_dim", "bottleneck", "xaa_width", "xaa_heads",
//               "use_tsa", "use_xaa", "tie_caption_head",
//               "text":   {"width", "layers", "heads", "mlp_ratio"},
//               "vision": {"width", "layers", "heads", "mlp_ratio", "patch_side"}},
//     "train": {"iterations", "batch_size", "lr_backbone", "lr_adapter",
//               "weight_decay", "warmup_factor", "validate_every",
//               "strategy", "grad_method", "distill"}
//   }
//
// Model values start from ModelConfig::toy().

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "fashionmt/data.hpp"
#include "fashionmt/model.hpp"
#include "fashionmt/training.hpp"

namespace fashionmt {

struct DataConfig {
  std::uint64_t seed = 0;
  std::size_t products = 864;
  data::TaskSizes sizes;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  DataConfig data;
  ModelConfig model = ModelConfig::toy();
  TrainConfig train;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

// Reads and validates a config file; io and format errors for unreadable or
// malformed files, config_schema for schema violations.
RunConfig load_run_config(const std::string& path);

}  // namespace fashionmt
