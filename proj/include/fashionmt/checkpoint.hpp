// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Flat checkpoint container. Layout, all integers little-endian:
//
//   magic      8 bytes  "FMTCKPT\0"
//   version    u32      kCheckpointVersion
//   header     u64 length, then UTF-8 JSON (config echo and metadata)
//   count      u64      number of records
//   record*    u32 name length, name bytes,
//              u32 rank, u64 extent per axis,
//              f64 values (IEEE-754 binary64, little-endian), row-major
//
// Reading then writing a container reproduces the input bytes exactly.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "fashionmt/autodiff.hpp"

namespace fashionmt {

class FameModel;

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json header;
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Model parameters in registration order, header carries the model config.
Checkpoint model_checkpoint(const FameModel& model);
FameModel model_from_checkpoint(const Checkpoint& ckpt);
// Overwrites parameter values in place from matching records.
void load_model_values(FameModel& model, const Checkpoint& ckpt);

}  // namespace fashionmt
