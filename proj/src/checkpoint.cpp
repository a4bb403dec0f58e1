// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "fashionmt/error.hpp"
#include "fashionmt/model.hpp"

namespace fashionmt {

namespace {

constexpr std::array<char, 8> kMagic = {'F', 'M', 'T', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) fail(ErrorKind::kFormat, "checkpoint: truncated input");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    value |= static_cast<T>(static_cast<T>(bytes[i]) << (8 * i));
  return value;
}

void put_f64(std::ostream& out, double v) {
  put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

double get_f64(std::istream& in) {
  return std::bit_cast<double>(get_le<std::uint64_t>(in));
}

void put_string(std::ostream& out, const std::string& s, bool wide) {
  if (wide)
    put_le<std::uint64_t>(out, s.size());
  else
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, std::uint64_t len) {
  if (len > (1ull << 32)) fail(ErrorKind::kFormat, "checkpoint: implausible string length");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorKind::kFormat, "checkpoint: truncated string");
  return s;
}

}  // namespace

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, ckpt.header.dump(), true);
  put_le<std::uint64_t>(out, ckpt.records.size());
  for (const auto& r : ckpt.records) {
    if (ad::numel(r.shape) != r.values.size()) {
      fail(ErrorKind::kShapeMismatch, "checkpoint: record '" + r.name +
                                          "' shape does not match its values");
    }
    put_string(out, r.name, false);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t d : r.shape) put_le<std::uint64_t>(out, d);
    for (double v : r.values) put_f64(out, v);
  }
  if (!out) fail(ErrorKind::kIo, "checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) fail(ErrorKind::kFormat, "checkpoint: bad magic");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kFormat, "checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::string header = get_string(in, get_le<std::uint64_t>(in));
  try {
    ckpt.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("checkpoint: bad header: ") + e.what());
  }
  const auto count = get_le<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = get_string(in, get_le<std::uint32_t>(in));
    const auto rank = get_le<std::uint32_t>(in);
    if (rank > 8) fail(ErrorKind::kFormat, "checkpoint: implausible rank");
    for (std::uint32_t a = 0; a < rank; ++a)
      r.shape.push_back(static_cast<std::size_t>(get_le<std::uint64_t>(in)));
    const std::size_t n = ad::numel(r.shape);
    r.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) r.values[k] = get_f64(in);
    ckpt.records.push_back(std::move(r));
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path + "'");
  return read_checkpoint(in);
}

Checkpoint model_checkpoint(const FameModel& model) {
  Checkpoint ckpt;
  ckpt.header = {{"format", "fashionmt-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"model", model.config().to_json()},
                 {"frozen", model.frozen()}};
  for (const auto& p : model.params().all()) {
    ckpt.records.push_back(
        {p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  }
  return ckpt;
}

void load_model_values(FameModel& model, const Checkpoint& ckpt) {
  for (auto& p : model.params().all()) {
    const CheckpointRecord* r = ckpt.find(p.name);
    if (!r) fail(ErrorKind::kFormat, "checkpoint: missing parameter '" + p.name + "'");
    if (r->shape != p.tensor.shape()) {
      fail(ErrorKind::kShapeMismatch, "checkpoint: parameter '" + p.name + "' has shape " +
                                          ad::shape_str(r->shape) + ", model expects " +
                                          ad::shape_str(p.tensor.shape()));
    }
    std::copy(r->values.begin(), r->values.end(), p.tensor.mutable_data().begin());
  }
}

FameModel model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.header.contains("model")) {
    fail(ErrorKind::kFormat, "checkpoint: header has no model config");
  }
  FameModel model(ModelConfig::from_json(ckpt.header.at("model")));
  load_model_values(model, ckpt);
  if (ckpt.header.value("frozen", false)) model.freeze();
  return model;
}

}  // namespace fashionmt
