// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "fashionmt/config.hpp"
#include "fashionmt/error.hpp"

using namespace fashionmt;
using nlohmann::json;

namespace {

std::string schema_error(const json& j) {
  try {
    RunConfig::from_json(j);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfigSchema);
    return e.what();
  }
  FAIL("accepted " << j.dump());
  return {};
}

bool contains(const std::string& s, const std::string& part) {
  return s.find(part) != std::string::npos;
}

}  // namespace

TEST_CASE("empty config gives the defaults") {
  const RunConfig c = RunConfig::from_json(json::object());
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(c.data.products == 864);
  CHECK(c.model.to_json() == ModelConfig::toy().to_json());
  CHECK(c.train.to_json() == TrainConfig{}.to_json());
}

TEST_CASE("config round trips through json") {
  json j = {{"seed", 4},
            {"data", {{"products", 500}, {"sizes", {{"tgir", 100}}}}},
            {"model", {{"bottleneck", 8}, {"text", {{"layers", 1}}}, {"vision", {{"layers", 1}}}}},
            {"train", {{"iterations", 50}, {"strategy", "uniform"}, {"grad_method", "imtlg"}}}};
  const RunConfig c = RunConfig::from_json(j);
  CHECK(c.model.seed == 4);
  CHECK(c.model.bottleneck == 8);
  CHECK(c.data.sizes.tgir == 100);
  CHECK(c.train.strategy == SamplingStrategy::kUniform);
  CHECK(c.train.grad_method == GradMethod::kImtlg);
  CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK(contains(schema_error({{"sed", 1}}), "sed: unknown key"));
  CHECK(contains(schema_error({{"train", {{"iters", 1}}}}), "train.iters: unknown key"));
  CHECK(contains(schema_error({{"model", {{"text", {{"depth", 1}}}}}}), "model.text.depth: unknown key"));
  CHECK(contains(schema_error({{"model", {{"text", {{"patch_side", 4}}}}}}), "model.text.patch_side"));
}

TEST_CASE("wrong types name the field") {
  CHECK(contains(schema_error({{"train", {{"iterations", "many"}}}}),
                 "train.iterations: expected"));
  CHECK(contains(schema_error({{"train", {{"iterations", -5}}}}), "train.iterations"));
  CHECK(contains(schema_error({{"model", {{"use_tsa", 1}}}}), "model.use_tsa: expected boolean"));
  CHECK(contains(schema_error({{"seeds", {1, -2}}}), "seeds: expected array"));
  CHECK(contains(schema_error({{"train", {{"strategy", "greedy"}}}}), "train.strategy"));
  CHECK(contains(schema_error({{"data", 3}}), "data: expected object"));
}

TEST_CASE("all problems are reported together") {
  const std::string msg = schema_error({{"x", 1}, {"train", {{"batch_size", "a"}}}});
  CHECK(contains(msg, "x: unknown key"));
  CHECK(contains(msg, "train.batch_size"));
}

TEST_CASE("value checks") {
  CHECK(contains(schema_error({{"seeds", json::array()}}), "seeds"));
  CHECK(contains(schema_error({{"train", {{"batch_size", 1}}}}), "train.batch_size"));
  CHECK(contains(schema_error({{"model", {{"xaa_heads", 3}}}}), "model"));
}

TEST_CASE("config files") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto good = (dir / "fashionmt_cfg_good.json").string();
  const auto bad = (dir / "fashionmt_cfg_bad.json").string();
  std::ofstream(good) << R"({"train": {"iterations": 10}})";
  std::ofstream(bad) << "{not json";
  CHECK(load_run_config(good).train.iterations == 10);
  try {
    load_run_config(bad);
    FAIL("accepted malformed json");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
  }
  try {
    load_run_config((dir / "fashionmt_cfg_missing.json").string());
    FAIL("read a missing file");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kIo);
  }
  std::filesystem::remove(good);
  std::filesystem::remove(bad);
}
