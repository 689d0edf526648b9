// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "core/pipeline.hpp"
#include "core/zoo.hpp"

using namespace weightgen;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("weightgen_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json tiny_pipeline_config() {
  json cfg;
  cfg["seed"] = 1234;
  cfg["out_root"] = "artifacts";
  cfg["workers"] = 2;
  json stages = json::array();
  stages.push_back({{"stage", "zoogen"},
                    {"name", "zoo_a"},
                    {"out", "zoo_a"},
                    {"spec",
                     {{"arch", "mlp:64-12-10"},
                      {"dataset", "synth:digits-a"},
                      {"n_models", 3},
                      {"epochs", 2},
                      {"train_samples", 96},
                      {"val_samples", 32},
                      {"test_samples", 32},
                      {"batch_size", 32}}}});
  stages.push_back({{"stage", "train"},
                    {"name", "sane"},
                    {"out", "sane"},
                    {"zoos", {"zoo_a"}},
                    {"config",
                     {{"d_t", 16},
                      {"window_size", 8},
                      {"d_model", 32},
                      {"d_lat", 12},
                      {"n_layers", 1},
                      {"n_heads", 2},
                      {"d_proj", 6},
                      {"epochs", 2},
                      {"batch_size", 8},
                      {"lr", 1e-3}}}});
  stages.push_back({{"stage", "sample"},
                    {"name", "samples_a"},
                    {"out", "samples_a"},
                    {"sane", "sane"},
                    {"anchor_zoo", "zoo_a"},
                    {"spec",
                     {{"n_candidates", 4}, {"n_keep", 2}, {"n_anchors", 2}}}});
  stages.push_back({{"stage", "eval"},
                    {"name", "eval_a"},
                    {"out", "eval_a.json"},
                    {"models", "samples_a"},
                    {"suite", {{"id", {"synth:digits-a"}}, {"nood", json::array()},
                               {"food", json::array()}}}});
  stages.push_back({{"stage", "report"},
                    {"name", "report"},
                    {"out", "report.txt"},
                    {"eval", "eval_a.json"},
                    {"format", "text"}});
  cfg["stages"] = stages;
  return cfg;
}

fs::path write_config(const fs::path& dir, const json& cfg) {
  fs::path p = dir / "pipeline.json";
  std::ofstream f(p);
  f << cfg.dump(2);
  return p;
}

}  // namespace

TEST_CASE("zero-stage pipeline succeeds without artifacts") {
  fs::path dir = temp_dir("empty");
  json cfg;
  cfg["stages"] = json::array();
  PipelineOptions opts;
  opts.config_path = write_config(dir, cfg).string();
  PipelineOutcome out = run_pipeline(opts);
  CHECK(out.stages_run == 0);
  CHECK(out.stages_skipped == 0);
}

TEST_CASE("schema violations are reported before any work starts") {
  fs::path dir = temp_dir("badschema");
  json cfg = tiny_pipeline_config();
  cfg["stages"][1]["config"]["n_heads"] = 5;  // d_model 32 not divisible
  PipelineOptions opts;
  opts.config_path = write_config(dir, cfg).string();
  try {
    run_pipeline(opts);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::config);
    CHECK(std::string(e.what()).find("sane") != std::string::npos);  // stage-tagged
  }
  // nothing was produced
  CHECK(!fs::exists(dir / "artifacts" / "zoo_a"));
}

TEST_CASE("toy pipeline runs end-to-end, resumes with all-skip, deterministic manifests") {
  fs::path dir = temp_dir("endtoend");
  json cfg = tiny_pipeline_config();
  PipelineOptions opts;
  opts.config_path = write_config(dir, cfg).string();

  PipelineOutcome first = run_pipeline(opts);
  CHECK(first.stages_run == 5);
  CHECK(first.stages_skipped == 0);
  CHECK(fs::exists(dir / "artifacts" / "zoo_a" / "manifest.json"));
  CHECK(fs::exists(dir / "artifacts" / "sane" / "weights.bin"));
  CHECK(fs::exists(dir / "artifacts" / "samples_a" / "manifest.json"));
  CHECK(fs::exists(dir / "artifacts" / "eval_a.json"));
  CHECK(fs::exists(dir / "artifacts" / "report.txt"));

  // rerun performs no recomputation
  PipelineOutcome second = run_pipeline(opts);
  CHECK(second.stages_run == 0);
  CHECK(second.stages_skipped == 5);

  // identical config + seed elsewhere -> identical manifests
  fs::path dir2 = temp_dir("endtoend2");
  PipelineOptions opts2;
  opts2.config_path = write_config(dir2, cfg).string();
  run_pipeline(opts2);
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(dir / "artifacts" / "zoo_a" / "manifest.json") ==
        slurp(dir2 / "artifacts" / "zoo_a" / "manifest.json"));
  CHECK(slurp(dir / "artifacts" / "samples_a" / "manifest.json") ==
        slurp(dir2 / "artifacts" / "samples_a" / "manifest.json"));
  CHECK(slurp(dir / "artifacts" / "eval_a.json") == slurp(dir2 / "artifacts" / "eval_a.json"));

  // changing an upstream stage invalidates the downstream chain
  cfg["stages"][0]["spec"]["n_models"] = 4;
  opts.config_path = write_config(dir, cfg).string();
  PipelineOutcome third = run_pipeline(opts);
  CHECK(third.stages_run == 5);  // zoogen changed; children re-run via stamp chaining
}

TEST_CASE("environment variables interpolate into the config") {
  fs::path dir = temp_dir("envinterp");
  setenv("WEIGHTGEN_TEST_ROOT", dir.c_str(), 1);
  json cfg;
  cfg["seed"] = 1;
  cfg["out_root"] = "${WEIGHTGEN_TEST_ROOT}/artifacts_env";
  cfg["stages"] = json::array();
  cfg["stages"].push_back(tiny_pipeline_config()["stages"][0]);
  PipelineOptions opts;
  opts.config_path = write_config(dir, cfg).string();
  run_pipeline(opts);
  CHECK(fs::exists(dir / "artifacts_env" / "zoo_a" / "manifest.json"));
}
