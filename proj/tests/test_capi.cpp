// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "core/zoo.hpp"
#include "weightgen.h"

using namespace weightgen;
namespace fs = std::filesystem;

namespace {

fs::path make_test_zoo(const std::string& name, int n_models) {
  auto program = std::make_shared<ExecProgram>(make_program("toy_mlp_bn"));
  std::vector<ModelCheckpoint> ckpts;
  std::vector<std::string> keys;
  for (int m = 0; m < n_models; ++m) {
    ModelCheckpoint c = make_random_checkpoint(program, 10 + uint64_t(m));
    c.meta.image_dataset = "synth:digits-a";
    c.meta.epoch = 25;
    ckpts.push_back(std::move(c));
    keys.push_back("m" + std::to_string(m));
  }
  ZooManifest man = build_manifest(name, "synth:digits-a", program, ckpts, keys, 3);
  fs::path dir = fs::temp_directory_path() / ("weightgen_capi_" + name);
  fs::remove_all(dir);
  write_zoo(dir, man, ckpts);
  return dir;
}

}  // namespace

TEST_CASE("version and error state") {
  CHECK(std::string(wg_version()).find("weightgen") != std::string::npos);
  CHECK(wg_last_error() != nullptr);
}

TEST_CASE("zoo handle lifecycle and queries") {
  fs::path dir = make_test_zoo("handles", 3);
  wg_zoo* zoo = nullptr;
  REQUIRE(wg_zoo_open(dir.c_str(), &zoo) == WG_OK);
  CHECK(wg_zoo_size(zoo) == 3);

  char* id = nullptr;
  REQUIRE(wg_zoo_id(zoo, &id) == WG_OK);
  CHECK(std::string(id) == "handles");
  wg_string_free(id);

  char* tag = nullptr;
  REQUIRE(wg_zoo_dataset_tag(zoo, &tag) == WG_OK);
  CHECK(std::string(tag) == "synth:digits-a");
  wg_string_free(tag);

  char* split = nullptr;
  REQUIRE(wg_zoo_checkpoint_split(zoo, 0, &split) == WG_OK);
  CHECK((std::string(split) == "train" || std::string(split) == "val" ||
         std::string(split) == "test"));
  wg_string_free(split);

  int epoch = 0;
  REQUIRE(wg_zoo_checkpoint_epoch(zoo, 1, &epoch) == WG_OK);
  CHECK(epoch == 25);

  wg_checkpoint* ckpt = nullptr;
  REQUIRE(wg_zoo_load_checkpoint(zoo, 0, &ckpt) == WG_OK);
  int n_layers = wg_checkpoint_num_layers(ckpt);
  CHECK(n_layers == 3);  // fc1, bn1, fc2
  char* lname = nullptr;
  REQUIRE(wg_checkpoint_layer_name(ckpt, 0, &lname) == WG_OK);
  CHECK(std::string(lname) == "fc1");
  wg_string_free(lname);
  int rows = 0, cols = 0;
  REQUIRE(wg_checkpoint_layer_shape(ckpt, 0, &rows, &cols) == WG_OK);
  CHECK(rows == 16);
  CHECK(cols == 65);
  std::vector<float> data(size_t(rows) * cols);
  REQUIRE(wg_checkpoint_layer_data(ckpt, 0, data.data(), data.size()) == WG_OK);
  // undersized buffer is an argument error
  CHECK(wg_checkpoint_layer_data(ckpt, 0, data.data(), 4) == WG_ERR_INVALID_ARGUMENT);
  wg_checkpoint_close(ckpt);
  wg_zoo_close(zoo);
}

TEST_CASE("error paths carry status codes and messages") {
  wg_zoo* zoo = nullptr;
  wg_status st = wg_zoo_open("/nonexistent/zoo/dir", &zoo);
  CHECK(st != WG_OK);
  CHECK(std::strlen(wg_last_error()) > 0);
  CHECK(wg_zoo_open(nullptr, &zoo) == WG_ERR_INVALID_ARGUMENT);

  char* out = nullptr;
  CHECK(wg_layout_json("/nonexistent", 8, &out) != WG_OK);
}

TEST_CASE("layout json and merge through the C surface") {
  fs::path a = make_test_zoo("merge_a", 2);
  fs::path b = make_test_zoo("merge_b", 2);

  char* layout = nullptr;
  REQUIRE(wg_layout_json(a.c_str(), 16, &layout) == WG_OK);
  std::string text(layout);
  wg_string_free(layout);
  CHECK(text.find("total_tokens") != std::string::npos);
  CHECK(text.find("fc1") != std::string::npos);

  fs::path merged = fs::temp_directory_path() / "weightgen_capi_merged";
  fs::remove_all(merged);
  std::string sa = a.string(), sb = b.string();
  const char* dirs[] = {sa.c_str(), sb.c_str()};
  REQUIRE(wg_zoo_merge(dirs, 2, merged.c_str()) == WG_OK);
  wg_zoo* zoo = nullptr;
  REQUIRE(wg_zoo_open(merged.c_str(), &zoo) == WG_OK);
  CHECK(wg_zoo_size(zoo) == 4);
  wg_zoo_close(zoo);
}
