// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include <doctest.h>

#include <filesystem>

#include "core/zoogen.hpp"

using namespace weightgen;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("weightgen_zoogen_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("snapshot epoch windows") {
  CHECK(snapshot_epochs(25) == std::vector<int>{21, 22, 23, 24, 25});
  CHECK(snapshot_epochs(30) == std::vector<int>{21, 22, 23, 24, 25});
  CHECK(snapshot_epochs(3) == std::vector<int>{1, 2, 3});
  CHECK(snapshot_epochs(1) == std::vector<int>{1});
}

TEST_CASE("population spec round-trips through json") {
  PopulationSpec s;
  s.arch_family = "small_cnn";
  s.dataset_tag = "synth:digits-b";
  s.n_models = 4;
  s.epochs = 7;
  s.lr_grid = {0.05, 0.02};
  s.init_grid = {"he_uniform", "xavier_uniform"};
  PopulationSpec back = PopulationSpec::from_json(s.to_json());
  CHECK(back.arch_family == s.arch_family);
  CHECK(back.n_models == 4);
  CHECK(back.lr_grid == s.lr_grid);
  CHECK(back.init_grid == s.init_grid);
}

TEST_CASE("single tiny model trains to a valid checkpoint") {
  PopulationSpec spec;
  spec.arch_family = "toy_mlp_bn";
  spec.dataset_tag = "synth:digits-a";
  spec.n_models = 1;
  spec.epochs = 1;
  spec.train_samples = 10;
  spec.test_samples = 10;
  spec.batch_size = 5;
  spec.lr_grid = {0.05};
  fs::path out = temp_dir("smoke");
  PopulationResult result = train_population(spec, "", out, 1);
  CHECK(result.failures.empty());
  REQUIRE(result.manifest.checkpoints.size() == 1);
  Zoo zoo = read_zoo(out);
  ModelCheckpoint c = zoo.load(0);
  c.validate();  // finite weights, correct shapes
  CHECK(c.meta.test_accuracy.has_value());
  CHECK(c.meta.epoch == 1);
}

TEST_CASE("epoch window retention: epochs=25 keeps snapshots 21..25") {
  PopulationSpec spec;
  spec.arch_family = "mlp:64-12-10";
  spec.dataset_tag = "synth:digits-a";
  spec.n_models = 1;
  spec.epochs = 25;
  spec.train_samples = 32;
  spec.test_samples = 16;
  spec.batch_size = 16;
  spec.lr_grid = {0.05};
  fs::path out = temp_dir("window");
  PopulationResult result = train_population(spec, "", out, 2);
  REQUIRE(result.manifest.checkpoints.size() == 5);
  std::vector<int> epochs;
  for (const auto& e : result.manifest.checkpoints) epochs.push_back(e.meta.epoch);
  std::sort(epochs.begin(), epochs.end());
  CHECK(epochs == std::vector<int>{21, 22, 23, 24, 25});
}

TEST_CASE("population accuracy spread is reported and training is deterministic") {
  PopulationSpec spec;
  spec.arch_family = "mlp:64-16-10";
  spec.dataset_tag = "synth:digits-a";
  spec.n_models = 4;
  spec.epochs = 3;
  spec.train_samples = 128;
  spec.test_samples = 64;
  spec.batch_size = 32;
  spec.lr_grid = {0.1, 0.05};
  spec.workers = 2;
  fs::path out1 = temp_dir("det1");
  fs::path out2 = temp_dir("det2");
  PopulationResult r1 = train_population(spec, "", out1, 5);
  PopulationResult r2 = train_population(spec, "", out2, 5);
  CHECK(r1.mean_final_accuracy == r2.mean_final_accuracy);
  CHECK(r1.mean_final_accuracy > 0.0);
  // identical meta records and identical tensors, worker threading aside
  Zoo z1 = read_zoo(out1), z2 = read_zoo(out2);
  REQUIRE(z1.size() == z2.size());
  for (size_t i = 0; i < z1.size(); ++i) {
    CHECK(z1.manifest().checkpoints[i].id == z2.manifest().checkpoints[i].id);
    CHECK(tensors_equal(z1.load(i), z2.load(i)));
  }
  // a trained model beats chance on its synthetic digits
  Executor ex(z1.load(0).program);
  ModelCheckpoint best = z1.load(z1.size() - 1);
  Dataset test = make_synthetic_dataset("synth:digits-a", Split::test, 64, 5);
  CHECK(ex.accuracy(best, test) > 0.2);
}

TEST_CASE("divergent members are excluded and recorded") {
  PopulationSpec spec;
  spec.arch_family = "mlp:64-12-10";
  spec.dataset_tag = "synth:digits-a";
  spec.n_models = 2;
  spec.epochs = 3;
  spec.train_samples = 32;
  spec.test_samples = 16;
  spec.batch_size = 16;
  spec.lr_grid = {1e20};  // multiplicative blow-up through the decay term
  spec.weight_decay_grid = {1e10};
  fs::path out = temp_dir("diverge");
  PopulationResult result = train_population(spec, "", out, 7);
  CHECK(result.failures.size() == 2);
  CHECK(result.manifest.checkpoints.empty());
  for (const auto& f : result.failures)
    CHECK(f.find("non-finite") != std::string::npos);
}
