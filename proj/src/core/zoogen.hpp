// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_ZOOGEN_HPP
#define WEIGHTGEN_CORE_ZOOGEN_HPP

#include <map>

#include "core/executor.hpp"

namespace weightgen {

// Recipe for one model population. Hyperparameter diversity comes from the
// grid product (lr x weight_decay x momentum x init), assigned round-robin
// with a per-model seed offset.
struct PopulationSpec {
  std::string arch_family = "small_cnn";
  std::string dataset_tag = "synth:digits-a";
  int n_models = 8;
  int epochs = 25;
  int64_t seed_base = 0;
  std::vector<double> lr_grid = {0.05};
  std::vector<double> weight_decay_grid = {0.0};
  std::vector<double> momentum_grid = {0.9};
  std::vector<std::string> init_grid = {"he_uniform"};
  int train_samples = 1024;
  int val_samples = 256;
  int test_samples = 512;
  int batch_size = 32;
  int workers = 0;  // 0 = hardware concurrency

  void validate() const;
  std::string to_json() const;
  static PopulationSpec from_json(const std::string& text);
};

struct PopulationResult {
  ZooManifest manifest;                 // as written to disk
  std::filesystem::path zoo_dir;
  std::vector<std::string> failures;    // diverged models, excluded
  double mean_final_accuracy = 0.0;     // over last-epoch snapshots
  double std_final_accuracy = 0.0;
};

// Trains the population and writes a zoo directory. Snapshots are retained
// for the epoch window [21, 25] (the whole run when epochs < 25), each with
// test accuracy in its meta. Deterministic given the spec and seed.
PopulationResult train_population(const PopulationSpec& spec, const std::string& data_root,
                                  const std::filesystem::path& out_dir, uint64_t seed);

// Epochs whose snapshots are kept for a run of `epochs` epochs (1-based).
std::vector<int> snapshot_epochs(int epochs);

}  // namespace weightgen

#endif
