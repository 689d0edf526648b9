// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/zoogen.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace weightgen {

using nlohmann::json;
namespace fs = std::filesystem;

void PopulationSpec::validate() const {
  if (n_models < 1) raise(ErrorCode::config, "n_models must be >= 1");
  if (epochs < 1) raise(ErrorCode::config, "epochs must be >= 1");
  if (lr_grid.empty() || weight_decay_grid.empty() || momentum_grid.empty() || init_grid.empty())
    raise(ErrorCode::config, "hyperparameter grids must be non-empty");
  if (batch_size < 1) raise(ErrorCode::config, "batch_size must be >= 1");
}

std::string PopulationSpec::to_json() const {
  json j;
  j["arch"] = arch_family;
  j["dataset"] = dataset_tag;
  j["n_models"] = n_models;
  j["epochs"] = epochs;
  j["seed_base"] = seed_base;
  j["hyperparameters"] = {{"lr", lr_grid},
                          {"weight_decay", weight_decay_grid},
                          {"momentum", momentum_grid},
                          {"init", init_grid}};
  j["train_samples"] = train_samples;
  j["val_samples"] = val_samples;
  j["test_samples"] = test_samples;
  j["batch_size"] = batch_size;
  j["workers"] = workers;
  return j.dump(2) + "\n";
}

PopulationSpec PopulationSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("population spec: ") + e.what());
  }
  PopulationSpec s;
  try {
    s.arch_family = j.at("arch").get<std::string>();
    s.dataset_tag = j.at("dataset").get<std::string>();
    s.n_models = j.at("n_models").get<int>();
    s.epochs = j.at("epochs").get<int>();
    s.seed_base = j.value("seed_base", int64_t(0));
    if (j.contains("hyperparameters")) {
      const auto& h = j.at("hyperparameters");
      if (h.contains("lr")) s.lr_grid = h.at("lr").get<std::vector<double>>();
      if (h.contains("weight_decay"))
        s.weight_decay_grid = h.at("weight_decay").get<std::vector<double>>();
      if (h.contains("momentum")) s.momentum_grid = h.at("momentum").get<std::vector<double>>();
      if (h.contains("init")) s.init_grid = h.at("init").get<std::vector<std::string>>();
    }
    s.train_samples = j.value("train_samples", s.train_samples);
    s.val_samples = j.value("val_samples", s.val_samples);
    s.test_samples = j.value("test_samples", s.test_samples);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.workers = j.value("workers", s.workers);
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("population spec: missing field: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<int> snapshot_epochs(int epochs) {
  std::vector<int> out;
  int lo = epochs < 25 ? 1 : 21;
  int hi = std::min(epochs, 25);
  for (int e = lo; e <= hi; ++e) out.push_back(e);
  return out;
}

namespace {

struct HyperCombo {
  double lr, weight_decay, momentum;
  std::string init;
};

HyperCombo combo_for(const PopulationSpec& s, int model_index) {
  size_t n_lr = s.lr_grid.size(), n_wd = s.weight_decay_grid.size(),
         n_mom = s.momentum_grid.size(), n_init = s.init_grid.size();
  size_t total = n_lr * n_wd * n_mom * n_init;
  size_t idx = size_t(model_index) % total;
  HyperCombo c;
  c.lr = s.lr_grid[idx % n_lr];
  idx /= n_lr;
  c.weight_decay = s.weight_decay_grid[idx % n_wd];
  idx /= n_wd;
  c.momentum = s.momentum_grid[idx % n_mom];
  idx /= n_mom;
  c.init = s.init_grid[idx % n_init];
  return c;
}

struct ModelRun {
  std::vector<ModelCheckpoint> snapshots;  // retained epochs, in order
  std::string failure;                     // non-empty when diverged
};

ModelRun train_one(const PopulationSpec& spec, const Dataset& train, const Dataset& test,
                   std::shared_ptr<const ExecProgram> program, int model_index, uint64_t seed) {
  ModelRun run;
  HyperCombo hp = combo_for(spec, model_index);
  uint64_t model_seed = uint64_t(spec.seed_base) + uint64_t(model_index) + seed * 1000003ull;
  Rng rng(Rng::derive(model_seed, "zoogen-model"));
  ModelCheckpoint ckpt =
      make_random_checkpoint(program, model_seed, init_scheme_from_name(hp.init));
  ckpt.meta.image_dataset = spec.dataset_tag;
  ckpt.meta.seed = int64_t(model_seed);

  Executor ex(program);
  std::vector<int> keep = snapshot_epochs(spec.epochs);
  GradMap grads;
  std::map<std::string, Tensor> velocity;
  for (const auto& [name, t] : ckpt.tensors) velocity.emplace(name, Tensor(t.rows, t.cols));

  std::vector<int> order(train.n);
  for (int i = 0; i < train.n; ++i) order[i] = i;
  std::vector<float> batch_images(size_t(spec.batch_size) * train.image_size());
  std::vector<int32_t> batch_labels(size_t(spec.batch_size));

  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    rng.shuffle(order);
    for (int start = 0; start < train.n; start += spec.batch_size) {
      int b = std::min(spec.batch_size, train.n - start);
      for (int i = 0; i < b; ++i) {
        std::copy_n(train.image(order[size_t(start + i)]), train.image_size(),
                    batch_images.data() + size_t(i) * train.image_size());
        batch_labels[size_t(i)] = train.labels[size_t(order[size_t(start + i)])];
      }
      float loss = ex.train_step_gradients(ckpt, batch_images.data(), batch_labels.data(), b,
                                           grads);
      if (!std::isfinite(loss)) {
        run.failure = "model " + std::to_string(model_index) + ": non-finite loss at epoch " +
                      std::to_string(epoch);
        run.snapshots.clear();
        return run;
      }
      for (auto& [name, g] : grads) {
        Tensor& w = ckpt.tensors.at(name);
        Tensor& v = velocity.at(name);
        for (size_t i = 0; i < w.data.size(); ++i) {
          v.data[i] = float(hp.momentum) * v.data[i] -
                      float(hp.lr) * (g.data[i] + float(hp.weight_decay) * w.data[i]);
          w.data[i] += v.data[i];
        }
      }
    }
    if (std::find(keep.begin(), keep.end(), epoch) != keep.end()) {
      ModelCheckpoint snap = ckpt;
      snap.meta.epoch = epoch;
      snap.meta.test_accuracy = ex.accuracy(snap, test);
      run.snapshots.push_back(std::move(snap));
    }
  }
  return run;
}

}  // namespace

PopulationResult train_population(const PopulationSpec& spec, const std::string& data_root,
                                  const fs::path& out_dir, uint64_t seed) {
  spec.validate();
  auto program = std::make_shared<ExecProgram>(make_program(spec.arch_family));
  Dataset train_raw = resolve_dataset(spec.dataset_tag, data_root, Split::train,
                                      spec.train_samples, seed);
  Dataset test_raw =
      resolve_dataset(spec.dataset_tag, data_root, Split::test, spec.test_samples, seed);
  if (train_raw.n == 0) raise(ErrorCode::config, "empty training dataset");
  Dataset train = train_raw.adapted(program->input_shape.c, program->input_shape.h,
                                    program->input_shape.w);
  Dataset test = test_raw.adapted(program->input_shape.c, program->input_shape.h,
                                  program->input_shape.w);

  std::vector<ModelRun> runs(size_t(spec.n_models));
  parallel_for(spec.n_models, spec.workers,
               [&](int i) { runs[size_t(i)] = train_one(spec, train, test, program, i, seed); });

  PopulationResult result;
  std::vector<ModelCheckpoint> ckpts;
  std::vector<std::string> keys;
  std::vector<double> final_accs;
  for (int m = 0; m < spec.n_models; ++m) {
    ModelRun& run = runs[size_t(m)];
    if (!run.failure.empty()) {
      result.failures.push_back(run.failure);
      continue;
    }
    char key[32];
    std::snprintf(key, sizeof key, "m%04d", m);
    if (!run.snapshots.empty() && run.snapshots.back().meta.test_accuracy)
      final_accs.push_back(*run.snapshots.back().meta.test_accuracy);
    for (auto& snap : run.snapshots) {
      ckpts.push_back(std::move(snap));
      keys.emplace_back(key);
    }
  }
  if (!final_accs.empty()) {
    double mean = 0.0;
    for (double a : final_accs) mean += a;
    mean /= double(final_accs.size());
    double var = 0.0;
    for (double a : final_accs) var += (a - mean) * (a - mean);
    var /= double(final_accs.size());
    result.mean_final_accuracy = mean;
    result.std_final_accuracy = std::sqrt(var);
  }

  std::string zoo_id = out_dir.filename().string();
  if (zoo_id.empty()) zoo_id = spec.arch_family + "-" + spec.dataset_tag;
  ZooManifest manifest = build_manifest(zoo_id, spec.dataset_tag, program, ckpts, keys, seed);
  write_zoo(out_dir, manifest, ckpts);
  result.manifest = std::move(manifest);
  result.zoo_dir = out_dir;
  return result;
}

}  // namespace weightgen
