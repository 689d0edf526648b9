// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

namespace weightgen {

using nlohmann::json;
namespace fs = std::filesystem;

TokenWindowSource::TokenWindowSource(const std::vector<Zoo>& zoos, int token_size, Split split)
    : token_size_(token_size), zoo_count_(int(zoos.size())) {
  for (size_t zi = 0; zi < zoos.size(); ++zi) {
    for (size_t ci : zoos[zi].manifest().indices_of_split(split)) {
      ModelCheckpoint ckpt = zoos[zi].load(ci);
      Entry e;
      e.tm = tokenize(ckpt, token_size);
      e.zoo_index = int(zi);
      total_tokens_ += size_t(e.tm.count());
      for (Eigen::Index r = 0; r < e.tm.count(); ++r) {
        max_layer_ = std::max(max_layer_, int(e.tm.positions(r, 1)));
        max_k_ = std::max(max_k_, int(e.tm.positions(r, 2)));
      }
      models_.push_back(std::move(e));
    }
  }
  if (models_.empty())
    raise(ErrorCode::config, "empty split: no checkpoints to train on");
}

int TokenWindowSource::sample_window(Rng& rng, int window, MatF& tokens, MatPos& positions,
                                     MatF& mask, std::vector<uint8_t>& valid,
                                     int* model_index) const {
  int mi = int(rng.uniform_int(0, int64_t(models_.size()) - 1));
  if (model_index) *model_index = mi;
  const TokenizedModel& tm = models_[size_t(mi)].tm;
  const int n = int(tm.count());
  int start = n > window ? int(rng.uniform_int(0, n - window)) : 0;
  int len = std::min(window, n - start);

  tokens = MatF::Zero(window, token_size_);
  positions = MatPos::Zero(window, 3);
  mask = MatF::Zero(window, token_size_);
  valid.assign(size_t(window), 0);
  tokens.topRows(len) = tm.tokens.middleRows(start, len);
  positions.topRows(len) = tm.positions.middleRows(start, len);
  mask.topRows(len) = tm.mask.middleRows(start, len);
  for (int i = 0; i < len; ++i) valid[size_t(i)] = 1;
  return models_[size_t(mi)].zoo_index;
}

WindowBatch TokenWindowSource::sample_batch(Rng& rng, int window, int batch_size) const {
  WindowBatch batch;
  batch.b = batch_size;
  batch.w = window;
  batch.tokens = MatF::Zero(Eigen::Index(batch_size) * window, token_size_);
  batch.positions = MatPos::Zero(Eigen::Index(batch_size) * window, 3);
  batch.mask = MatF::Zero(Eigen::Index(batch_size) * window, token_size_);
  batch.valid.assign(size_t(batch_size) * window, 0);
  batch.provenance.resize(size_t(batch_size));
  MatF tokens, mask;
  MatPos positions;
  std::vector<uint8_t> valid;
  for (int b = 0; b < batch_size; ++b) {
    batch.provenance[size_t(b)] = sample_window(rng, window, tokens, positions, mask, valid);
    batch.tokens.middleRows(Eigen::Index(b) * window, window) = tokens;
    batch.positions.middleRows(Eigen::Index(b) * window, window) = positions;
    batch.mask.middleRows(Eigen::Index(b) * window, window) = mask;
    for (int r = 0; r < window; ++r) batch.valid[size_t(b) * window + r] = valid[size_t(r)];
  }
  return batch;
}

double lr_at_step(const SaneConfig& config, int64_t step, int64_t total_steps) {
  if (config.schedule == "constant") return config.lr;
  int64_t warmup = std::max<int64_t>(1, total_steps / 20);  // 5% warmup
  if (step < warmup) return config.lr * double(step + 1) / double(warmup);
  double progress = double(step - warmup) / double(std::max<int64_t>(1, total_steps - warmup));
  return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
}

TrainResult train_sane(SaneConfig config, const std::vector<Zoo>& zoos, const fs::path& out_dir,
                       uint64_t seed) {
  config.validate();
  if (zoos.empty()) raise(ErrorCode::invalid_argument, "train_sane: no zoos");
  TokenWindowSource source(zoos, config.d_t, Split::train);

  // Positional tables sized exactly to the training corpus.
  config.max_layers = source.max_layer_index() + 1;
  config.max_k = source.max_within_layer_index() + 1;
  config.seed = seed;

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) raise(ErrorCode::storage, "cannot create " + out_dir.string());
  std::ofstream log_file(out_dir / "train_log.jsonl", std::ios::trunc);
  if (!log_file) raise(ErrorCode::storage, "cannot write train_log.jsonl");

  SaneModel model(config, seed);
  Rng rng(Rng::derive(seed, "train-loop"));

  const int64_t steps_per_epoch = std::max<int64_t>(
      1, int64_t((source.total_tokens() + size_t(config.window_size) * config.batch_size - 1) /
                 (size_t(config.window_size) * config.batch_size)));
  const int64_t total_steps = steps_per_epoch * config.epochs;

  TrainResult result;
  result.zoos_touched.resize(size_t(config.epochs));

  // last-good snapshot for the non-finite abort path
  std::vector<MatF> snapshot;
  auto take_snapshot = [&] {
    snapshot.clear();
    for (const auto& t : model.params()) snapshot.push_back(t.w);
  };
  take_snapshot();

  int64_t step_global = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int64_t s = 0; s < steps_per_epoch; ++s, ++step_global) {
      WindowBatch batch = source.sample_batch(rng, config.window_size, config.batch_size);
      for (int prov : batch.provenance) result.zoos_touched[size_t(epoch)].insert(prov);
      MatF view_j = batch.tokens;
      if (config.gamma > 0.0 && config.aug_noise_sigma > 0.0) {
        for (Eigen::Index i = 0; i < view_j.size(); ++i)
          if (batch.mask.data()[i] != 0.0f)
            view_j.data()[i] += float(rng.normal(0.0, config.aug_noise_sigma));
      }
      double lr_now = lr_at_step(config, step_global, total_steps);
      TrainStepStats stats = model.train_step(batch, view_j, lr_now);
      if (!std::isfinite(stats.total)) {
        for (size_t i = 0; i < snapshot.size(); ++i) model.params()[i].w = snapshot[i];
        model.save(out_dir);
        json j = {{"event", "abort"},
                  {"epoch", epoch},
                  {"step", int(s)},
                  {"reason", "non-finite loss"}};
        log_file << j.dump() << "\n";
        raise(ErrorCode::runtime,
              "non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(s) +
                  "; last-good checkpoint saved to " + out_dir.string());
      }
      epoch_loss += stats.total;
      json j = {{"epoch", epoch},
                {"step", int(s)},
                {"l_rec", stats.l_rec},
                {"l_c", stats.l_con},
                {"total", stats.total}};
      log_file << j.dump() << "\n";
      result.log.push_back({epoch, int(s), stats.l_rec, stats.l_con, stats.total});
    }
    epoch_loss /= double(steps_per_epoch);
    if (epoch == 0) result.first_epoch_loss = epoch_loss;
    result.final_epoch_loss = epoch_loss;
    json zj = json::array();
    for (int z : result.zoos_touched[size_t(epoch)]) zj.push_back(z);
    json j = {{"event", "epoch"}, {"epoch", epoch}, {"mean_total", epoch_loss},
              {"zoos", zj}};
    log_file << j.dump() << "\n";
    take_snapshot();
  }

  model.save(out_dir);
  json meta;
  meta["seed"] = seed;
  meta["models"] = source.model_count();
  meta["tokens"] = source.total_tokens();
  meta["steps_per_epoch"] = steps_per_epoch;
  json zoo_ids = json::array();
  for (const auto& z : zoos) zoo_ids.push_back(z.manifest().zoo_id);
  meta["zoos"] = std::move(zoo_ids);
  std::ofstream mf(out_dir / "training_meta.json", std::ios::trunc);
  mf << meta.dump(2) << "\n";
  result.model_dir = out_dir;
  return result;
}

}  // namespace weightgen
