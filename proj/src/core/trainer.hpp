// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_TRAINER_HPP
#define WEIGHTGEN_CORE_TRAINER_HPP

#include <set>

#include "core/rng.hpp"
#include "core/sane.hpp"
#include "core/zoo.hpp"

namespace weightgen {

// Tokenized view of the chosen split across one or more zoos, held in
// memory. Windows are contiguous spans sampled fresh on every draw: the
// model is uniform over the merged split, the start uniform over valid
// offsets. Models shorter than the window produce a single zero-padded
// window with mask 0 on the padding rows.
class TokenWindowSource {
public:
  TokenWindowSource(const std::vector<Zoo>& zoos, int token_size, Split split);

  size_t model_count() const { return models_.size(); }
  size_t total_tokens() const { return total_tokens_; }
  int token_size() const { return token_size_; }
  int max_layer_index() const { return max_layer_; }
  int max_within_layer_index() const { return max_k_; }
  int zoo_count() const { return zoo_count_; }

  // Fills one window; returns the source zoo index.
  int sample_window(Rng& rng, int window, MatF& tokens, MatPos& positions, MatF& mask,
                    std::vector<uint8_t>& valid, int* model_index = nullptr) const;

  WindowBatch sample_batch(Rng& rng, int window, int batch_size) const;

private:
  struct Entry {
    TokenizedModel tm;
    int zoo_index = 0;
  };
  std::vector<Entry> models_;
  size_t total_tokens_ = 0;
  int token_size_ = 0;
  int max_layer_ = 0;
  int max_k_ = 0;
  int zoo_count_ = 0;
};

struct TrainLogRecord {
  int epoch = 0;
  int step = 0;
  double l_rec = 0.0;
  double l_con = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::filesystem::path model_dir;
  std::vector<TrainLogRecord> log;  // one record per optimizer step
  std::vector<std::set<int>> zoos_touched;  // per epoch
  double first_epoch_loss = 0.0;
  double final_epoch_loss = 0.0;
};

// Full training run: fresh window sampling per epoch, AdamW steps, per-step
// JSONL logging to <out_dir>/train_log.jsonl, final model serialized to
// out_dir. Non-finite loss aborts with the last-good checkpoint saved and a
// runtime error carrying the diagnostic.
TrainResult train_sane(SaneConfig config, const std::vector<Zoo>& zoos,
                       const std::filesystem::path& out_dir, uint64_t seed);

// Learning-rate at a given step for the configured schedule.
double lr_at_step(const SaneConfig& config, int64_t step, int64_t total_steps);

}  // namespace weightgen

#endif
