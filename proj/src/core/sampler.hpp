// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_SAMPLER_HPP
#define WEIGHTGEN_CORE_SAMPLER_HPP

#include "core/executor.hpp"
#include "core/sane.hpp"
#include "core/trainer.hpp"

namespace weightgen {

// Candidate generation protocol: 200 candidates drawn by per-position anchor
// subsampling, the 10 best on validation data kept, 5 prompt examples.
struct SampleSpec {
  int n_candidates = 200;
  int n_keep = 10;
  int n_anchors = 5;
  // Latent noise: in "auto" mode the per-dimension std over the anchor
  // latents scales a base factor; "absolute" uses the value as an isotropic
  // std directly.
  std::string noise_mode = "auto";
  double latent_noise_sigma = 0.05;
  int condition_batches = 4;
  int condition_batch_size = 64;
  uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static SampleSpec from_json(const std::string& text);
};

struct GenerateResult {
  std::vector<ModelCheckpoint> candidates;
  // Per candidate, per token position: which anchor supplied the latent.
  std::vector<std::vector<int>> anchor_choices;
};

// Builds each candidate token-by-token: anchors are encoded once, then for
// every position the latent is drawn from one anchor chosen uniformly at
// random (per position, per candidate), perturbed with Gaussian noise, and
// the stitched latent sequence is decoded and detokenized. Deterministic
// given (model, anchors, spec, seed); no gradient ever touches weights.
GenerateResult generate_candidates(const SaneModel& model,
                                   const std::vector<ModelCheckpoint>& anchors,
                                   const SampleSpec& spec);

// The paper's anchor rule: train-split models at their final retained epoch
// (epoch 25 for full runs), sampled without replacement.
std::vector<ModelCheckpoint> pick_anchors(const Zoo& zoo, int count, uint64_t seed);

struct ScoredCheckpoint {
  ModelCheckpoint ckpt;
  double score = 0.0;  // validation accuracy
  int index = 0;       // original candidate index
};

// Ranks by validation accuracy (ties broken by lower index) and returns the
// top n_keep.
std::vector<ScoredCheckpoint> select_candidates(const std::vector<ModelCheckpoint>& candidates,
                                                const Dataset& val_data, int n_keep);

struct SampleRunResult {
  std::filesystem::path out_zoo;
  std::vector<double> kept_scores;
  uint64_t anchor_trainable_hash = 0;  // paranoia trail for the zero-shot contract
};

// Full pipeline stage: anchors from the zoo, generation, batch-norm
// conditioning on the task's train split, selection on its validation
// split, survivors written as a standard zoo directory.
SampleRunResult run_sampling(const SaneModel& model, const Zoo& anchor_zoo,
                             const std::string& task_tag, const std::string& data_root,
                             const SampleSpec& spec, const std::filesystem::path& out_dir,
                             uint64_t seed);

}  // namespace weightgen

#endif
