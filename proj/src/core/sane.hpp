// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_SANE_HPP
#define WEIGHTGEN_CORE_SANE_HPP

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "core/losses.hpp"
#include "core/tokenizer.hpp"

namespace weightgen {

// Every knob of the sequence model and its training run. The "cnn" and
// "resnet" presets carry the reference values shipped with the toolkit.
struct SaneConfig {
  int d_t = 289;          // token size
  int window_size = 32;   // W_s
  int d_model = 1024;
  int d_lat = 128;
  int n_layers = 4;
  int n_heads = 8;
  int d_proj = 32;        // projection head output, strictly < d_lat
  double gamma = 0.05;    // contrastive weight in (1-gamma)*L_rec + gamma*L_c
  double tau = 0.1;       // NT-Xent temperature
  double lr = 1e-4;
  double weight_decay = 3e-9;
  int batch_size = 32;
  int epochs = 50;
  double aug_noise_sigma = 0.01;  // Gaussian view augmentation
  double epsilon = 1e-6;          // stats floor for standardization
  NormalizationMode norm_mode = NormalizationMode::masked_per_token;
  std::string schedule = "warmup_cosine";  // or "constant"
  int max_layers = 64;  // positional table sizes
  int max_k = 4096;
  uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static SaneConfig from_json(const std::string& text);
};

// Reference hyperparameter sets ("cnn", "resnet").
SaneConfig sane_config_preset(const std::string& name);

struct ParamTensor {
  std::string name;
  MatF w;  // value
  MatF g;  // gradient accumulator
  MatF m;  // Adam first moment
  MatF v;  // Adam second moment
};

// One batch of token windows, packed as (b * w) rows.
struct WindowBatch {
  int b = 0;  // windows in the batch
  int w = 0;  // window length
  MatF tokens;                  // (b*w) x d_t
  MatPos positions;             // (b*w) x 3
  MatF mask;                    // (b*w) x d_t
  std::vector<uint8_t> valid;   // per row; 0 marks window padding rows
  std::vector<int> provenance;  // source zoo index per window

  Eigen::Index rows() const { return tokens.rows(); }
};

struct TrainStepStats {
  double l_rec = 0.0;
  double l_con = 0.0;
  double total = 0.0;
};

// Token-sequence encoder/decoder with a contrastive projection head.
// Pre-norm transformer stacks, non-autoregressive (no causal masking);
// positions enter as the sum of three learned tables indexed by the
// window-relative sequence position, the layer index and the within-layer
// token index. Window-padding rows are excluded as attention keys.
class SaneModel {
public:
  SaneModel(SaneConfig config, uint64_t seed);

  const SaneConfig& config() const { return config_; }
  size_t param_count() const;
  std::vector<ParamTensor>& params() { return params_; }
  const std::vector<ParamTensor>& params() const { return params_; }

  // One latent row per input token. valid == nullptr means all rows valid.
  MatF encode(const MatF& tokens, const MatPos& positions,
              const std::vector<uint8_t>* valid = nullptr) const;
  // One predicted token per latent row.
  MatF decode(const MatF& latents, const MatPos& positions,
              const std::vector<uint8_t>* valid = nullptr) const;
  // Projection head over pooled window embeddings (rows of d_lat).
  MatF project(const MatF& pooled) const;

  // Whole model sequence, processed in ceil(N / window_size) windows.
  MatF encode_sequence(const TokenizedModel& tm) const;
  // Inverse direction for generated latents; layout supplies positions.
  MatF decode_sequence(const MatF& latents, const SequenceLayout& layout) const;

  // Masked mean over valid rows, one pooled embedding per window.
  MatF pool_latents(const MatF& latents, const WindowBatch& batch) const;

  // Forward + backward + AdamW update on one batch. view_j supplies the
  // augmented tokens for the contrastive pair (same positions/mask); it is
  // ignored when gamma == 0.
  TrainStepStats train_step(const WindowBatch& batch, const MatF& view_j_tokens, double lr_now);

  // Loss evaluation without gradients or updates (used by validation and
  // finite-difference tests).
  TrainStepStats eval_loss(const WindowBatch& batch, const MatF& view_j_tokens) const;

  void save(const std::filesystem::path& dir) const;
  static SaneModel load(const std::filesystem::path& dir);

private:
  void init_params(uint64_t seed);
  ParamTensor& p(const std::string& name);
  const ParamTensor& p(const std::string& name) const;

  SaneConfig config_;
  std::vector<ParamTensor> params_;
  std::map<std::string, int> index_;
  int64_t adam_t_ = 0;
};

}  // namespace weightgen

#endif
