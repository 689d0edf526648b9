// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_CHECKPOINT_HPP
#define WEIGHTGEN_CORE_CHECKPOINT_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/arch.hpp"

namespace weightgen {

// Dense row-major float32 tensor. Conv rows are (out_ch, in_ch*k*k [+1 bias]),
// linear rows (out_dim, in_dim [+1 bias]), batch-norm (2, channels) with
// row 0 = gamma, row 1 = beta. Bias, when present, is the last column.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(size_t(r) * c, 0.0f) {}

  float& at(int r, int c) { return data[size_t(r) * cols + c]; }
  float at(int r, int c) const { return data[size_t(r) * cols + c]; }
  size_t count() const { return data.size(); }
};

// Batch-norm running statistics. Stored with checkpoints for inference but
// never tokenized; batch-norm conditioning recomputes them after generation.
struct BnStats {
  std::vector<float> mean;
  std::vector<float> var;
};

struct CheckpointMeta {
  std::string image_dataset;
  int epoch = 0;
  int64_t seed = 0;
  // Fraction in [0,1]; empty when unknown.
  std::optional<double> test_accuracy;
};

struct ModelCheckpoint {
  std::shared_ptr<const ExecProgram> program;
  ArchitectureDescriptor arch;
  std::map<std::string, Tensor> tensors;      // learned weights, by layer name
  std::map<std::string, BnStats> bn_stats;    // running stats, by layer name
  CheckpointMeta meta;

  // Shape-checks tensors against the descriptor and requires finite values.
  void validate() const;
  size_t param_count() const;
};

// Zero-initialized tensors of the right shapes (batch-norm gamma = 1,
// running var = 1).
ModelCheckpoint make_empty_checkpoint(std::shared_ptr<const ExecProgram> program);

enum class InitScheme { he_uniform, he_normal, xavier_uniform, xavier_normal };
InitScheme init_scheme_from_name(const std::string& s);

// Randomly initialized weights (for training or for synthetic zoo tests).
ModelCheckpoint make_random_checkpoint(std::shared_ptr<const ExecProgram> program, uint64_t seed,
                                       InitScheme scheme = InitScheme::he_uniform);

// FNV-1a over the raw float32 bytes of all learned tensors in layer order.
// Running statistics are excluded; used by the zero-shot contract checks.
uint64_t trainable_hash(const ModelCheckpoint& ckpt);

// Exact elementwise equality of learned tensors (bitwise on float32).
bool tensors_equal(const ModelCheckpoint& a, const ModelCheckpoint& b);

}  // namespace weightgen

#endif
