// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_EXECUTOR_HPP
#define WEIGHTGEN_CORE_EXECUTOR_HPP

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/tokenizer.hpp"

namespace weightgen {

// Batch-norm handling during a forward pass.
//   running    inference: normalize by stored running statistics
//   batch      training: normalize by batch statistics, update running stats
//              with momentum
//   condition  normalize by batch statistics and accumulate exact averages
//              for running-stat recomputation (no momentum)
enum class BnMode { running, batch, condition };

// Gradients mirror checkpoint tensors (bias in the last column; batch-norm
// row 0 = dgamma, row 1 = dbeta).
using GradMap = std::map<std::string, Tensor>;

// Per-layer accumulator used by batch-norm conditioning.
struct BnAccumulator {
  std::map<std::string, BnStats> sums;  // running sums of per-batch moments
  int batches = 0;
};

// Optional instrumentation: receives each batch-norm layer's raw input
// activations (pre-normalization) per forward call. Used by oracle tests.
using BnInputHook =
    std::function<void(const std::string& layer, const float* data, int batch, int channels,
                       int spatial)>;

class Executor {
public:
  explicit Executor(std::shared_ptr<const ExecProgram> program);

  const ExecProgram& program() const { return *program_; }

  // Forward pass over a batch; images must match the program input shape.
  // Returns logits (batch x num_classes).
  MatF forward(const ModelCheckpoint& ckpt, const float* images, int batch, BnMode bn_mode,
               BnAccumulator* bn_acc = nullptr, const BnInputHook& hook = nullptr) const;

  // Mutating variant for training: batch-norm running stats are updated in
  // the checkpoint (momentum 0.1).
  MatF forward_train(ModelCheckpoint& ckpt, const float* images, int batch);

  // Softmax cross-entropy forward+backward. Returns mean loss; fills grads
  // (allocated/zeroed internally). Batch-norm runs in batch mode.
  float train_step_gradients(ModelCheckpoint& ckpt, const float* images, const int32_t* labels,
                             int batch, GradMap& grads);

  // Mean 0/1 accuracy over a dataset (inference mode), batched internally.
  double accuracy(const ModelCheckpoint& ckpt, const Dataset& data, int batch = 128) const;

  double mean_cross_entropy(const ModelCheckpoint& ckpt, const Dataset& data,
                            int batch = 128) const;

private:
  std::shared_ptr<const ExecProgram> program_;
  std::vector<BufferShape> shapes_;
};

// Recomputes running batch-norm statistics from n_batches forward passes in
// statistics-update mode; trainable parameters are untouched. Architectures
// without batch-norm come back bit-identical. Errors on an empty stream.
ModelCheckpoint condition_batchnorm(const ModelCheckpoint& ckpt, const Dataset& data,
                                    int n_batches, int batch_size = 64,
                                    const BnInputHook& hook = nullptr);

GradMap make_zero_grads(const ModelCheckpoint& ckpt);

}  // namespace weightgen

#endif
