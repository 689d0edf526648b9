// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_BASELINES_HPP
#define WEIGHTGEN_CORE_BASELINES_HPP

#include <Eigen/Core>

#include "core/executor.hpp"

namespace weightgen {

// Minimum-cost linear sum assignment (Jonker-Volgonant style shortest
// augmenting path, O(n^3)). Returns sigma with sum cost(i, sigma[i]) minimal.
std::vector<int> solve_assignment_min(const Eigen::MatrixXd& cost);

// Element-wise arithmetic mean of every tensor, batch-norm gamma/beta
// included. Running statistics are averaged as a placeholder and expected to
// be re-derived by conditioning before evaluation.
ModelCheckpoint soup(const std::vector<ModelCheckpoint>& models);

struct PermGroup {
  int id = 0;
  int size = 0;
  std::vector<std::string> layers;  // weighted ops whose output rows it permutes
  std::vector<int> perm;            // aligned row i comes from target row perm[i]
};

struct RebasinResult {
  ModelCheckpoint aligned;
  std::vector<PermGroup> groups;     // permutable groups only
  std::vector<double> l2_history;    // distance to reference after each sweep
  int sweeps = 0;
};

// Coordinate-descent weight matching: per permutable channel group, a linear
// assignment maximizes the inner product between reference and permuted
// target weights, with couplings through adjacent layers, batch-norm
// parameters and residual ties (channels sharing a residual stream share one
// permutation). Non-permutable elements (network input, logits) stay fixed.
// The aligned model is functionally identical to the target.
RebasinResult rebasin_align(const ModelCheckpoint& reference, const ModelCheckpoint& target,
                            int max_iters = 50);

// Weight-space L2 distance over learned tensors.
double weight_l2_distance(const ModelCheckpoint& a, const ModelCheckpoint& b);

struct SoupPoint {
  int k = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

struct SoupCurve {
  std::vector<SoupPoint> points;
  double single_mean = 0.0;  // k = 1 baseline
  double single_std = 0.0;
};

// For each k: sample k distinct max-epoch models, optionally align all to
// the first, average, re-condition batch-norm, and evaluate test accuracy;
// repeated `repeats` times. The k=1 single-model baseline is always
// reported.
SoupCurve soup_curve(const Zoo& zoo, const std::vector<int>& ks, bool aligned,
                     const Dataset& eval_test, const Dataset& condition_train, int repeats,
                     uint64_t seed);

std::string soup_curve_to_json(const SoupCurve& aligned_or_plain, bool aligned);

}  // namespace weightgen

#endif
