// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_EVALHARNESS_HPP
#define WEIGHTGEN_CORE_EVALHARNESS_HPP

#include "core/executor.hpp"

namespace weightgen {

// Task grouping relative to the zoos used for encoder training: the three
// lists are pairwise disjoint.
struct TaskSuite {
  std::vector<std::string> id_tasks;
  std::vector<std::string> nood_tasks;
  std::vector<std::string> food_tasks;

  void validate() const;
  std::string to_json() const;
  static TaskSuite from_json(const std::string& text);
};

struct EvalEntry {
  std::string tag;
  std::string group;  // "ID", "NOOD", "FOOD"
  double mean = 0.0;  // percent
  double stddev = 0.0;
  bool skipped = false;
  std::string skip_reason;

  bool operator==(const EvalEntry&) const = default;
};

// Per-task accuracy of the kept models plus group and overall averages.
// The overall AVG is the arithmetic mean of per-task means (its spread the
// mean of per-task stds); skipped tasks are excluded.
struct EvalReport {
  std::vector<EvalEntry> entries;  // ID tasks, then NOOD, then FOOD
  double id_avg = 0.0;
  double nood_avg = 0.0;
  double food_avg = 0.0;
  double avg_mean = 0.0;
  double avg_std = 0.0;
  std::string model_id;    // provenance: encoder checkpoint identifier
  std::string spec_note;   // provenance: sampling spec
  uint64_t seed = 0;

  void recompute();  // group and overall averages from entries

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  bool operator==(const EvalReport&) const = default;
};

// Per task: condition batch-norm on the task's train data, evaluate every
// model on the task's test split, report mean +- std over models. Tasks
// whose class count does not match the model head are reported as skipped.
EvalReport evaluate_models(const std::vector<ModelCheckpoint>& models, const TaskSuite& suite,
                           const std::string& data_root, uint64_t seed,
                           int condition_batches = 4);

// Two-sample Kolmogorov-Smirnov statistic (sup distance of empirical CDFs).
double ks_statistic(std::vector<float> a, std::vector<float> b);

struct LayerDiagnostic {
  std::string layer;
  double mean_diff = 0.0;   // |mean_recon - mean_orig|
  double std_ratio = 0.0;   // std_recon / std_orig
  double ks = 0.0;
  std::vector<int> hist_orig;   // optional histogram data for plotting
  std::vector<int> hist_recon;
  double hist_lo = 0.0, hist_hi = 0.0;
};

// Pools each layer's weights across the paired lists and compares the
// reconstructed distribution against the original one.
std::vector<LayerDiagnostic> distribution_diagnostics(
    const std::vector<ModelCheckpoint>& originals,
    const std::vector<ModelCheckpoint>& reconstructions, int hist_bins = 0);

std::string diagnostics_to_json(const std::vector<LayerDiagnostic>& diags);

// "62.5±0.9 | 32.0±0.4 | ... | 49.5±0.8": per-task means then the AVG
// column, one decimal, columns joined by " | ".
std::string render_report_row(const EvalReport& report);
// Full plain-text table (header rows + the value row).
std::string render_report_text(const EvalReport& report);

}  // namespace weightgen

#endif
