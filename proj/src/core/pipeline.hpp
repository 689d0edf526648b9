// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_PIPELINE_HPP
#define WEIGHTGEN_CORE_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <string>

namespace weightgen {

struct PipelineOptions {
  std::string config_path;
  std::string data_root_override;  // empty: config value, then WEIGHTGEN_DATA_ROOT
  int64_t seed_override = -1;      // negative: config value, then WEIGHTGEN_SEED
};

struct PipelineOutcome {
  int stages_run = 0;
  int stages_skipped = 0;
};

// Executes the declared stages in order. Each stage is idempotent and
// resumable: a stamp under <out_root>/.stamps records the hash of the stage
// parameters plus its inputs' stamps, and a stage whose stamp matches with
// all outputs present is skipped. The whole config is validated before any
// work starts; failures surface as errors tagged with the stage name.
PipelineOutcome run_pipeline(const PipelineOptions& options);

}  // namespace weightgen

#endif
