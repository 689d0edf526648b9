// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_TOKENIZER_HPP
#define WEIGHTGEN_CORE_TOKENIZER_HPP

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "core/checkpoint.hpp"

namespace weightgen {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatPos = Eigen::Matrix<int32_t, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Token matrix plus positional triples [n, l, k] and the binary signal mask.
// n is the global sequence position (== row index), l the layer index, k the
// token index within the layer. Padded entries are value 0 with mask 0.
struct TokenizedModel {
  MatF tokens;     // N x d_t
  MatPos positions;
  MatF mask;       // N x d_t, entries exactly 0 or 1
  ArchitectureDescriptor arch;
  int token_size = 0;

  Eigen::Index count() const { return tokens.rows(); }
};

struct LayerLayout {
  std::string name;
  int layer_index = 0;
  int rows = 0;           // weight rows contributed (2 for batch-norm)
  int row_len = 0;        // entries per row before slicing
  int tokens_per_row = 0; // ceil(row_len / d_t)
  int token_offset = 0;   // global n of this layer's first token
  int token_count = 0;    // rows * tokens_per_row
};

// Single source of truth for position triples: token order is layer-major,
// then row-major, then slice-major; k counts tokens within the layer.
struct SequenceLayout {
  int token_size = 0;
  int total_tokens = 0;
  std::vector<LayerLayout> layers;
  ArchitectureDescriptor arch;

  // Position triple of global token n.
  std::array<int32_t, 3> position_of(int n) const;
  MatPos positions() const;
  // Signal width of global token n (entries carrying weight values).
  int signal_len(int n) const;
  MatF mask() const;
};

SequenceLayout sequence_layout(const ArchitectureDescriptor& arch, int token_size);

// Slices each weight row into ceil(row_len/d_t) tokens, zero-padding the
// final slice. Batch-norm layers contribute a gamma row and a beta row.
TokenizedModel tokenize(const ModelCheckpoint& ckpt, int token_size);

// Exact inverse: copies signal entries back, discards padded entries
// regardless of value. Positions must match the layout (structure error
// otherwise). Running batch-norm statistics are not part of token space and
// come back as defaults; meta is not carried.
ModelCheckpoint detokenize(const TokenizedModel& tm,
                           std::shared_ptr<const ExecProgram> program);

std::string layout_to_json(const SequenceLayout& layout);

}  // namespace weightgen

#endif
