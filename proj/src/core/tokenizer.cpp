// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/tokenizer.hpp"

#include <nlohmann/json.hpp>

namespace weightgen {

SequenceLayout sequence_layout(const ArchitectureDescriptor& arch, int token_size) {
  if (token_size < 1) raise(ErrorCode::invalid_argument, "token size must be >= 1");
  SequenceLayout layout;
  layout.token_size = token_size;
  layout.arch = arch;
  int n = 0;
  for (const auto& l : arch.layers) {
    LayerLayout ll;
    ll.name = l.name;
    ll.layer_index = l.layer_index;
    ll.rows = l.row_count();
    ll.row_len = l.row_len();
    ll.tokens_per_row = (ll.row_len + token_size - 1) / token_size;
    ll.token_offset = n;
    ll.token_count = ll.rows * ll.tokens_per_row;
    n += ll.token_count;
    layout.layers.push_back(std::move(ll));
  }
  layout.total_tokens = n;
  return layout;
}

std::array<int32_t, 3> SequenceLayout::position_of(int n) const {
  for (const auto& ll : layers) {
    if (n < ll.token_offset + ll.token_count)
      return {int32_t(n), int32_t(ll.layer_index), int32_t(n - ll.token_offset)};
  }
  raise(ErrorCode::invalid_argument, "token index out of range");
}

MatPos SequenceLayout::positions() const {
  MatPos p(total_tokens, 3);
  int n = 0;
  for (const auto& ll : layers) {
    for (int k = 0; k < ll.token_count; ++k, ++n) {
      p(n, 0) = n;
      p(n, 1) = ll.layer_index;
      p(n, 2) = k;
    }
  }
  return p;
}

int SequenceLayout::signal_len(int n) const {
  for (const auto& ll : layers) {
    if (n < ll.token_offset + ll.token_count) {
      int k = n - ll.token_offset;
      int slice = k % ll.tokens_per_row;
      int remaining = ll.row_len - slice * token_size;
      return std::min(remaining, token_size);
    }
  }
  raise(ErrorCode::invalid_argument, "token index out of range");
}

MatF SequenceLayout::mask() const {
  MatF m = MatF::Zero(total_tokens, token_size);
  for (int n = 0; n < total_tokens; ++n) {
    int s = signal_len(n);
    for (int i = 0; i < s; ++i) m(n, i) = 1.0f;
  }
  return m;
}

TokenizedModel tokenize(const ModelCheckpoint& ckpt, int token_size) {
  ckpt.validate();
  SequenceLayout layout = sequence_layout(ckpt.arch, token_size);
  TokenizedModel tm;
  tm.arch = ckpt.arch;
  tm.token_size = token_size;
  tm.tokens = MatF::Zero(layout.total_tokens, token_size);
  tm.mask = layout.mask();
  tm.positions = layout.positions();
  for (size_t li = 0; li < ckpt.arch.layers.size(); ++li) {
    const LayerSpec& spec = ckpt.arch.layers[li];
    const LayerLayout& ll = layout.layers[li];
    const Tensor& t = ckpt.tensors.at(spec.name);
    for (int r = 0; r < ll.rows; ++r) {
      for (int s = 0; s < ll.tokens_per_row; ++s) {
        int n = ll.token_offset + r * ll.tokens_per_row + s;
        int start = s * token_size;
        int len = std::min(token_size, ll.row_len - start);
        for (int i = 0; i < len; ++i) tm.tokens(n, i) = t.at(r, start + i);
      }
    }
  }
  return tm;
}

ModelCheckpoint detokenize(const TokenizedModel& tm, std::shared_ptr<const ExecProgram> program) {
  SequenceLayout layout = sequence_layout(tm.arch, tm.token_size);
  if (tm.tokens.rows() != layout.total_tokens || tm.tokens.cols() != tm.token_size)
    raise(ErrorCode::validation, "token matrix shape does not match layout");
  if (tm.positions.rows() != layout.total_tokens)
    raise(ErrorCode::validation, "position count does not match layout");
  MatPos expected = layout.positions();
  for (int n = 0; n < layout.total_tokens; ++n)
    for (int c = 0; c < 3; ++c)
      if (tm.positions(n, c) != expected(n, c))
        raise(ErrorCode::validation, "inconsistent position triple at token " + std::to_string(n));

  ModelCheckpoint ckpt = make_empty_checkpoint(std::move(program));
  if (ckpt.arch.arch_id != tm.arch.arch_id)
    raise(ErrorCode::validation, "program does not match tokenized architecture");
  for (size_t li = 0; li < ckpt.arch.layers.size(); ++li) {
    const LayerSpec& spec = ckpt.arch.layers[li];
    const LayerLayout& ll = layout.layers[li];
    Tensor& t = ckpt.tensors.at(spec.name);
    for (int r = 0; r < ll.rows; ++r) {
      for (int s = 0; s < ll.tokens_per_row; ++s) {
        int n = ll.token_offset + r * ll.tokens_per_row + s;
        int start = s * tm.token_size;
        int len = std::min(tm.token_size, ll.row_len - start);
        for (int i = 0; i < len; ++i) t.at(r, start + i) = tm.tokens(n, i);
      }
    }
  }
  return ckpt;
}

std::string layout_to_json(const SequenceLayout& layout) {
  nlohmann::json j;
  j["arch_id"] = layout.arch.arch_id;
  j["token_size"] = layout.token_size;
  j["total_tokens"] = layout.total_tokens;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& ll : layout.layers) {
    layers.push_back({{"name", ll.name},
                      {"layer_index", ll.layer_index},
                      {"rows", ll.rows},
                      {"row_len", ll.row_len},
                      {"tokens_per_row", ll.tokens_per_row},
                      {"token_offset", ll.token_offset},
                      {"token_count", ll.token_count}});
  }
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

}  // namespace weightgen
