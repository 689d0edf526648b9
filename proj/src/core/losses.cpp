// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/losses.hpp"

namespace weightgen {

const char* normalization_mode_name(NormalizationMode m) {
  switch (m) {
    case NormalizationMode::none: return "none";
    case NormalizationMode::per_token: return "per_token";
    case NormalizationMode::masked_per_token: return "masked_per_token";
  }
  return "?";
}

NormalizationMode normalization_mode_from_name(const std::string& s) {
  if (s == "none") return NormalizationMode::none;
  if (s == "per_token") return NormalizationMode::per_token;
  if (s == "masked_per_token") return NormalizationMode::masked_per_token;
  raise(ErrorCode::config, "unknown normalization mode '" + s + "'");
}

}  // namespace weightgen
