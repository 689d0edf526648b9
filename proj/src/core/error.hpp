// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_ERROR_HPP
#define WEIGHTGEN_CORE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace weightgen {

// Error categories; mirrored one-to-one by the C API status codes.
enum class ErrorCode {
  validation = 1,    // data inconsistent with its descriptor/contract
  parse = 2,         // malformed structured text
  integrity = 3,     // missing/truncated binary payloads
  storage = 4,       // filesystem I/O failure
  config = 5,        // bad configuration value or schema violation
  incompatible = 6,  // operands cannot be combined (e.g. token size mismatch)
  runtime = 7,       // numerical/abort conditions (non-finite loss, ...)
  invalid_argument = 8,
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation: return "validation";
    case ErrorCode::parse: return "parse";
    case ErrorCode::integrity: return "integrity";
    case ErrorCode::storage: return "storage";
    case ErrorCode::config: return "config";
    case ErrorCode::incompatible: return "incompatible";
    case ErrorCode::runtime: return "runtime";
    case ErrorCode::invalid_argument: return "invalid_argument";
  }
  return "unknown";
}

}  // namespace weightgen

#endif
