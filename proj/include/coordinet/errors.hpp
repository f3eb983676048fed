#pragma once

#include <stdexcept>
#include <string>

namespace coordinet {

enum class ErrorCode {
  invalid_input,
  degenerate_pooling,
  empty_view,
  parse,
  config,
  numeric,
  stream,
  unsupported_mode,
  degenerate_segment,
  io,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid_input";
    case ErrorCode::degenerate_pooling: return "degenerate_pooling";
    case ErrorCode::empty_view: return "empty_view";
    case ErrorCode::parse: return "parse";
    case ErrorCode::config: return "config";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::stream: return "stream";
    case ErrorCode::unsupported_mode: return "unsupported_mode";
    case ErrorCode::degenerate_segment: return "degenerate_segment";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace coordinet
