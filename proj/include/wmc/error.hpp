#pragma once

#include <stdexcept>
#include <string>

namespace wmc {

enum class ErrorCode {
  parse,
  validation,
  not_found,
  duplicate,
  shape,
  range,
  version,
  fingerprint,
  numeric,
  io,
  state,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse: return "parse";
    case ErrorCode::validation: return "validation";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::duplicate: return "duplicate";
    case ErrorCode::shape: return "shape";
    case ErrorCode::range: return "range";
    case ErrorCode::version: return "version";
    case ErrorCode::fingerprint: return "fingerprint";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::io: return "io";
    case ErrorCode::state: return "state";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace wmc
