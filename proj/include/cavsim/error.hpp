#pragma once

#include <stdexcept>
#include <string>

namespace cavsim {

enum class ErrorCode {
  InvalidArgument = 1,
  NotFound,
  Io,
  Schema,
  EmptyBin,
  NoConvergence,
  InsufficientData,
};

/// Every failure raised by the library carries one of the codes above so the
/// C surface can translate it without string matching.
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

}  // namespace cavsim
