#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seuforge {

enum class ErrorCode {
  kShapeMismatch,
  kInvalidArgument,
  kOutOfRange,
  kFormat,
  kState,
  kUnsupported,
  kPrecondition,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library. The code lets callers (and the CLI)
/// distinguish usage errors from corrupt inputs without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace seuforge
