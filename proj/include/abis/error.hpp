#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace abis {

enum class ErrorCode {
  Dimension,
  EmptyTemplate,
  DegenerateSegment,
  Format,
  Incomparable,
  Capacity,
  IdConflict,
  Argument,
  Consistency,
  Stage,
  CalibrationFailure,
  Resolution,
  Io,
  NotFound,
  StateConflict,
  Malformed,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-readable code so
/// the CLI and the HTTP layer can map it to exit codes / status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void raise(ErrorCode code, const std::string& message);

}  // namespace abis
