#include "abis/error.hpp"

namespace abis {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Dimension: return "dimension";
    case ErrorCode::EmptyTemplate: return "empty-template";
    case ErrorCode::DegenerateSegment: return "degenerate-segment";
    case ErrorCode::Format: return "format";
    case ErrorCode::Incomparable: return "incomparable";
    case ErrorCode::Capacity: return "capacity";
    case ErrorCode::IdConflict: return "id-conflict";
    case ErrorCode::Argument: return "argument";
    case ErrorCode::Consistency: return "consistency";
    case ErrorCode::Stage: return "stage";
    case ErrorCode::CalibrationFailure: return "calibration-failure";
    case ErrorCode::Resolution: return "resolution";
    case ErrorCode::Io: return "io";
    case ErrorCode::NotFound: return "not-found";
    case ErrorCode::StateConflict: return "state-conflict";
    case ErrorCode::Malformed: return "malformed";
  }
  return "unknown";
}

void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace abis
