#include "shiftbnn/error.hpp"

namespace shiftbnn {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroSeed: return "ZeroSeed";
    case ErrorCode::InvalidTaps: return "InvalidTaps";
    case ErrorCode::UnderflowBeforeSeed: return "UnderflowBeforeSeed";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LedgerMismatch: return "LedgerMismatch";
    case ErrorCode::NonContiguousSegment: return "NonContiguousSegment";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
  }
  return "Unknown";
}

}  // namespace shiftbnn
