#include "mlgcn/error.hpp"

namespace mlgcn {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kMalformedFile: return "MalformedFile";
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kLabelLengthMismatch: return "LabelLengthMismatch";
    case ErrorCode::kDegenerateMesh: return "DegenerateMesh";
    case ErrorCode::kInvalidK: return "InvalidK";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kMissingForwardCache: return "MissingForwardCache";
    case ErrorCode::kHeadNotConfigured: return "HeadNotConfigured";
    case ErrorCode::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kCheckpointMismatch: return "CheckpointMismatch";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

}  // namespace mlgcn
