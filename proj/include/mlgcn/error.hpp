#pragma once

#include <stdexcept>
#include <string>

namespace mlgcn {

enum class ErrorCode {
  kMalformedFile,
  kMissingFile,
  kLabelLengthMismatch,
  kDegenerateMesh,
  kInvalidK,
  kShapeMismatch,
  kMissingForwardCache,
  kHeadNotConfigured,
  kLabelOutOfRange,
  kEmptyDataset,
  kNonFinite,
  kCheckpointMismatch,
  kInvalidConfig,
  kIo,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, std::string(to_string(code)) + ": " + what);
}

}  // namespace mlgcn
