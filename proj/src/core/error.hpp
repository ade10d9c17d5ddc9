#pragma once

#include <stdexcept>
#include <string>

namespace fleetsim {

enum class ErrorCode {
  kInvalidArgument = 1,
  kDegenerateConfiguration,
  kAlignmentFailure,
  kScaleIndeterminate,
  kUnknownUav,
  kParse,
  kEncode,
  kIo,
  kMissingAlignment,
  kState,
};

/// Exception carrying a machine-readable code; the C API maps the code onto fs_status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fleetsim
