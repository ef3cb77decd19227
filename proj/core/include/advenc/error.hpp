#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace advenc {

enum class ErrorCode {
  kBudgetOutOfRange,
  kFractionOutOfRange,
  kInvalidParameter,
  kShapeMismatch,
  kNonFinite,
  kBatchTooSmall,
  kZeroNorm,
  kMissingFile,
  kUnsupportedArchitecture,
  kEncoderMismatch,
  kSingleClass,
  kEmptyInput,
  kDegeneratePatch,
  kUnknownKey,
  kParseError,
  kUnresolvedReference,
  kOutputNotEmpty,
  kCorruptManifest,
  kUnknownFormat,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so that
/// callers (and tests) can branch on the kind of failure rather than the text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

}  // namespace advenc
