#include "advenc/error.hpp"

namespace advenc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBudgetOutOfRange: return "budget-out-of-range";
    case ErrorCode::kFractionOutOfRange: return "fraction-out-of-range";
    case ErrorCode::kInvalidParameter: return "invalid-parameter";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kBatchTooSmall: return "batch-too-small";
    case ErrorCode::kZeroNorm: return "zero-norm";
    case ErrorCode::kMissingFile: return "missing-file";
    case ErrorCode::kUnsupportedArchitecture: return "unsupported-architecture";
    case ErrorCode::kEncoderMismatch: return "encoder-mismatch";
    case ErrorCode::kSingleClass: return "single-class";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kDegeneratePatch: return "degenerate-patch";
    case ErrorCode::kUnknownKey: return "unknown-key";
    case ErrorCode::kParseError: return "parse-error";
    case ErrorCode::kUnresolvedReference: return "unresolved-reference";
    case ErrorCode::kOutputNotEmpty: return "output-not-empty";
    case ErrorCode::kCorruptManifest: return "corrupt-manifest";
    case ErrorCode::kUnknownFormat: return "unknown-format";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace advenc
