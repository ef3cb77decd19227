#include "advenc/types.hpp"

#include <cmath>

#include "advenc/error.hpp"

namespace advenc {

std::string_view to_string(DatasetRoleKind role) {
  switch (role) {
    case DatasetRoleKind::kPretraining: return "pretraining";
    case DatasetRoleKind::kSurrogate: return "surrogate";
    case DatasetRoleKind::kDownstream: return "downstream";
  }
  return "unknown";
}

std::string_view to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

void check_invariants(const NoiseArtifact& a) {
  const ImageShape& s = a.config.image_shape;
  if (a.delta.shape() != s.as_shape()) {
    fail(ErrorCode::kShapeMismatch, "noise shape " + shape_to_string(a.delta.shape()) + " != " + to_string(s));
  }
  if (a.mask.shape() != Shape{s.height, s.width}) fail(ErrorCode::kShapeMismatch, "mask shape mismatch");
  if (!a.delta.all_finite()) fail(ErrorCode::kNonFinite, "noise contains non-finite values");
  if (a.mode == AttackMode::kPerturbation) {
    if (a.delta.max_abs() > a.config.epsilon) {
      fail(ErrorCode::kBudgetOutOfRange, "perturbation exceeds epsilon");
    }
    for (double m : a.mask.values()) {
      if (m != 1.0) fail(ErrorCode::kInvalidParameter, "perturbation mask must be all ones");
    }
    return;
  }
  for (double v : a.delta.values()) {
    if (v < 0.0 || v > 1.0) fail(ErrorCode::kBudgetOutOfRange, "patch colour outside [0, 1]");
  }
  if (a.patch_side == 0) fail(ErrorCode::kDegeneratePatch, "patch side is zero");
  if (a.patch_row + a.patch_side > s.height || a.patch_col + a.patch_side > s.width) {
    fail(ErrorCode::kInvalidParameter, "patch lies outside the image");
  }
  for (std::size_t r = 0; r < s.height; ++r) {
    for (std::size_t c = 0; c < s.width; ++c) {
      const bool inside = r >= a.patch_row && r < a.patch_row + a.patch_side && c >= a.patch_col &&
                          c < a.patch_col + a.patch_side;
      if (a.mask[r * s.width + c] != (inside ? 1.0 : 0.0)) {
        fail(ErrorCode::kInvalidParameter, "mask does not match the patch square");
      }
    }
  }
}

}  // namespace advenc
