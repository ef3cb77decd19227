#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>

#include "advenc/config.hpp"
#include "advenc/data.hpp"
#include "advenc/encoders.hpp"
#include "advenc/generator.hpp"
#include "advenc/types.hpp"

namespace advenc {

struct PatchMask {
  /// H x W, 1 on the square and 0 elsewhere.
  Tensor grid;
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t side = 0;
};

/// side = floor(sqrt(fraction * H * W)). bottom_right puts the square flush with
/// the bottom-right corner; random_fixed draws one origin from `seed`.
/// Throws kFractionOutOfRange or kDegeneratePatch (side 0).
PatchMask build_patch_mask(const ImageShape& shape, double fraction, PatchPosition position, std::int64_t seed);

/// clamp(x + delta, 0, 1) with the same delta for every sample.
Tensor apply_perturbation(const Tensor& x, const Tensor& delta);
/// dL/ddelta summed over the batch; zero where the clamp is active.
Tensor apply_perturbation_backward(const Tensor& x, const Tensor& delta, const Tensor& grad_out);

/// x * (1 - m) + patch * m. Throws kBudgetOutOfRange for patch values outside [0, 1].
Tensor apply_patch(const Tensor& x, const Tensor& patch, const Tensor& mask);
Tensor apply_patch_backward(const Tensor& mask, const Tensor& grad_out);

/// Applies an artifact in its own mode.
Tensor apply_artifact(const NoiseArtifact& artifact, const Tensor& x);

struct ObjectiveTerms {
  double total = 0.0;
  double adv = 0.0;
  double hfc = 0.0;
  double quality = 0.0;
};

/// L_G = alpha L_adv + beta L_hfc + lambda L_q for one batch, through generator,
/// clip, application and the frozen encoder. With `accumulate` the generator's
/// parameter gradients receive dL_G/dtheta.
ObjectiveTerms generator_objective(GeneratorNet& gen, std::span<const double> z, nn::Sequential& encoder,
                                   const Tensor& x, const FeatureBatch& clean, const AttackConfig& config,
                                   const Tensor& mask, bool accumulate);

struct AttackStep {
  std::size_t epoch = 0;
  std::size_t step = 0;
  /// Clipped noise after the optimizer step.
  const Tensor& delta;
  /// The batch of this step and its adversarial version under the updated noise.
  const Tensor& x;
  const Tensor& x_adv;
  double loss = 0.0;
};

struct AttackOptions {
  std::function<void(const AttackStep&)> on_step;
  std::ostream* log = nullptr;
};

/// Trains the generator against the frozen encoder on the surrogate data and
/// returns the resulting artifact. epochs = 0 is accepted and returns the
/// clipped output of the freshly initialized generator.
NoiseArtifact train_advencoder(const AttackConfig& config, const EncoderHandle& encoder, const Dataset& surrogate,
                               const AttackOptions& options = {});

/// Directory with noise.bin, mask.bin (float32 LE), meta.json, gen.weights, preview.png.
void save_artifact(const NoiseArtifact& artifact, const std::filesystem::path& dir);
NoiseArtifact load_artifact(const std::filesystem::path& dir);

/// 8-bit H x W x 3 RGB rendering: (delta + eps) / (2 eps) for perturbations, colours for patches.
std::vector<unsigned char> render_preview(const NoiseArtifact& artifact);

}  // namespace advenc
