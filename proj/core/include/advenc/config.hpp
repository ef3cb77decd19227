#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "advenc/tensor.hpp"

namespace advenc {

enum class AttackMode { kPerturbation, kPatch };
enum class PatchPosition { kBottomRight, kRandomFixed };

std::string_view to_string(AttackMode mode);
std::string_view to_string(PatchPosition position);
AttackMode parse_attack_mode(std::string_view text);
PatchPosition parse_patch_position(std::string_view text);

struct ImageShape {
  std::size_t channels = 3;
  std::size_t height = 64;
  std::size_t width = 64;

  Shape as_shape() const { return {channels, height, width}; }
  std::size_t volume() const { return channels * height * width; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

std::string to_string(const ImageShape& shape);  // "3x64x64"
ImageShape parse_image_shape(std::string_view text);

/// Every tunable of a generator attack run. Pixel values live in [0, 1], so
/// epsilon is an L-infinity budget on that scale.
struct AttackConfig {
  AttackMode mode = AttackMode::kPerturbation;
  double epsilon = 10.0 / 255.0;
  double patch_fraction = 0.03;
  PatchPosition patch_position = PatchPosition::kBottomRight;
  double alpha = 1.0;
  double beta = 5.0;
  double lambda = 1.0;
  double tau = 0.1;
  std::size_t latent_dim = 100;
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  double learning_rate = 0.0002;
  std::int64_t seed = 100;
  ImageShape image_shape{};
  /// Radius of the low-pass disk used by the high-frequency filter.
  double hfc_cutoff = 0.25;
  /// false: optimize the noise tensor directly instead of through the generator.
  bool use_generator = true;

  /// Side of the square patch, floor(sqrt(patch_fraction * H * W)).
  std::size_t patch_side() const;

  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

/// Returns the config unchanged when every invariant holds, throws otherwise
/// (kBudgetOutOfRange, kFractionOutOfRange, kInvalidParameter).
AttackConfig validate_config(const AttackConfig& config);

/// One "key = value" line per field in a fixed order.
std::string to_canonical_text(const AttackConfig& config);
/// Parses "key = value" lines ('#' comments allowed). Missing keys keep their
/// defaults; unknown keys throw kUnknownKey. The result is not validated.
AttackConfig parse_config_text(std::string_view text);
AttackConfig load_config_file(const std::filesystem::path& path);

/// Hex SHA-256 of the canonical text.
std::string config_digest(const AttackConfig& config);

}  // namespace advenc
