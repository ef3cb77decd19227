#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advenc/config.hpp"
#include "advenc/nn.hpp"

namespace advenc {

inline constexpr const char* kDecoderArchitecture = "upconv-decoder-v1";
inline constexpr const char* kDirectArchitecture = "direct-noise-v1";

/// Maps a fixed latent vector to one full-image noise tensor in (-1, 1).
///
/// Decoder layout: dense projection of z to 256 x 4 x 4, then per stage
/// nearest x2 upsampling, 3x3 convolution, instance normalization and ReLU
/// (channels halve each stage, floor 16) until H x W is reached, then a 3x3
/// convolution to C channels and tanh. H and W must both equal 4 * 2^k.
///
/// The direct variant ignores z and holds the pre-tanh noise as free
/// parameters; it serves the "no generator" ablation.
struct GeneratorNet {
  std::size_t latent_dim = 0;
  ImageShape out_shape;
  std::string architecture_tag;
  nn::Sequential net;
};

GeneratorNet make_generator(std::size_t latent_dim, const ImageShape& out_shape, std::uint64_t seed);
GeneratorNet make_direct_noise(const ImageShape& out_shape, std::uint64_t seed);
/// Rebuilds the layout for `architecture_tag` and loads serialized weights.
GeneratorNet restore_generator(const std::string& architecture_tag, std::size_t latent_dim,
                               const ImageShape& out_shape, const std::string& weights);
std::string serialize_weights(const GeneratorNet& gen);

/// Standard normal vector from a generator seeded with `seed`.
std::vector<double> sample_latent(std::int64_t seed, std::size_t latent_dim);

/// Pure forward pass, C x H x W. Throws kShapeMismatch on latent length mismatch.
Tensor generate_noise(const GeneratorNet& gen, std::span<const double> z);

/// Recording forward pass and its backward, for training.
Tensor generate_noise_train(GeneratorNet& gen, std::span<const double> z);
void generate_noise_backward(GeneratorNet& gen, const Tensor& grad_noise);

/// Perturbation: clamp to [-epsilon, epsilon]. Patch: affine map (-1, 1) -> [0, 1]
/// (patch pixels are absolute colours), then clamped into [0, 1].
Tensor clip_noise(const Tensor& raw, AttackMode mode, double epsilon);
/// Vector-Jacobian product of clip_noise at `raw`.
Tensor clip_noise_backward(const Tensor& raw, const Tensor& grad_clipped, AttackMode mode, double epsilon);

}  // namespace advenc
