#include "advenc/generator.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "advenc/error.hpp"

namespace advenc {
namespace {

constexpr std::size_t kSeedGrid = 4;
constexpr std::size_t kSeedChannels = 256;
constexpr std::size_t kMinChannels = 16;
constexpr double kInitStd = 0.02;

std::size_t upsampling_stages(const ImageShape& shape) {
  for (std::size_t stages = 0, side = kSeedGrid; side <= std::max(shape.height, shape.width); ++stages, side *= 2) {
    if (side == shape.height && side == shape.width) return stages;
  }
  fail(ErrorCode::kUnsupportedArchitecture,
       std::string(kDecoderArchitecture) + " needs H = W = 4 * 2^k, got " + to_string(shape));
}

nn::Sequential build_decoder(std::size_t latent_dim, const ImageShape& out_shape) {
  const std::size_t stages = upsampling_stages(out_shape);
  nn::Sequential net;
  net.add<nn::Linear>(latent_dim, kSeedChannels * kSeedGrid * kSeedGrid);
  net.add<nn::Reshape>(Shape{kSeedChannels, kSeedGrid, kSeedGrid});
  net.add<nn::ReLU>();
  std::size_t channels = kSeedChannels;
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t next = std::max(channels / 2, kMinChannels);
    net.add<nn::Upsample2x>();
    net.add<nn::Conv2d>(channels, next, 3, 1, 1);
    net.add<nn::InstanceNorm2d>(next);
    net.add<nn::ReLU>();
    channels = next;
  }
  net.add<nn::Conv2d>(channels, out_shape.channels, 3, 1, 1);
  net.add<nn::Tanh>();
  return net;
}

nn::Sequential build_direct(const ImageShape& out_shape) {
  nn::Sequential net;
  net.add<nn::Linear>(1, out_shape.volume());
  net.add<nn::Reshape>(out_shape.as_shape());
  net.add<nn::Tanh>();
  return net;
}

Tensor latent_input(const GeneratorNet& gen, std::span<const double> z) {
  if (gen.architecture_tag == kDirectArchitecture) return Tensor({1, 1}, 1.0);
  if (z.size() != gen.latent_dim) {
    fail(ErrorCode::kShapeMismatch,
         "latent of length " + std::to_string(z.size()) + " for generator expecting " + std::to_string(gen.latent_dim));
  }
  return Tensor({1, gen.latent_dim}, std::vector<double>(z.begin(), z.end()));
}

Tensor drop_batch_axis(const GeneratorNet& gen, const Tensor& y) { return y.reshaped(gen.out_shape.as_shape()); }

}  // namespace

GeneratorNet make_generator(std::size_t latent_dim, const ImageShape& out_shape, std::uint64_t seed) {
  if (latent_dim == 0) fail(ErrorCode::kInvalidParameter, "latent_dim must be positive");
  GeneratorNet gen{latent_dim, out_shape, kDecoderArchitecture, build_decoder(latent_dim, out_shape)};
  gen.net.init_normal(kInitStd, seed);
  return gen;
}

GeneratorNet make_direct_noise(const ImageShape& out_shape, std::uint64_t seed) {
  GeneratorNet gen{0, out_shape, kDirectArchitecture, build_direct(out_shape)};
  gen.net.init_normal(kInitStd, seed);
  return gen;
}

GeneratorNet restore_generator(const std::string& architecture_tag, std::size_t latent_dim,
                               const ImageShape& out_shape, const std::string& weights) {
  GeneratorNet gen;
  if (architecture_tag == kDecoderArchitecture) {
    gen = GeneratorNet{latent_dim, out_shape, architecture_tag, build_decoder(latent_dim, out_shape)};
  } else if (architecture_tag == kDirectArchitecture) {
    gen = GeneratorNet{0, out_shape, architecture_tag, build_direct(out_shape)};
  } else {
    fail(ErrorCode::kUnsupportedArchitecture, "unknown generator architecture '" + architecture_tag + "'");
  }
  std::istringstream in(weights);
  nn::load_parameters(gen.net, in);
  return gen;
}

std::string serialize_weights(const GeneratorNet& gen) {
  std::ostringstream out;
  nn::save_parameters(gen.net, out);
  return out.str();
}

std::vector<double> sample_latent(std::int64_t seed, std::size_t latent_dim) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(latent_dim);
  for (double& v : z) v = normal(rng);
  return z;
}

Tensor generate_noise(const GeneratorNet& gen, std::span<const double> z) {
  return drop_batch_axis(gen, gen.net.infer(latent_input(gen, z)));
}

Tensor generate_noise_train(GeneratorNet& gen, std::span<const double> z) {
  return drop_batch_axis(gen, gen.net.forward(latent_input(gen, z)));
}

void generate_noise_backward(GeneratorNet& gen, const Tensor& grad_noise) {
  Shape batched = gen.out_shape.as_shape();
  batched.insert(batched.begin(), 1);
  gen.net.backward(grad_noise.reshaped(std::move(batched)));
}

Tensor clip_noise(const Tensor& raw, AttackMode mode, double epsilon) {
  if (!raw.all_finite()) fail(ErrorCode::kNonFinite, "noise contains non-finite values");
  Tensor out(raw.shape());
  if (mode == AttackMode::kPerturbation) {
    if (!(epsilon > 0.0)) fail(ErrorCode::kBudgetOutOfRange, "epsilon must be positive");
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = std::clamp(raw[i], -epsilon, epsilon);
  } else {
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = std::clamp((raw[i] + 1.0) * 0.5, 0.0, 1.0);
  }
  return out;
}

Tensor clip_noise_backward(const Tensor& raw, const Tensor& grad_clipped, AttackMode mode, double epsilon) {
  require_same_shape(raw, grad_clipped, "clip_noise backward");
  Tensor out(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (mode == AttackMode::kPerturbation) {
      out[i] = (raw[i] > -epsilon && raw[i] < epsilon) ? grad_clipped[i] : 0.0;
    } else {
      out[i] = (raw[i] > -1.0 && raw[i] < 1.0) ? 0.5 * grad_clipped[i] : 0.0;
    }
  }
  return out;
}

}  // namespace advenc
