#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "advenc/error.hpp"
#include "advenc/generator.hpp"
#include "oracles.hpp"

using namespace advenc;

TEST(SampleLatent, SeededAndDistinct) {
  EXPECT_EQ(sample_latent(100, 100), sample_latent(100, 100));
  EXPECT_NE(sample_latent(100, 100), sample_latent(101, 100));
  EXPECT_EQ(sample_latent(5, 7).size(), 7u);
}

TEST(SampleLatent, StandardNormalMoments) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::int64_t s = 0; s < 10000; ++s) {
    for (double v : sample_latent(s, 100)) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(sd, 1.0, 0.02);
}

TEST(GenerateNoise, ShapeCodomainDeterminism) {
  const GeneratorNet g = make_generator(100, {3, 8, 8}, 1);
  EXPECT_EQ(g.architecture_tag, kDecoderArchitecture);
  const auto z = sample_latent(100, 100);
  const Tensor a = generate_noise(g, z);
  EXPECT_EQ(a.shape(), (Shape{3, 8, 8}));
  for (double v : a.values()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_EQ(generate_noise(g, z), a);
}

TEST(GenerateNoise, DefaultResolution) {
  const GeneratorNet g = make_generator(100, {3, 64, 64}, 100);
  EXPECT_EQ(generate_noise(g, sample_latent(100, 100)).shape(), (Shape{3, 64, 64}));
}

TEST(GenerateNoise, LatentLengthMismatch) {
  const GeneratorNet g = make_generator(10, {3, 8, 8}, 1);
  try {
    generate_noise(g, sample_latent(1, 11));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(GenerateNoise, ConvWeightsInitializedWithStd002) {
  const GeneratorNet g = make_generator(100, {3, 32, 32}, 3);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const nn::Parameter* p : g.net.parameters()) {
    if (!p->prunable) continue;
    for (double v : p->value.values()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  EXPECT_NEAR(std::sqrt(sq / n - (sum / n) * (sum / n)), 0.02, 0.001);
}

TEST(GenerateNoise, ParameterGradientMatchesFiniteDifferences) {
  GeneratorNet g = make_generator(12, {3, 8, 8}, 7);
  const auto z = sample_latent(3, 12);
  g.net.zero_grad();
  const Tensor out = generate_noise_train(g, z);
  generate_noise_backward(g, Tensor(out.shape(), 1.0 / static_cast<double>(out.size())));
  std::vector<double> analytic;
  for (const nn::Parameter* p : g.net.parameters()) analytic.insert(analytic.end(), p->grad.values().begin(), p->grad.values().end());
  const std::vector<double> theta = g.net.flat_parameters();
  const auto mean_out = [&](const std::vector<double>& params) {
    GeneratorNet copy = g;
    copy.net.set_flat_parameters(params);
    const Tensor o = generate_noise(copy, z);
    double s = 0.0;
    for (double v : o.values()) s += v;
    return s / static_cast<double>(o.size());
  };
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> pick(0, theta.size() - 1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t i = pick(rng);
    auto up = theta, down = theta;
    const double h = 1e-5;
    up[i] += h;
    down[i] -= h;
    const double fd = (mean_out(up) - mean_out(down)) / (2 * h);
    EXPECT_LE(oracle::relative_error(analytic[i], fd, 1e-7), 1e-3) << "parameter " << i;
  }
}

TEST(GenerateNoise, SerializationRoundTrip) {
  const GeneratorNet g = make_generator(16, {3, 16, 16}, 5);
  const GeneratorNet r = restore_generator(g.architecture_tag, 16, {3, 16, 16}, serialize_weights(g));
  const auto z = sample_latent(1, 16);
  EXPECT_EQ(generate_noise(r, z), generate_noise(g, z));
  EXPECT_THROW(restore_generator("unknown-arch", 16, {3, 16, 16}, serialize_weights(g)), Error);
}

TEST(DirectNoise, IgnoresLatentAndStaysInRange) {
  const GeneratorNet g = make_direct_noise({3, 8, 8}, 2);
  EXPECT_EQ(g.architecture_tag, kDirectArchitecture);
  const Tensor a = generate_noise(g, {});
  EXPECT_EQ(a.shape(), (Shape{3, 8, 8}));
  for (double v : a.values()) EXPECT_LT(std::abs(v), 1.0);
}

TEST(ClipNoise, PerturbationClampValues) {
  const double eps = 10.0 / 255.0;
  Tensor raw({4}, std::vector<double>{0.1, -0.1, 0.01, -0.02});
  const Tensor c = clip_noise(raw, AttackMode::kPerturbation, eps);
  EXPECT_DOUBLE_EQ(c[0], eps);
  EXPECT_DOUBLE_EQ(c[1], -eps);
  EXPECT_NEAR(c[0], 0.0392156862745098, 1e-15);
  EXPECT_EQ(c[2], 0.01);
  EXPECT_EQ(c[3], -0.02);
}

TEST(ClipNoise, IdempotentAndBounded) {
  const double eps = 10.0 / 255.0;
  const Tensor raw = oracle::uniform({3, 16, 16}, 4, -1.0, 1.0);
  const Tensor once = clip_noise(raw, AttackMode::kPerturbation, eps);
  EXPECT_LE(once.max_abs(), eps);
  EXPECT_EQ(clip_noise(once, AttackMode::kPerturbation, eps), once);
  const Tensor small = oracle::uniform({3, 4, 4}, 5, -eps, eps);
  EXPECT_EQ(clip_noise(small, AttackMode::kPerturbation, eps), small);
}

TEST(ClipNoise, PatchAffineMap) {
  const Tensor raw({3}, std::vector<double>{0.0, -1.0, 1.0});
  const Tensor c = clip_noise(raw, AttackMode::kPatch, 0.0);
  EXPECT_EQ(c[0], 0.5);
  EXPECT_EQ(c[1], 0.0);
  EXPECT_EQ(c[2], 1.0);
}

TEST(ClipNoise, RejectsNonPositiveEpsilon) {
  EXPECT_THROW(clip_noise(Tensor({2}), AttackMode::kPerturbation, 0.0), Error);
}

TEST(ClipNoise, BackwardIsTheClampDerivative) {
  const double eps = 0.1;
  const Tensor raw({4}, std::vector<double>{0.05, 0.2, -0.3, -0.01});
  const Tensor g = clip_noise_backward(raw, Tensor({4}, 1.0), AttackMode::kPerturbation, eps);
  EXPECT_EQ(g, Tensor({4}, std::vector<double>{1, 0, 0, 1}));
  const Tensor gp = clip_noise_backward(raw, Tensor({4}, 1.0), AttackMode::kPatch, eps);
  for (double v : gp.values()) EXPECT_EQ(v, 0.5);
}
