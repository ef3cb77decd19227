#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <cstdint>
#include <functional>
#include <set>

#include "advenc/config.hpp"
#include "advenc/digest.hpp"
#include "advenc/error.hpp"
#include "advenc/tensor.hpp"
#include "advenc/types.hpp"

using namespace advenc;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no advenc::Error thrown";
  return ErrorCode::kIo;
}

NoiseArtifact perturbation_artifact() {
  NoiseArtifact a;
  a.delta = Tensor({3, 64, 64}, 0.01);
  a.mask = Tensor({64, 64}, 1.0);
  return a;
}

}  // namespace

TEST(Config, DefaultsMatchDocumentedValues) {
  const AttackConfig c;
  EXPECT_EQ(c.mode, AttackMode::kPerturbation);
  EXPECT_DOUBLE_EQ(c.epsilon, 10.0 / 255.0);
  EXPECT_DOUBLE_EQ(c.patch_fraction, 0.03);
  EXPECT_EQ(c.patch_position, PatchPosition::kBottomRight);
  EXPECT_EQ(c.alpha, 1.0);
  EXPECT_EQ(c.beta, 5.0);
  EXPECT_EQ(c.lambda, 1.0);
  EXPECT_EQ(c.latent_dim, 100u);
  EXPECT_EQ(c.epochs, 20u);
  EXPECT_EQ(c.batch_size, 256u);
  EXPECT_DOUBLE_EQ(c.learning_rate, 0.0002);
  EXPECT_EQ(c.seed, 100);
  EXPECT_EQ(c.image_shape, (ImageShape{3, 64, 64}));
}

TEST(Config, DefaultAcceptedUnchangedAndIdempotent) {
  const AttackConfig c;
  const AttackConfig v = validate_config(c);
  EXPECT_EQ(v, c);
  EXPECT_EQ(validate_config(v), v);
}

TEST(Config, BudgetBoundaries) {
  AttackConfig c;
  c.epsilon = 0.0;
  EXPECT_EQ(code_of([&] { validate_config(c); }), ErrorCode::kBudgetOutOfRange);
  c.epsilon = 1.0 + 1e-12;
  EXPECT_EQ(code_of([&] { validate_config(c); }), ErrorCode::kBudgetOutOfRange);
  c.epsilon = 1.0;
  EXPECT_NO_THROW(validate_config(c));
  c.mode = AttackMode::kPatch;
  c.epsilon = 0.0;
  EXPECT_NO_THROW(validate_config(c)) << "epsilon is ignored for patches";
}

TEST(Config, FractionBoundaries) {
  AttackConfig c;
  c.mode = AttackMode::kPatch;
  c.patch_fraction = 1.5;
  EXPECT_EQ(code_of([&] { validate_config(c); }), ErrorCode::kFractionOutOfRange);
  c.patch_fraction = 0.0;
  EXPECT_EQ(code_of([&] { validate_config(c); }), ErrorCode::kFractionOutOfRange);
  c.mode = AttackMode::kPerturbation;
  EXPECT_NO_THROW(validate_config(c)) << "fraction is ignored for perturbations";
}

TEST(Config, NonPositiveCountsAndTemperature) {
  const std::vector<std::function<void(AttackConfig&)>> breakers = {
      [](AttackConfig& c) { c.tau = 0.0; },       [](AttackConfig& c) { c.epochs = 0; },
      [](AttackConfig& c) { c.batch_size = 0; },  [](AttackConfig& c) { c.latent_dim = 0; },
      [](AttackConfig& c) { c.alpha = -1.0; },    [](AttackConfig& c) { c.beta = -0.5; },
      [](AttackConfig& c) { c.lambda = -2.0; },   [](AttackConfig& c) { c.learning_rate = 0.0; }};
  for (const auto& brk : breakers) {
    AttackConfig c;
    brk(c);
    EXPECT_EQ(code_of([&] { validate_config(c); }), ErrorCode::kInvalidParameter);
  }
}

TEST(Config, CanonicalTextRoundTrip) {
  AttackConfig c;
  c.mode = AttackMode::kPatch;
  c.epsilon = 8.0 / 255.0;
  c.patch_position = PatchPosition::kRandomFixed;
  c.beta = 0.0;
  c.image_shape = {3, 32, 32};
  c.use_generator = false;
  EXPECT_EQ(parse_config_text(to_canonical_text(c)), c);
}

TEST(Config, ParsesFractionsCommentsAndRejectsUnknownKeys) {
  const AttackConfig c = parse_config_text("# budget\nepsilon = 10/255\nmode = patch\n");
  EXPECT_DOUBLE_EQ(c.epsilon, 10.0 / 255.0);
  EXPECT_EQ(c.mode, AttackMode::kPatch);
  EXPECT_EQ(code_of([] { parse_config_text("epsilon_typo = 1\n"); }), ErrorCode::kUnknownKey);
  EXPECT_EQ(code_of([] { parse_config_text("epochs = many\n"); }), ErrorCode::kParseError);
}

TEST(Config, LoadsFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "advenc_test_config.txt";
  std::ofstream(path) << "beta = 0\nseed = 7\n";
  const AttackConfig c = load_config_file(path);
  EXPECT_EQ(c.beta, 0.0);
  EXPECT_EQ(c.seed, 7);
  std::filesystem::remove(path);
  EXPECT_EQ(code_of([&] { load_config_file(path); }), ErrorCode::kMissingFile);
}

TEST(Config, DigestDependsOnEveryField) {
  const AttackConfig base;
  EXPECT_EQ(config_digest(base), config_digest(AttackConfig{}));
  const std::vector<std::function<void(AttackConfig&)>> changes = {
      [](AttackConfig& c) { c.mode = AttackMode::kPatch; },
      [](AttackConfig& c) { c.epsilon = 8.0 / 255.0; },
      [](AttackConfig& c) { c.patch_fraction = 0.05; },
      [](AttackConfig& c) { c.patch_position = PatchPosition::kRandomFixed; },
      [](AttackConfig& c) { c.alpha = 2.0; },
      [](AttackConfig& c) { c.beta = 0.0; },
      [](AttackConfig& c) { c.lambda = 0.5; },
      [](AttackConfig& c) { c.tau = 0.2; },
      [](AttackConfig& c) { c.latent_dim = 64; },
      [](AttackConfig& c) { c.epochs = 21; },
      [](AttackConfig& c) { c.batch_size = 64; },
      [](AttackConfig& c) { c.learning_rate = 0.001; },
      [](AttackConfig& c) { c.seed = 101; },
      [](AttackConfig& c) { c.image_shape = {3, 32, 32}; },
      [](AttackConfig& c) { c.hfc_cutoff = 0.3; },
      [](AttackConfig& c) { c.use_generator = false; }};
  std::set<std::string> digests = {config_digest(base)};
  for (const auto& change : changes) {
    AttackConfig c;
    change(c);
    EXPECT_TRUE(digests.insert(config_digest(c)).second);
  }
}

TEST(Config, PatchSide) {
  AttackConfig c;
  EXPECT_EQ(c.patch_side(), 11u);
  c.patch_fraction = 1.0;
  EXPECT_EQ(c.patch_side(), 64u);
}

TEST(ImageShapeText, RoundTrip) {
  EXPECT_EQ(to_string(ImageShape{3, 64, 64}), "3x64x64");
  EXPECT_EQ(parse_image_shape("1x32x16"), (ImageShape{1, 32, 16}));
  EXPECT_EQ(code_of([] { parse_image_shape("3x64"); }), ErrorCode::kParseError);
}

TEST(Digest, KnownVectors) {
  EXPECT_EQ(sha256_hex(std::string_view("abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(std::string_view("")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Tensor, SliceGatherStack) {
  Tensor t({3, 2}, std::vector<double>{0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.slice(1, 3), Tensor({2, 2}, std::vector<double>{2, 3, 4, 5}));
  const std::vector<std::size_t> idx = {2, 0};
  EXPECT_EQ(t.gather(idx), Tensor({2, 2}, std::vector<double>{4, 5, 0, 1}));
  const std::vector<Tensor> parts = {Tensor({2}, 1.0), Tensor({2}, 2.0)};
  EXPECT_EQ(stack(parts), Tensor({2, 2}, std::vector<double>{1, 1, 2, 2}));
  EXPECT_EQ(code_of([] { Tensor({2, 2}, std::vector<double>{1, 2, 3}); }), ErrorCode::kShapeMismatch);
}

TEST(NoiseArtifactInvariants, Perturbation) {
  NoiseArtifact a = perturbation_artifact();
  EXPECT_NO_THROW(check_invariants(a));
  a.delta[5] = a.config.epsilon * 1.0001;
  EXPECT_EQ(code_of([&] { check_invariants(a); }), ErrorCode::kBudgetOutOfRange);
  a = perturbation_artifact();
  a.mask[0] = 0.0;
  EXPECT_EQ(code_of([&] { check_invariants(a); }), ErrorCode::kInvalidParameter);
  a = perturbation_artifact();
  a.delta = Tensor({3, 32, 32});
  EXPECT_EQ(code_of([&] { check_invariants(a); }), ErrorCode::kShapeMismatch);
}

TEST(NoiseArtifactInvariants, Patch) {
  NoiseArtifact a;
  a.mode = AttackMode::kPatch;
  a.config.mode = AttackMode::kPatch;
  a.delta = Tensor({3, 64, 64}, 0.5);
  a.mask = Tensor({64, 64}, 0.0);
  a.patch_row = a.patch_col = 53;
  a.patch_side = 11;
  for (std::size_t r = 53; r < 64; ++r) {
    for (std::size_t c = 53; c < 64; ++c) a.mask[r * 64 + c] = 1.0;
  }
  EXPECT_NO_THROW(check_invariants(a));
  NoiseArtifact b = a;
  b.delta[0] = 1.5;
  EXPECT_EQ(code_of([&] { check_invariants(b); }), ErrorCode::kBudgetOutOfRange);
  b = a;
  b.mask[0] = 1.0;
  EXPECT_EQ(code_of([&] { check_invariants(b); }), ErrorCode::kInvalidParameter);
  b = a;
  b.patch_side = 0;
  EXPECT_EQ(code_of([&] { check_invariants(b); }), ErrorCode::kDegeneratePatch);
}

TEST(Roles, Names) {
  EXPECT_EQ(to_string(DatasetRoleKind::kSurrogate), "surrogate");
  EXPECT_EQ(to_string(Split::kTest), "test");
  const DatasetRole r{DatasetRoleKind::kPretraining, "cifar10", Split::kTrain, 10};
  EXPECT_EQ(r.class_count, 10u);
}

TEST(Tensor, StorageIs64ByteAligned) {
  for (std::size_t n : {1u, 3u, 17u, 4096u}) {
    const Tensor t({n}, 1.0);
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.data()) % 64, 0u);
    const Tensor copy = t.reshaped({n, 1});
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(copy.data()) % 64, 0u);
  }
}
