#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "advenc/data.hpp"
#include "advenc/encoders.hpp"
#include "advenc/error.hpp"
#include "oracles.hpp"

using namespace advenc;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no advenc::Error thrown";
  return ErrorCode::kIo;
}

const Dataset& pretrain() {
  static const Dataset d = resolve_dataset("synthetic:512:11", {3, 32, 32});
  return d;
}

}  // namespace

TEST(EncoderHandle, IdsFollowWeightsAndProvenance) {
  const EncoderHandle a = random_toy_encoder({3, 32, 32}, 1);
  const EncoderHandle b = random_toy_encoder({3, 32, 32}, 1);
  const EncoderHandle c = random_toy_encoder({3, 32, 32}, 2);
  EXPECT_EQ(a.id(), b.id());
  EXPECT_NE(a.id(), c.id());
  EXPECT_EQ(a.id().rfind(kToyEncoderArchitecture, 0), 0u);
  EXPECT_EQ(a.feature_dim(), 128u);
}

TEST(EncoderHandle, SaveLoadRoundTrip) {
  const EncoderHandle a = random_toy_encoder({3, 32, 32}, 3);
  const fs::path dir = fs::temp_directory_path() / "advenc_enc_roundtrip";
  fs::remove_all(dir);
  save_encoder(a, dir);
  const EncoderHandle b = load_encoder(dir);
  EXPECT_EQ(b.id(), a.id());
  EXPECT_EQ(b.input_shape(), a.input_shape());
  const Tensor x = oracle::uniform({2, 3, 32, 32}, 4);
  EXPECT_EQ(b.forward(x), a.forward(x));
  fs::remove_all(dir);
  EXPECT_EQ(code_of([&] { load_encoder(dir); }), ErrorCode::kMissingFile);
}

TEST(EncodeBatch, NormalizedDeterministicAndPermutationEquivariant) {
  const EncoderHandle e = random_toy_encoder({3, 32, 32}, 5);
  const Tensor x = oracle::uniform({5, 3, 32, 32}, 6);
  const FeatureBatch f = encode_batch(e, x, true);
  ASSERT_EQ(f.size(), 5u);
  ASSERT_EQ(f.dim(), 128u);
  EXPECT_TRUE(f.normalized);
  for (std::size_t i = 0; i < 5; ++i) {
    double n = 0.0;
    for (std::size_t j = 0; j < 128; ++j) n += f.rows[i * 128 + j] * f.rows[i * 128 + j];
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
  }
  EXPECT_EQ(encode_batch(e, x, true).rows, f.rows);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  const FeatureBatch p = encode_batch(e, x.gather(perm), true);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 128; ++j) ASSERT_NEAR(p.rows[i * 128 + j], f.rows[perm[i] * 128 + j], 1e-12);
  }
  EXPECT_EQ(code_of([&] { encode_batch(e, Tensor({1, 3, 16, 16}, 0.5), true); }), ErrorCode::kShapeMismatch);
}

TEST(Contrastive, DeterministicAndOneEpochLowersProbeLoss) {
  const TrainedEncoder a = train_toy_encoder(pretrain(), ContrastiveMethod::kSimclrStyle, 7, 1, 64);
  const TrainedEncoder b = train_toy_encoder(pretrain(), ContrastiveMethod::kSimclrStyle, 7, 1, 64);
  EXPECT_EQ(a.encoder.id(), b.encoder.id());
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_EQ(a.step_losses.size(), 8u);
  EXPECT_LT(a.probe_loss_after, a.probe_loss_before);
  EXPECT_EQ(a.encoder.provenance().epochs, 1u);
  EXPECT_EQ(code_of([] { train_toy_encoder(pretrain().head(100), ContrastiveMethod::kSimclrStyle, 7, 1, 64); }),
            ErrorCode::kInvalidParameter);
}

TEST(LinearProbe, SeparatesOneHotFeatures) {
  const std::size_t classes = 4, n = 200;
  Tensor features({n, classes}, 0.0);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % classes);
    features[i * classes + i % classes] = 1.0;
  }
  ProbeOptions o;
  o.epochs = 30;
  const DownstreamHead h = fit_linear_head("toy", features, labels, classes, o);
  EXPECT_GE(accuracy(h.predict_features(features), labels), 0.99);
}

TEST(LinearProbe, ZeroEpochsIsTheInitialization) {
  Tensor features = oracle::uniform({40, 6}, 8);
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < 40; ++i) labels[i] = static_cast<int>(i % 2);
  ProbeOptions o;
  o.epochs = 0;
  const DownstreamHead a = fit_linear_head("toy", features, labels, 2, o);
  o.epochs = 1;
  const DownstreamHead b = fit_linear_head("toy", features, labels, 2, o);
  o.epochs = 0;
  EXPECT_EQ(fit_linear_head("toy", features, labels, 2, o).linear().flat_parameters(), a.linear().flat_parameters());
  EXPECT_NE(b.linear().flat_parameters(), a.linear().flat_parameters());
  std::vector<int> single(40, 1);
  EXPECT_EQ(code_of([&] { fit_linear_head("toy", features, single, 2, o); }), ErrorCode::kSingleClass);
}

TEST(LinearProbe, BoundToItsEncoder) {
  const EncoderHandle e = random_toy_encoder({3, 32, 32}, 1);
  const EncoderHandle other = random_toy_encoder({3, 32, 32}, 2);
  const Dataset d = resolve_dataset("synthetic:64:3", {3, 32, 32});
  ProbeOptions o;
  o.epochs = 1;
  const DownstreamHead h = train_linear_probe(e, d, o);
  EXPECT_EQ(h.encoder_id(), e.id());
  EXPECT_EQ(h.predict(e, d.images).size(), 64u);
  EXPECT_EQ(code_of([&] { h.predict(other, d.images); }), ErrorCode::kEncoderMismatch);
}

TEST(LinearProbe, TrainedEncoderBeatsChance) {
  const Dataset train = resolve_dataset("synthetic:400:12", {3, 32, 32});
  const Dataset test = resolve_dataset("synthetic:200:13", {3, 32, 32});
  const EncoderHandle e = random_toy_encoder({3, 32, 32}, 1);
  ProbeOptions o;
  o.epochs = 20;
  const DownstreamHead h = train_linear_probe(e, train, o);
  EXPECT_GT(accuracy(h.predict(e, test.images), test.labels), 1.5 / static_cast<double>(train.class_count));
}

TEST(Accuracy, Examples) {
  EXPECT_EQ(accuracy({1, 2, 3, 4}, {1, 2, 0, 4}), 0.75);
  EXPECT_THROW(accuracy({1}, {1, 2}), Error);
}
