#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "advenc/attack.hpp"
#include "advenc/defenses.hpp"
#include "advenc/error.hpp"
#include "oracles.hpp"

using namespace advenc;

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

const ImageShape kShape{3, 32, 32};

}  // namespace

TEST(Corruption, ZeroSigmaIsIdentity) {
  const Tensor x = oracle::uniform({4, 3, 8, 8}, 1);
  EXPECT_EQ(gaussian_corrupt(x, 0.0, 5), x);
  EXPECT_EQ(code_of([&] { gaussian_corrupt(x, -0.1, 5); }), ErrorCode::kInvalidParameter);
}

TEST(Corruption, NoiseStatisticsAndReproducibility) {
  const Tensor x({1000000}, 0.5);
  const Tensor y = gaussian_corrupt(x, 0.03, 9);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - 0.5;
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(y.size());
  EXPECT_NEAR(std::sqrt(sq / n - (sum / n) * (sum / n)), 0.03, 0.03 * 0.02);
  EXPECT_EQ(gaussian_corrupt(x, 0.03, 9), y);
  EXPECT_NE(gaussian_corrupt(x, 0.03, 10), y);
  const Tensor edge({1000}, 1.0);
  EXPECT_LE(gaussian_corrupt(edge, 0.5, 1).max_abs(), 1.0);
}

TEST(Prune, HandExample) {
  const std::vector<double> w = {1, -2, 3, -4};
  EXPECT_EQ(prune_magnitudes(w, 0.5), (std::vector<double>{0, 0, 3, -4}));
  EXPECT_EQ(prune_magnitudes(w, 0.0), w);
  EXPECT_EQ(prune_magnitudes(w, 1.0), (std::vector<double>{0, 0, 0, 0}));
  const std::vector<double> ties = {1, -1, 1, 2};
  EXPECT_EQ(prune_magnitudes(ties, 0.5), (std::vector<double>{0, 0, 1, 2}));
}

TEST(Prune, ExactZeroCountsAndNewIds) {
  const EncoderHandle e = random_toy_encoder(kShape, 3);
  const std::size_t n = prunable_count(e);
  ASSERT_GT(n, 0u);
  EXPECT_EQ(zero_prunable_count(e), 0u);
  for (double rate : {0.1, 0.3, 0.5, 0.7}) {
    const EncoderHandle p = prune_encoder(e, rate);
    EXPECT_EQ(zero_prunable_count(p), static_cast<std::size_t>(std::floor(rate * static_cast<double>(n)))) << rate;
    EXPECT_NE(p.id(), e.id());
    EXPECT_EQ(p.provenance().parent_id, e.id());
  }
  EXPECT_NE(prune_encoder(e, 0.0).id(), e.id());
  EXPECT_EQ(prune_encoder(e, 0.0).weights_digest(), e.weights_digest());
}

TEST(Finetune, ZeroEpochsKeepsWeightsOneEpochMovesThem) {
  const EncoderHandle e = random_toy_encoder(kShape, 4);
  const Dataset d = resolve_dataset("synthetic:128:5", kShape);
  const FinetuneResult none = finetune_encoder(e, d, 0, 1e-3, 1e-2, 1);
  EXPECT_EQ(none.encoder.network().flat_parameters(), e.network().flat_parameters());
  EXPECT_NE(none.encoder.id(), e.id());
  EXPECT_EQ(none.head.encoder_id(), none.encoder.id());
  const FinetuneResult one = finetune_encoder(e, d, 1, 1e-3, 1e-2, 1);
  EXPECT_NE(one.encoder.network().flat_parameters(), e.network().flat_parameters());
  EXPECT_EQ(code_of([&] { finetune_encoder(e, d.head(0), 1, 1e-3, 1e-2, 1); }), ErrorCode::kEmptyInput);
}

TEST(AdversarialTraining, PgdIteratesStayInBudget) {
  const Dataset d = resolve_dataset("synthetic:512:6", kShape);
  ContrastiveOptions o;
  o.epochs = 1;
  o.batch_size = 128;
  o.pgd_steps = 3;
  o.pgd_epsilon = 8.0 / 255.0;
  std::size_t calls = 0;
  o.on_pgd_iterate = [&](const Tensor& view, const Tensor& adv) {
    ++calls;
    ASSERT_EQ(view.shape(), adv.shape());
    for (std::size_t i = 0; i < view.size(); ++i) {
      ASSERT_LE(std::abs(adv[i] - view[i]), o.pgd_epsilon + 1e-12);
      ASSERT_GE(adv[i], 0.0);
      ASSERT_LE(adv[i], 1.0);
    }
  };
  train_contrastive(d, o);
  EXPECT_EQ(calls, 4u * 3u);
}

TEST(AdversarialTraining, ZeroStepsIsPlainTraining) {
  const Dataset d = resolve_dataset("synthetic:512:7", kShape);
  const EncoderHandle a = adversarial_train(d, 0, 0.0, 1, 8, 128);
  const EncoderHandle b = train_toy_encoder(d, ContrastiveMethod::kSimclrStyle, 8, 1, 128).encoder;
  EXPECT_EQ(a.network().flat_parameters(), b.network().flat_parameters());
}

TEST(DefenseSpec, ParsingAndValidation) {
  EXPECT_EQ(parse_defense_kind("prune"), DefenseKind::kPrune);
  EXPECT_EQ(to_string(parse_defense_kind("adversarial_training")), "adversarial_training");
  EXPECT_EQ(code_of([] { parse_defense_kind("magic"); }), ErrorCode::kParseError);
  DefenseSpec s;
  s.kind = DefenseKind::kPrune;
  s.prune_rate = 1.5;
  EXPECT_THROW(validate(s), Error);
  s.prune_rate = 0.3;
  EXPECT_EQ(s.parameter(), 0.3);
}

TEST(RunDefense, ZeroSigmaReproducesUndefendedReport) {
  const Dataset train = resolve_dataset("synthetic:200:41", kShape);
  const Dataset test = resolve_dataset("synthetic:100:42", kShape);
  const EncoderHandle e = random_toy_encoder(kShape, 1);
  ProbeOptions po;
  po.epochs = 5;
  const DownstreamHead h = train_linear_probe(e, train, po);
  AttackConfig c;
  c.image_shape = kShape;
  c.epochs = 1;
  c.batch_size = 32;
  c.latent_dim = 8;
  const NoiseArtifact a = train_advencoder(c, e, resolve_dataset("synthetic:64:43", kShape));
  DefenseInputs in;
  in.artifact = &a;
  in.encoder = &e;
  in.head = &h;
  in.downstream_train = &train;
  in.downstream_test = &test;
  in.eval.probe = po;
  DefenseSpec s;
  const EvalReport d = run_defense(s, in);
  const EvalReport base = evaluate_attack(a, e, h, test, in.eval);
  EXPECT_EQ(d.attack_success_rate, base.attack_success_rate);
  EXPECT_EQ(d.clean_accuracy, base.clean_accuracy);
  EXPECT_EQ(d.malicious_accuracy, base.malicious_accuracy);
  EXPECT_EQ(d.defense_kind, "corruption");
  EXPECT_EQ(d.defense_param, 0.0);
  s.kind = DefenseKind::kPrune;
  s.prune_rate = 0.3;
  const EvalReport p = run_defense(s, in);
  EXPECT_EQ(p.defense_kind, "prune");
  EXPECT_NE(p.encoder_id, e.id());
}
