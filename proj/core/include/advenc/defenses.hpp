#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "advenc/data.hpp"
#include "advenc/encoders.hpp"
#include "advenc/evaluation.hpp"
#include "advenc/types.hpp"

namespace advenc {

enum class DefenseKind { kCorruption, kFinetune, kPrune, kAdversarialTraining };

std::string_view to_string(DefenseKind kind);
DefenseKind parse_defense_kind(std::string_view text);

struct DefenseSpec {
  DefenseKind kind = DefenseKind::kCorruption;
  double sigma = 0.0;
  std::size_t epochs = 0;
  double lr_body = 1e-3;
  double lr_head = 1e-2;
  double prune_rate = 0.0;
  std::size_t pgd_steps = 0;
  double pgd_epsilon = 0.0;
  std::int64_t seed = 100;

  /// The swept parameter of this kind (sigma, epochs, rate or PGD epsilon).
  double parameter() const;
};

/// sigma >= 0, prune_rate in [0, 1], pgd_epsilon > 0 when pgd_steps > 0.
void validate(const DefenseSpec& spec);

/// clamp(x + N(0, sigma^2), 0, 1) from `seed`; sigma = 0 returns x unchanged.
Tensor gaussian_corrupt(const Tensor& x, double sigma, std::int64_t seed);

/// Zeros the floor(rate * n) smallest-magnitude entries (ties by position).
std::vector<double> prune_magnitudes(std::span<const double> weights, double rate);
/// Global unstructured magnitude pruning over conv and linear weights.
EncoderHandle prune_encoder(const EncoderHandle& handle, double rate);
std::size_t prunable_count(const EncoderHandle& handle);
std::size_t zero_prunable_count(const EncoderHandle& handle);

struct FinetuneResult {
  EncoderHandle encoder;
  DownstreamHead head;
};

/// Trains encoder and a fresh linear head jointly by cross-entropy, with
/// separate learning rates for body and head.
FinetuneResult finetune_encoder(const EncoderHandle& handle, const Dataset& labeled, std::size_t epochs,
                                double lr_body, double lr_head, std::int64_t seed, std::size_t batch_size = 64);

/// Contrastive pre-training with the second view of every pair replaced by a
/// PGD iterate (step 2.5 eps / steps, random start).
EncoderHandle adversarial_train(const Dataset& data, std::size_t pgd_steps, double pgd_epsilon, std::size_t epochs,
                                std::int64_t seed, std::size_t batch_size = 128);

/// Probe accuracy under a one-step sign-gradient attack on the cross-entropy.
double sign_gradient_accuracy(const EncoderHandle& encoder, const DownstreamHead& head, const Dataset& data,
                              double epsilon);

struct DefenseInputs {
  const NoiseArtifact* artifact = nullptr;
  const EncoderHandle* encoder = nullptr;
  /// Probe of `encoder`, reused by the corruption defense.
  const DownstreamHead* head = nullptr;
  const Dataset* downstream_train = nullptr;
  const Dataset* downstream_test = nullptr;
  /// Pre-training data, needed for adversarial training only.
  const Dataset* pretraining = nullptr;
  EvalOptions eval{};
};

/// Applies the defense and re-evaluates the unchanged artifact. Corruption
/// noises the test inputs (clean and adversarial) and keeps the probe; pruning
/// and adversarial training retrain the probe on the new encoder; fine-tuning
/// uses its own head.
EvalReport run_defense(const DefenseSpec& spec, const DefenseInputs& inputs);

}  // namespace advenc
