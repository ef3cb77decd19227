#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "advenc/data.hpp"
#include "advenc/encoders.hpp"
#include "advenc/losses.hpp"
#include "advenc/types.hpp"

namespace advenc {

struct PredictionRecord {
  std::vector<int> true_label;
  std::vector<int> clean_prediction;
  std::vector<int> adversarial_prediction;
  std::size_t class_count = 0;

  std::size_t size() const { return true_label.size(); }
};

/// Equal lengths and labels within [0, class_count) (class_count 0 skips the range check).
void validate(const PredictionRecord& records);

/// Flipped clean-correct samples over clean-correct samples. Throws kEmptyInput
/// when no sample is clean-correct.
double attack_success_rate(const PredictionRecord& records);
/// Adversarial accuracy over all samples.
double malicious_accuracy(const PredictionRecord& records);
double clean_accuracy(const PredictionRecord& records);
/// Samples whose adversarial prediction differs from the clean one, over all samples.
double flip_rate(const PredictionRecord& records);

/// AP@k = sum of precision@i at the hits / min(k, total_relevant); k is the list length.
double retrieval_average_precision(std::span<const unsigned char> ranked_relevance, std::size_t total_relevant);

struct MapResult {
  std::map<std::size_t, double> table;
  /// Some k exceeded the number of rankable gallery items and was cut down to it.
  bool truncated = false;
};

inline constexpr std::ptrdiff_t kNoExclusion = -1;

/// Ranks the gallery by descending cosine similarity per query (ties by gallery
/// index ascending), relevance = label equality, averages AP@k over queries.
/// `exclude[i]`, when given, is a gallery index removed from query i's ranking.
MapResult retrieval_map_suite(const FeatureBatch& queries, std::span<const int> query_labels,
                              const FeatureBatch& gallery, std::span<const int> gallery_labels,
                              std::span<const std::size_t> ks, std::span<const std::ptrdiff_t> exclude = {});

/// Same budget, no optimization: uniform [-eps, eps] offsets for perturbations,
/// uniform [0, 1] colours under the same mask for patches.
NoiseArtifact random_noise_control(const NoiseArtifact& artifact, std::int64_t seed);

PredictionRecord predict_pair(const NoiseArtifact& artifact, const EncoderHandle& encoder, const DownstreamHead& head,
                              const Dataset& data);

/// Entry (a, e) is the ASR of artifact a through encoder e and heads[e].
std::vector<std::vector<double>> transfer_matrix(std::span<const NoiseArtifact> artifacts,
                                                 std::span<const EncoderHandle> encoders,
                                                 std::span<const DownstreamHead> heads, const Dataset& downstream);

struct EvalOptions {
  std::int64_t seed = 100;
  bool asr_over_all_samples = false;
  /// Retrieval: adversarial test images queried against the clean test set.
  bool retrieval = false;
  std::string setting;
  ProbeOptions probe{};
};

EvalReport evaluate_attack(const NoiseArtifact& artifact, const EncoderHandle& encoder, const DownstreamHead& head,
                           const Dataset& downstream_test, const EvalOptions& options);

}  // namespace advenc
