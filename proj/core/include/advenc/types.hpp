#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "advenc/config.hpp"
#include "advenc/tensor.hpp"

namespace advenc {

enum class DatasetRoleKind { kPretraining, kSurrogate, kDownstream };
enum class Split { kTrain, kTest };

/// Which part a dataset plays in a run. Surrogate and downstream data need not
/// overlap with each other or with the pre-training data.
struct DatasetRole {
  DatasetRoleKind role = DatasetRoleKind::kDownstream;
  std::string name;
  Split split = Split::kTrain;
  std::size_t class_count = 10;
};

std::string_view to_string(DatasetRoleKind role);
std::string_view to_string(Split split);

/// The trained universal noise together with everything needed to apply it
/// and to trace where it came from.
struct NoiseArtifact {
  AttackMode mode = AttackMode::kPerturbation;
  /// C x H x W. Perturbation: offsets in [-epsilon, epsilon]. Patch: absolute
  /// colours in [0, 1] for the whole image, before the mask is applied.
  Tensor delta;
  /// H x W of 0/1; all ones in perturbation mode.
  Tensor mask;
  std::size_t patch_row = 0;
  std::size_t patch_col = 0;
  std::size_t patch_side = 0;
  std::vector<double> latent;
  /// Serialized generator parameters (empty when the noise was optimized directly).
  std::string generator_weights;
  AttackConfig config;
  std::string config_digest;
  /// L_G on a fixed probe batch: once before training, then after every epoch.
  std::vector<double> loss_trace;
  std::string encoder_id;
  std::string surrogate_name;
};

/// Checks the mode-specific invariants (budget, mask geometry); throws on violation.
void check_invariants(const NoiseArtifact& artifact);

inline constexpr std::size_t kRetrievalKs[] = {1, 5, 10, 20, 50, 100};

struct EvalReport {
  double clean_accuracy = 0.0;
  double malicious_accuracy = 0.0;
  double attack_success_rate = 0.0;
  /// Fraction of all samples whose prediction changed; the alternative ASR denominator.
  double flip_rate = 0.0;
  /// ASR of a uniform random noise with the same budget (or patch area).
  double random_noise_asr = 0.0;
  /// k -> mAP; empty unless retrieval was evaluated.
  std::map<std::size_t, double> map_table;
  /// True when some k exceeded the gallery size and was truncated.
  bool k_truncated = false;
  bool asr_over_all_samples = false;

  std::string encoder_id;
  std::string surrogate_name;
  std::string downstream_name;
  AttackMode mode = AttackMode::kPerturbation;
  std::int64_t seed = 100;
  double epsilon = 0.0;
  double patch_fraction = 0.0;
  /// Free-form setting label (e.g. "S1", "beta=0").
  std::string setting;
  std::string defense_kind = "none";
  double defense_param = 0.0;
  std::size_t probe_epochs = 0;
  double probe_lr = 0.0;
  double tau = 0.0;
};

}  // namespace advenc
