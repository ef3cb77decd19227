#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "advenc/config.hpp"
#include "advenc/data.hpp"
#include "advenc/losses.hpp"
#include "advenc/nn.hpp"

namespace advenc {

inline constexpr const char* kToyEncoderArchitecture = "toyconv4-v1";

struct EncoderProvenance {
  std::string method = "simclr_style";
  std::string dataset;
  std::int64_t seed = 0;
  std::size_t epochs = 0;
  /// Id of the encoder this one was derived from (pruning, fine-tuning), if any.
  std::string parent_id;
  std::string notes;
};

/// A frozen feature extractor. Handles are immutable: the network is shared
/// read-only and every forward pass is a pure function, so handles can be
/// copied freely and used from several threads.
class EncoderHandle {
 public:
  EncoderHandle(std::string architecture, nn::Sequential backbone, ImageShape input_shape,
                std::vector<std::size_t> widths, EncoderProvenance provenance);

  /// architecture-<12 hex digits over weight digest, method and parent id>.
  const std::string& id() const { return id_; }
  const std::string& architecture() const { return architecture_; }
  const ImageShape& input_shape() const { return input_shape_; }
  std::size_t feature_dim() const { return widths_.back(); }
  const std::vector<std::size_t>& widths() const { return widths_; }
  const EncoderProvenance& provenance() const { return provenance_; }
  const std::string& weights_digest() const { return digest_; }

  /// N x C x H x W -> N x feature_dim.
  Tensor forward(const Tensor& x) const;
  const nn::Sequential& network() const { return *net_; }
  /// Deep copy for code that needs gradients (attack, fine-tuning, pruning).
  nn::Sequential trainable_copy() const { return *net_; }

 private:
  std::string architecture_;
  std::shared_ptr<const nn::Sequential> net_;
  ImageShape input_shape_;
  std::vector<std::size_t> widths_;
  EncoderProvenance provenance_;
  std::string digest_;
  std::string id_;
};

/// Four stride-2 3x3 conv stages (instance norm on all but the last) with ReLU,
/// then global average pooling.
nn::Sequential build_toy_backbone(const ImageShape& input_shape, const std::vector<std::size_t>& widths);
inline const std::vector<std::size_t> kToyWidths = {16, 32, 64, 128};

/// Checkpoint directory: manifest.json + weights.bin.
void save_encoder(const EncoderHandle& handle, const std::filesystem::path& dir);
EncoderHandle load_encoder(const std::filesystem::path& dir);

/// Throws kShapeMismatch when x does not match the declared input shape and
/// kZeroNorm when normalizing a zero row.
FeatureBatch encode_batch(const EncoderHandle& handle, const Tensor& x, bool normalize);

enum class ContrastiveMethod { kSimclrStyle };

struct ContrastiveOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double tau = 0.2;
  std::int64_t seed = 100;
  AugmentSpec augment{};
  std::vector<std::size_t> widths = kToyWidths;
  std::size_t projection_dim = 64;
  /// Adversarial views: the second view of each pair is replaced by a PGD
  /// iterate that maximizes the contrastive loss. 0 disables the inner loop.
  std::size_t pgd_steps = 0;
  double pgd_epsilon = 0.0;
  /// Called with (view, adversarial view) after every PGD iterate.
  std::function<void(const Tensor&, const Tensor&)> on_pgd_iterate;
  std::ostream* log = nullptr;
};

struct TrainedEncoder {
  EncoderHandle encoder;
  std::vector<double> step_losses;
  /// Contrastive loss of a fixed augmented probe batch before and after training.
  double probe_loss_before = 0.0;
  double probe_loss_after = 0.0;
};

inline constexpr std::size_t kMinPretrainImages = 512;

/// SimCLR-style pre-training of the toy backbone with a two-layer projection
/// head (discarded afterwards). Needs at least 512 images.
TrainedEncoder train_contrastive(const Dataset& data, const ContrastiveOptions& options);
TrainedEncoder train_toy_encoder(const Dataset& data, ContrastiveMethod method, std::int64_t seed, std::size_t epochs,
                                 std::size_t batch_size);

/// Untrained toy encoder, for baselines.
EncoderHandle random_toy_encoder(const ImageShape& input_shape, std::int64_t seed,
                                 const std::vector<std::size_t>& widths = kToyWidths);

enum class HeadKind { kLinearProbe, kRetrievalGallery };

/// A downstream model bound to exactly one encoder id.
class DownstreamHead {
 public:
  static DownstreamHead linear_probe(std::string encoder_id, nn::Sequential linear, std::size_t class_count);
  static DownstreamHead retrieval_gallery(std::string encoder_id, FeatureBatch gallery, std::vector<int> labels);

  HeadKind kind() const { return kind_; }
  const std::string& encoder_id() const { return encoder_id_; }
  std::size_t class_count() const { return class_count_; }
  const nn::Sequential& linear() const { return linear_; }
  const FeatureBatch& gallery() const { return gallery_; }
  const std::vector<int>& gallery_labels() const { return gallery_labels_; }

  /// Throws kEncoderMismatch for any encoder other than the bound one.
  std::vector<int> predict(const EncoderHandle& encoder, const Tensor& images) const;
  std::vector<int> predict_features(const Tensor& features) const;

 private:
  HeadKind kind_ = HeadKind::kLinearProbe;
  std::string encoder_id_;
  std::size_t class_count_ = 0;
  nn::Sequential linear_;
  FeatureBatch gallery_;
  std::vector<int> gallery_labels_;
};

struct ProbeOptions {
  std::size_t epochs = 30;
  double learning_rate = 0.01;
  std::size_t batch_size = 128;
  std::int64_t seed = 100;
};

/// Softmax linear classifier on frozen features. Throws kSingleClass when the
/// labels contain fewer than two classes.
DownstreamHead train_linear_probe(const EncoderHandle& encoder, const Dataset& labeled, const ProbeOptions& options);
DownstreamHead fit_linear_head(const std::string& encoder_id, const Tensor& features, const std::vector<int>& labels,
                               std::size_t class_count, const ProbeOptions& options);

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

}  // namespace advenc
