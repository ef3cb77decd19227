#include "advenc/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "advenc/digest.hpp"
#include "advenc/error.hpp"

namespace advenc {
namespace {

constexpr std::size_t kInferChunk = 256;
constexpr double kProbeInitStd = 0.01;

std::string weights_blob(const nn::Sequential& net) {
  std::ostringstream out;
  nn::save_parameters(net, out);
  return out.str();
}

std::string_view to_string(ContrastiveMethod) { return "simclr_style"; }

nn::Sequential build_projection_head(std::size_t in, std::size_t out) {
  nn::Sequential head;
  head.add<nn::Linear>(in, in);
  head.add<nn::ReLU>();
  head.add<nn::Linear>(in, out);
  return head;
}

void require_input_shape(const EncoderHandle& handle, const Tensor& x) {
  const ImageShape& s = handle.input_shape();
  if (x.rank() != 4 || x.dim(1) != s.channels || x.dim(2) != s.height || x.dim(3) != s.width) {
    fail(ErrorCode::kShapeMismatch,
         "encoder " + handle.id() + " expects N x " + to_string(s) + ", got " + shape_to_string(x.shape()));
  }
}

// Projects a onto the L-inf ball of radius eps around b intersected with [0, 1],
// nudging by one ulp where rounding of b +/- eps would overshoot.
void project_ball(Tensor& a, const Tensor& b, double eps) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    double v = std::clamp(a[i], b[i] - eps, b[i] + eps);
    v = std::clamp(v, 0.0, 1.0);
    while (std::abs(v - b[i]) > eps) v = std::nextafter(v, b[i]);
    a[i] = v;
  }
}

struct TwoViewStep {
  double loss = 0.0;
  Tensor grad_view2;
};

// Forward and backward through backbone and head for a pair of view batches.
TwoViewStep two_view_pass(nn::Sequential& backbone, nn::Sequential& head, const Tensor& v1, const Tensor& v2,
                          double tau) {
  const std::size_t n = v1.dim(0);
  const Tensor z = head.forward(backbone.forward(concat(v1, v2)));
  const LossGrad lg = nt_xent_with_grad(z.slice(0, n), z.slice(n, 2 * n), tau);
  const Tensor dx = backbone.backward(head.backward(concat(lg.grad_first, lg.grad_second)));
  return {lg.value, dx.slice(n, 2 * n)};
}

double two_view_loss(const nn::Sequential& backbone, const nn::Sequential& head, const Tensor& v1, const Tensor& v2,
                     double tau) {
  const std::size_t n = v1.dim(0);
  const Tensor z = head.infer(backbone.infer(concat(v1, v2)));
  return nt_xent_with_grad(z.slice(0, n), z.slice(n, 2 * n), tau).value;
}

}  // namespace

EncoderHandle::EncoderHandle(std::string architecture, nn::Sequential backbone, ImageShape input_shape,
                             std::vector<std::size_t> widths, EncoderProvenance provenance)
    : architecture_(std::move(architecture)),
      net_(std::make_shared<const nn::Sequential>(std::move(backbone))),
      input_shape_(input_shape),
      widths_(std::move(widths)),
      provenance_(std::move(provenance)) {
  if (widths_.empty()) fail(ErrorCode::kInvalidParameter, "encoder needs at least one stage");
  digest_ = sha256_hex(weights_blob(*net_));
  id_ = architecture_ + "-" +
        sha256_hex(digest_ + "|" + provenance_.method + "|" + provenance_.parent_id).substr(0, 12);
}

Tensor EncoderHandle::forward(const Tensor& x) const {
  require_input_shape(*this, x);
  const std::size_t n = x.dim(0);
  if (n <= kInferChunk) return net_->infer(x);
  Tensor out({n, feature_dim()});
  for (std::size_t b = 0; b < n; b += kInferChunk) {
    const Tensor part = net_->infer(x.slice(b, std::min(n, b + kInferChunk)));
    std::copy(part.values().begin(), part.values().end(), out.data() + b * feature_dim());
  }
  return out;
}

nn::Sequential build_toy_backbone(const ImageShape& input_shape, const std::vector<std::size_t>& widths) {
  if (widths.empty()) fail(ErrorCode::kInvalidParameter, "encoder needs at least one stage");
  nn::Sequential net;
  std::size_t channels = input_shape.channels;
  for (std::size_t si = 0; si < widths.size(); ++si) {
    const std::size_t w = widths[si];
    net.add<nn::Conv2d>(channels, w, 3, 2, 1);
    if (si + 1 < widths.size()) net.add<nn::InstanceNorm2d>(w);
    net.add<nn::ReLU>();
    channels = w;
  }
  net.add<nn::GlobalAvgPool>();
  return net;
}

void save_encoder(const EncoderHandle& handle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& p = handle.provenance();
  const nlohmann::json manifest = {
      {"id", handle.id()},
      {"architecture", handle.architecture()},
      {"input_shape", to_string(handle.input_shape())},
      {"feature_dim", handle.feature_dim()},
      {"widths", handle.widths()},
      {"weights_sha256", handle.weights_digest()},
      {"provenance",
       {{"method", p.method},
        {"dataset", p.dataset},
        {"seed", p.seed},
        {"epochs", p.epochs},
        {"parent_id", p.parent_id},
        {"notes", p.notes}}},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  std::ofstream weights(dir / "weights.bin", std::ios::binary);
  nn::save_parameters(handle.network(), weights);
  if (!weights) fail(ErrorCode::kIo, "cannot write " + (dir / "weights.bin").string());
}

EncoderHandle load_encoder(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto weights_path = dir / "weights.bin";
  if (!std::filesystem::exists(manifest_path)) fail(ErrorCode::kMissingFile, manifest_path.string());
  if (!std::filesystem::exists(weights_path)) fail(ErrorCode::kMissingFile, weights_path.string());
  nlohmann::json m;
  try {
    std::ifstream in(manifest_path);
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, manifest_path.string() + ": " + e.what());
  }
  const std::string arch = m.value("architecture", "");
  if (arch != kToyEncoderArchitecture) {
    fail(ErrorCode::kUnsupportedArchitecture, "unsupported encoder architecture '" + arch + "'");
  }
  const ImageShape shape = parse_image_shape(m.value("input_shape", "3x64x64"));
  const auto widths = m.value("widths", kToyWidths);
  const std::size_t feature_dim = m.value("feature_dim", std::size_t{0});
  if (widths.empty() || feature_dim != widths.back()) {
    fail(ErrorCode::kShapeMismatch, "manifest feature_dim " + std::to_string(feature_dim) +
                                        " disagrees with the stored network output");
  }
  nn::Sequential net = build_toy_backbone(shape, widths);
  std::ifstream weights(weights_path, std::ios::binary);
  nn::load_parameters(net, weights);
  EncoderProvenance prov;
  if (m.contains("provenance")) {
    const auto& p = m["provenance"];
    prov.method = p.value("method", prov.method);
    prov.dataset = p.value("dataset", "");
    prov.seed = p.value("seed", std::int64_t{0});
    prov.epochs = p.value("epochs", std::size_t{0});
    prov.parent_id = p.value("parent_id", "");
    prov.notes = p.value("notes", "");
  }
  return EncoderHandle(arch, std::move(net), shape, widths, prov);
}

FeatureBatch encode_batch(const EncoderHandle& handle, const Tensor& x, bool normalize) {
  FeatureBatch out{handle.forward(x), false};
  if (normalize) {
    const std::size_t d = out.dim();
    for (std::size_t i = 0; i < out.size(); ++i) {
      double* row = out.rows.data() + i * d;
      double norm = 0.0;
      for (std::size_t k = 0; k < d; ++k) norm += row[k] * row[k];
      norm = std::sqrt(norm);
      if (norm == 0.0) fail(ErrorCode::kZeroNorm, "zero feature vector for sample " + std::to_string(i));
      for (std::size_t k = 0; k < d; ++k) row[k] /= norm;
    }
    out.normalized = true;
  }
  return out;
}

TrainedEncoder train_contrastive(const Dataset& data, const ContrastiveOptions& o) {
  if (data.size() < kMinPretrainImages) {
    fail(ErrorCode::kInvalidParameter, "pre-training needs at least " + std::to_string(kMinPretrainImages) +
                                           " images, got " + std::to_string(data.size()));
  }
  if (o.batch_size < 2) fail(ErrorCode::kBatchTooSmall, "contrastive batch size must be at least 2");
  if (!(o.tau > 0.0) || !(o.learning_rate > 0.0)) fail(ErrorCode::kInvalidParameter, "tau and lr must be positive");
  if (o.pgd_steps > 0 && !(o.pgd_epsilon > 0.0)) fail(ErrorCode::kBudgetOutOfRange, "PGD epsilon must be positive");

  const ImageShape shape = data.image_shape();
  nn::Sequential backbone = build_toy_backbone(shape, o.widths);
  nn::Sequential head = build_projection_head(o.widths.back(), o.projection_dim);
  backbone.init_he(static_cast<std::uint64_t>(o.seed));
  head.init_he(static_cast<std::uint64_t>(o.seed) + 1);

  std::mt19937_64 rng(static_cast<std::uint64_t>(o.seed));
  std::mt19937_64 pgd_rng(static_cast<std::uint64_t>(o.seed) ^ 0x9e3779b97f4a7c15ULL);

  std::mt19937_64 probe_rng(static_cast<std::uint64_t>(o.seed) + 7);
  const Tensor probe = data.images.slice(0, std::min(data.size(), o.batch_size));
  const Tensor probe_v1 = augment_batch(probe, probe_rng, o.augment);
  const Tensor probe_v2 = augment_batch(probe, probe_rng, o.augment);

  TrainedEncoder result{EncoderHandle(kToyEncoderArchitecture, backbone, shape, o.widths, {}), {}, 0.0, 0.0};
  result.probe_loss_before = two_view_loss(backbone, head, probe_v1, probe_v2, o.tau);

  nn::Adam adam(o.learning_rate);
  auto params = backbone.parameters();
  for (nn::Parameter* p : head.parameters()) params.push_back(p);
  const double step_size = o.pgd_steps > 0 ? 2.5 * o.pgd_epsilon / static_cast<double>(o.pgd_steps) : 0.0;
  std::uniform_real_distribution<double> start(-o.pgd_epsilon, o.pgd_epsilon);

  for (std::size_t epoch = 0; epoch < o.epochs; ++epoch) {
    const auto order = shuffled_indices(data.size(), rng);
    double epoch_loss = 0.0;
    const auto batches = make_batches(order, o.batch_size);
    for (const auto& batch : batches) {
      const Tensor x = data.images.gather(batch);
      const Tensor v1 = augment_batch(x, rng, o.augment);
      Tensor v2 = augment_batch(x, rng, o.augment);
      if (o.pgd_steps > 0) {
        Tensor adv = v2;
        for (double& v : adv.values()) v += start(pgd_rng);
        project_ball(adv, v2, o.pgd_epsilon);
        for (std::size_t s = 0; s < o.pgd_steps; ++s) {
          const TwoViewStep st = two_view_pass(backbone, head, v1, adv, o.tau);
          for (std::size_t i = 0; i < adv.size(); ++i) {
            const double g = st.grad_view2[i];
            adv[i] += step_size * static_cast<double>((g > 0.0) - (g < 0.0));
          }
          project_ball(adv, v2, o.pgd_epsilon);
          if (o.on_pgd_iterate) o.on_pgd_iterate(v2, adv);
        }
        v2 = std::move(adv);
      }
      backbone.zero_grad();
      head.zero_grad();
      const TwoViewStep st = two_view_pass(backbone, head, v1, v2, o.tau);
      if (!std::isfinite(st.loss)) fail(ErrorCode::kNonFinite, "contrastive loss is not finite");
      adam.step(params);
      result.step_losses.push_back(st.loss);
      epoch_loss += st.loss;
    }
    if (o.log != nullptr) {
      *o.log << "epoch " << epoch + 1 << "/" << o.epochs << " loss " << epoch_loss / static_cast<double>(batches.size())
             << '\n';
    }
  }
  result.probe_loss_after = two_view_loss(backbone, head, probe_v1, probe_v2, o.tau);

  EncoderProvenance prov;
  prov.method = o.pgd_steps > 0 ? "simclr_style_pgd" : "simclr_style";
  prov.dataset = data.name;
  prov.seed = o.seed;
  prov.epochs = o.epochs;
  if (o.pgd_steps > 0) {
    std::ostringstream notes;
    notes << "pgd_steps=" << o.pgd_steps << " pgd_epsilon=" << o.pgd_epsilon;
    prov.notes = notes.str();
  }
  result.encoder = EncoderHandle(kToyEncoderArchitecture, std::move(backbone), shape, o.widths, prov);
  return result;
}

TrainedEncoder train_toy_encoder(const Dataset& data, ContrastiveMethod method, std::int64_t seed, std::size_t epochs,
                                 std::size_t batch_size) {
  ContrastiveOptions o;
  o.seed = seed;
  o.epochs = epochs;
  o.batch_size = batch_size;
  TrainedEncoder t = train_contrastive(data, o);
  (void)to_string(method);
  return t;
}

EncoderHandle random_toy_encoder(const ImageShape& input_shape, std::int64_t seed,
                                 const std::vector<std::size_t>& widths) {
  nn::Sequential net = build_toy_backbone(input_shape, widths);
  net.init_he(static_cast<std::uint64_t>(seed));
  EncoderProvenance prov;
  prov.method = "random_init";
  prov.seed = seed;
  return EncoderHandle(kToyEncoderArchitecture, std::move(net), input_shape, widths, prov);
}

DownstreamHead DownstreamHead::linear_probe(std::string encoder_id, nn::Sequential linear, std::size_t class_count) {
  DownstreamHead h;
  h.kind_ = HeadKind::kLinearProbe;
  h.encoder_id_ = std::move(encoder_id);
  h.linear_ = std::move(linear);
  h.class_count_ = class_count;
  return h;
}

DownstreamHead DownstreamHead::retrieval_gallery(std::string encoder_id, FeatureBatch gallery,
                                                 std::vector<int> labels) {
  if (gallery.size() != labels.size()) fail(ErrorCode::kShapeMismatch, "gallery/labels size mismatch");
  if (gallery.size() == 0) fail(ErrorCode::kEmptyInput, "empty retrieval gallery");
  DownstreamHead h;
  h.kind_ = HeadKind::kRetrievalGallery;
  h.encoder_id_ = std::move(encoder_id);
  h.class_count_ = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()) + 1);
  h.gallery_ = std::move(gallery);
  h.gallery_labels_ = std::move(labels);
  return h;
}

std::vector<int> DownstreamHead::predict(const EncoderHandle& encoder, const Tensor& images) const {
  if (encoder.id() != encoder_id_) {
    fail(ErrorCode::kEncoderMismatch, "head is bound to " + encoder_id_ + ", not " + encoder.id());
  }
  return predict_features(encoder.forward(images));
}

std::vector<int> DownstreamHead::predict_features(const Tensor& features) const {
  if (kind_ == HeadKind::kLinearProbe) return argmax_rows(linear_.infer(features));
  // Nearest gallery entry by cosine similarity.
  const std::size_t d = features.dim(1);
  if (d != gallery_.dim()) fail(ErrorCode::kShapeMismatch, "feature dim differs from gallery");
  std::vector<int> out(features.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* q = features.data() + i * d;
    double best = -2.0;
    for (std::size_t g = 0; g < gallery_.size(); ++g) {
      const double* r = gallery_.rows.data() + g * d;
      double dot = 0.0, qq = 0.0, rr = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        dot += q[k] * r[k];
        qq += q[k] * q[k];
        rr += r[k] * r[k];
      }
      const double s = dot / std::sqrt(std::max(qq * rr, 1e-300));
      if (s > best) {
        best = s;
        out[i] = gallery_labels_[g];
      }
    }
  }
  return out;
}

DownstreamHead fit_linear_head(const std::string& encoder_id, const Tensor& features, const std::vector<int>& labels,
                               std::size_t class_count, const ProbeOptions& o) {
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    fail(ErrorCode::kShapeMismatch, "features/labels size mismatch");
  }
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
    fail(ErrorCode::kSingleClass, "linear probe needs at least two classes");
  }
  nn::Sequential linear;
  linear.add<nn::Linear>(features.dim(1), class_count);
  linear.init_normal(kProbeInitStd, static_cast<std::uint64_t>(o.seed));
  nn::Adam adam(o.learning_rate);
  std::mt19937_64 rng(static_cast<std::uint64_t>(o.seed));
  for (std::size_t epoch = 0; epoch < o.epochs; ++epoch) {
    const auto order = shuffled_indices(labels.size(), rng);
    for (const auto& batch : make_batches(order, o.batch_size)) {
      std::vector<int> y;
      y.reserve(batch.size());
      for (std::size_t i : batch) y.push_back(labels[i]);
      linear.zero_grad();
      const LossGrad lg = softmax_cross_entropy_with_grad(linear.forward(features.gather(batch)), y);
      linear.backward(lg.grad_first);
      adam.step(linear.parameters());
    }
  }
  return DownstreamHead::linear_probe(encoder_id, std::move(linear), class_count);
}

DownstreamHead train_linear_probe(const EncoderHandle& encoder, const Dataset& labeled, const ProbeOptions& o) {
  if (labeled.distinct_labels() < 2) fail(ErrorCode::kSingleClass, "linear probe needs at least two classes");
  return fit_linear_head(encoder.id(), encoder.forward(labeled.images), labeled.labels, labeled.class_count, o);
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) fail(ErrorCode::kShapeMismatch, "prediction/label size mismatch");
  if (labels.empty()) fail(ErrorCode::kEmptyInput, "accuracy of an empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace advenc
