#include "advenc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "advenc/attack.hpp"
#include "advenc/error.hpp"

namespace advenc {
namespace {

std::vector<double> row_norms(const FeatureBatch& f) {
  std::vector<double> out(f.size());
  const std::size_t d = f.dim();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += f.rows[i * d + k] * f.rows[i * d + k];
    out[i] = std::sqrt(s);
    if (out[i] == 0.0) fail(ErrorCode::kZeroNorm, "zero feature row in retrieval");
  }
  return out;
}

}  // namespace

void validate(const PredictionRecord& r) {
  if (r.clean_prediction.size() != r.size() || r.adversarial_prediction.size() != r.size()) {
    fail(ErrorCode::kShapeMismatch, "prediction record arrays differ in length");
  }
  if (r.class_count == 0) return;
  const auto k = static_cast<int>(r.class_count);
  for (const auto* v : {&r.true_label, &r.clean_prediction, &r.adversarial_prediction}) {
    for (int label : *v) {
      if (label < 0 || label >= k) fail(ErrorCode::kInvalidParameter, "label out of range");
    }
  }
}

double attack_success_rate(const PredictionRecord& r) {
  validate(r);
  std::size_t correct = 0, flipped = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r.clean_prediction[i] != r.true_label[i]) continue;
    ++correct;
    flipped += r.adversarial_prediction[i] != r.true_label[i];
  }
  if (correct == 0) fail(ErrorCode::kEmptyInput, "no clean-correct samples");
  return static_cast<double>(flipped) / static_cast<double>(correct);
}

double malicious_accuracy(const PredictionRecord& r) {
  validate(r);
  if (r.size() == 0) fail(ErrorCode::kEmptyInput, "no records");
  return accuracy(r.adversarial_prediction, r.true_label);
}

double clean_accuracy(const PredictionRecord& r) {
  validate(r);
  if (r.size() == 0) fail(ErrorCode::kEmptyInput, "no records");
  return accuracy(r.clean_prediction, r.true_label);
}

double flip_rate(const PredictionRecord& r) {
  validate(r);
  if (r.size() == 0) fail(ErrorCode::kEmptyInput, "no records");
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < r.size(); ++i) flipped += r.adversarial_prediction[i] != r.clean_prediction[i];
  return static_cast<double>(flipped) / static_cast<double>(r.size());
}

double retrieval_average_precision(std::span<const unsigned char> rel, std::size_t total_relevant) {
  if (rel.empty()) fail(ErrorCode::kInvalidParameter, "k must be at least 1");
  if (total_relevant == 0) fail(ErrorCode::kInvalidParameter, "total_relevant must be at least 1");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rel.size(); ++i) {
    if (rel[i] == 0) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(std::min(rel.size(), total_relevant));
}

MapResult retrieval_map_suite(const FeatureBatch& queries, std::span<const int> query_labels,
                              const FeatureBatch& gallery, std::span<const int> gallery_labels,
                              std::span<const std::size_t> ks, std::span<const std::ptrdiff_t> exclude) {
  if (queries.size() == 0) fail(ErrorCode::kEmptyInput, "no retrieval queries");
  if (gallery.size() == 0) fail(ErrorCode::kEmptyInput, "empty retrieval gallery");
  if (query_labels.size() != queries.size() || gallery_labels.size() != gallery.size()) {
    fail(ErrorCode::kShapeMismatch, "features/labels size mismatch");
  }
  if (queries.dim() != gallery.dim()) fail(ErrorCode::kShapeMismatch, "query and gallery dims differ");
  if (!exclude.empty() && exclude.size() != queries.size()) fail(ErrorCode::kShapeMismatch, "exclusion list size");
  for (std::size_t k : ks) {
    if (k == 0) fail(ErrorCode::kInvalidParameter, "k must be at least 1");
  }

  const std::size_t d = queries.dim();
  const auto qn = row_norms(queries);
  const auto gn = row_norms(gallery);
  MapResult result;
  for (std::size_t k : ks) result.table[k] = 0.0;

  std::vector<double> sim(gallery.size());
  std::vector<std::size_t> order;
  std::vector<unsigned char> rel;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const std::ptrdiff_t skip = exclude.empty() ? kNoExclusion : exclude[q];
    order.clear();
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (static_cast<std::ptrdiff_t>(g) == skip) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += queries.rows[q * d + j] * gallery.rows[g * d + j];
      sim[g] = dot / (qn[q] * gn[g]);
      order.push_back(g);
    }
    if (order.empty()) fail(ErrorCode::kEmptyInput, "nothing left to rank after exclusion");
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
    std::size_t total_relevant = 0;
    rel.assign(order.size(), 0);
    for (std::size_t i = 0; i < order.size(); ++i) {
      rel[i] = gallery_labels[order[i]] == query_labels[q];
      total_relevant += rel[i];
    }
    for (std::size_t k : ks) {
      const std::size_t kk = std::min(k, order.size());
      if (kk < k) result.truncated = true;
      if (total_relevant > 0) {
        result.table[k] += retrieval_average_precision(std::span(rel).first(kk), total_relevant);
      }
    }
  }
  for (auto& [k, v] : result.table) v /= static_cast<double>(queries.size());
  return result;
}

NoiseArtifact random_noise_control(const NoiseArtifact& artifact, std::int64_t seed) {
  NoiseArtifact out = artifact;
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
  const double eps = artifact.config.epsilon;
  if (artifact.mode == AttackMode::kPerturbation) {
    std::uniform_real_distribution<double> u(-eps, eps);
    for (double& v : out.delta.values()) v = u(rng);
  } else {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : out.delta.values()) v = u(rng);
  }
  out.generator_weights.clear();
  out.latent.clear();
  out.loss_trace.clear();
  return out;
}

PredictionRecord predict_pair(const NoiseArtifact& artifact, const EncoderHandle& encoder, const DownstreamHead& head,
                              const Dataset& data) {
  PredictionRecord r;
  r.true_label = data.labels;
  r.class_count = head.class_count();
  r.clean_prediction = head.predict(encoder, data.images);
  r.adversarial_prediction = head.predict(encoder, apply_artifact(artifact, data.images));
  return r;
}

std::vector<std::vector<double>> transfer_matrix(std::span<const NoiseArtifact> artifacts,
                                                 std::span<const EncoderHandle> encoders,
                                                 std::span<const DownstreamHead> heads, const Dataset& downstream) {
  if (heads.size() != encoders.size()) fail(ErrorCode::kShapeMismatch, "one head per encoder required");
  for (std::size_t e = 0; e < encoders.size(); ++e) {
    if (heads[e].encoder_id() != encoders[e].id()) {
      fail(ErrorCode::kEncoderMismatch, "head " + std::to_string(e) + " is not bound to " + encoders[e].id());
    }
  }
  std::vector<std::vector<double>> m(artifacts.size(), std::vector<double>(encoders.size()));
  for (std::size_t e = 0; e < encoders.size(); ++e) {
    const auto clean = heads[e].predict(encoders[e], downstream.images);
    for (std::size_t a = 0; a < artifacts.size(); ++a) {
      PredictionRecord r{downstream.labels, clean,
                         heads[e].predict(encoders[e], apply_artifact(artifacts[a], downstream.images)),
                         heads[e].class_count()};
      m[a][e] = attack_success_rate(r);
    }
  }
  return m;
}

EvalReport evaluate_attack(const NoiseArtifact& artifact, const EncoderHandle& encoder, const DownstreamHead& head,
                           const Dataset& test, const EvalOptions& o) {
  if (test.size() == 0) fail(ErrorCode::kEmptyInput, "empty downstream test set");
  check_invariants(artifact);
  const Tensor adv_images = apply_artifact(artifact, test.images);
  PredictionRecord r;
  r.true_label = test.labels;
  r.class_count = head.class_count();
  r.clean_prediction = head.predict(encoder, test.images);
  r.adversarial_prediction = head.predict(encoder, adv_images);

  const NoiseArtifact control = random_noise_control(artifact, o.seed);
  PredictionRecord rc = r;
  rc.adversarial_prediction = head.predict(encoder, apply_artifact(control, test.images));

  EvalReport rep;
  rep.clean_accuracy = clean_accuracy(r);
  rep.malicious_accuracy = malicious_accuracy(r);
  rep.flip_rate = flip_rate(r);
  rep.asr_over_all_samples = o.asr_over_all_samples;
  rep.attack_success_rate = o.asr_over_all_samples ? rep.flip_rate : attack_success_rate(r);
  rep.random_noise_asr = o.asr_over_all_samples ? flip_rate(rc) : attack_success_rate(rc);
  if (o.retrieval) {
    const FeatureBatch gallery{encoder.forward(test.images), false};
    const FeatureBatch queries{encoder.forward(adv_images), false};
    std::vector<std::ptrdiff_t> exclude(test.size());
    std::iota(exclude.begin(), exclude.end(), std::ptrdiff_t{0});
    const MapResult m = retrieval_map_suite(queries, test.labels, gallery, test.labels, kRetrievalKs, exclude);
    rep.map_table = m.table;
    rep.k_truncated = m.truncated;
  }
  rep.encoder_id = encoder.id();
  rep.surrogate_name = artifact.surrogate_name;
  rep.downstream_name = test.name;
  rep.mode = artifact.mode;
  rep.seed = o.seed;
  rep.epsilon = artifact.config.epsilon;
  rep.patch_fraction = artifact.config.patch_fraction;
  rep.setting = o.setting;
  rep.probe_epochs = o.probe.epochs;
  rep.probe_lr = o.probe.learning_rate;
  rep.tau = artifact.config.tau;
  return rep;
}

}  // namespace advenc
