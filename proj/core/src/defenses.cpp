#include "advenc/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "advenc/attack.hpp"
#include "advenc/error.hpp"

namespace advenc {
namespace {

constexpr double kHeadInitStd = 0.01;

std::vector<nn::Parameter*> prunable(nn::Sequential& net) {
  std::vector<nn::Parameter*> out;
  for (nn::Parameter* p : net.parameters()) {
    if (p->prunable) out.push_back(p);
  }
  return out;
}

EncoderProvenance derived(const EncoderHandle& parent, const std::string& method, const std::string& notes) {
  EncoderProvenance p = parent.provenance();
  p.method = method;
  p.parent_id = parent.id();
  p.notes = notes;
  return p;
}

std::string format(const char* key, double v) {
  std::ostringstream out;
  out << key << "=" << v;
  return out.str();
}

}  // namespace

std::string_view to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::kCorruption: return "corruption";
    case DefenseKind::kFinetune: return "finetune";
    case DefenseKind::kPrune: return "prune";
    case DefenseKind::kAdversarialTraining: return "adversarial_training";
  }
  return "unknown";
}

DefenseKind parse_defense_kind(std::string_view text) {
  for (auto k : {DefenseKind::kCorruption, DefenseKind::kFinetune, DefenseKind::kPrune,
                 DefenseKind::kAdversarialTraining}) {
    if (text == to_string(k)) return k;
  }
  fail(ErrorCode::kParseError, "unknown defense kind '" + std::string(text) + "'");
}

double DefenseSpec::parameter() const {
  switch (kind) {
    case DefenseKind::kCorruption: return sigma;
    case DefenseKind::kFinetune: return static_cast<double>(epochs);
    case DefenseKind::kPrune: return prune_rate;
    case DefenseKind::kAdversarialTraining: return pgd_epsilon;
  }
  return 0.0;
}

void validate(const DefenseSpec& s) {
  if (!(s.sigma >= 0.0)) fail(ErrorCode::kInvalidParameter, "sigma must be non-negative");
  if (!(s.prune_rate >= 0.0 && s.prune_rate <= 1.0)) fail(ErrorCode::kInvalidParameter, "prune rate must lie in [0, 1]");
  if (s.pgd_steps > 0 && !(s.pgd_epsilon > 0.0)) fail(ErrorCode::kInvalidParameter, "pgd_epsilon must be positive");
  if (!(s.lr_body >= 0.0) || !(s.lr_head >= 0.0)) fail(ErrorCode::kInvalidParameter, "learning rates must be >= 0");
}

Tensor gaussian_corrupt(const Tensor& x, double sigma, std::int64_t seed) {
  if (!(sigma >= 0.0)) fail(ErrorCode::kInvalidParameter, "sigma must be non-negative");
  if (sigma == 0.0) return x;
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
  std::normal_distribution<double> noise(0.0, sigma);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i] + noise(rng), 0.0, 1.0);
  return out;
}

std::vector<double> prune_magnitudes(std::span<const double> weights, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) fail(ErrorCode::kInvalidParameter, "prune rate must lie in [0, 1]");
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(weights[a]) < std::abs(weights[b]); });
  const auto cut = static_cast<std::size_t>(std::floor(rate * static_cast<double>(weights.size())));
  std::vector<double> out(weights.begin(), weights.end());
  for (std::size_t i = 0; i < cut; ++i) out[order[i]] = 0.0;
  return out;
}

EncoderHandle prune_encoder(const EncoderHandle& handle, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) fail(ErrorCode::kInvalidParameter, "prune rate must lie in [0, 1]");
  nn::Sequential net = handle.trainable_copy();
  const auto params = prunable(net);
  std::vector<double> flat;
  for (const nn::Parameter* p : params) flat.insert(flat.end(), p->value.values().begin(), p->value.values().end());
  const std::vector<double> pruned = prune_magnitudes(flat, rate);
  std::size_t offset = 0;
  for (nn::Parameter* p : params) {
    std::copy_n(pruned.begin() + static_cast<std::ptrdiff_t>(offset), p->value.size(), p->value.data());
    offset += p->value.size();
  }
  return EncoderHandle(handle.architecture(), std::move(net), handle.input_shape(), handle.widths(),
                       derived(handle, "pruned", format("rate", rate)));
}

std::size_t prunable_count(const EncoderHandle& handle) {
  std::size_t n = 0;
  for (const nn::Parameter* p : handle.network().parameters()) n += p->prunable ? p->value.size() : 0;
  return n;
}

std::size_t zero_prunable_count(const EncoderHandle& handle) {
  std::size_t n = 0;
  for (const nn::Parameter* p : handle.network().parameters()) {
    if (!p->prunable) continue;
    for (double v : p->value.values()) n += v == 0.0;
  }
  return n;
}

FinetuneResult finetune_encoder(const EncoderHandle& handle, const Dataset& labeled, std::size_t epochs,
                                double lr_body, double lr_head, std::int64_t seed, std::size_t batch_size) {
  if (labeled.size() == 0) fail(ErrorCode::kEmptyInput, "fine-tuning needs labelled data");
  if (labeled.distinct_labels() < 2) fail(ErrorCode::kSingleClass, "fine-tuning needs at least two classes");
  nn::Sequential body = handle.trainable_copy();
  nn::Sequential head;
  head.add<nn::Linear>(handle.feature_dim(), labeled.class_count);
  head.init_normal(kHeadInitStd, static_cast<std::uint64_t>(seed));
  nn::Adam body_opt(lr_body), head_opt(lr_head);
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto order = shuffled_indices(labeled.size(), rng);
    for (const auto& batch : make_batches(order, batch_size)) {
      std::vector<int> y;
      for (std::size_t i : batch) y.push_back(labeled.labels[i]);
      body.zero_grad();
      head.zero_grad();
      const LossGrad lg = softmax_cross_entropy_with_grad(head.forward(body.forward(labeled.images.gather(batch))), y);
      if (!std::isfinite(lg.value)) fail(ErrorCode::kNonFinite, "fine-tuning loss is not finite");
      body.backward(head.backward(lg.grad_first));
      body_opt.step(body.parameters());
      head_opt.step(head.parameters());
    }
  }
  std::ostringstream notes;
  notes << "epochs=" << epochs << " lr_body=" << lr_body << " lr_head=" << lr_head;
  EncoderHandle tuned(handle.architecture(), std::move(body), handle.input_shape(), handle.widths(),
                      derived(handle, "finetuned", notes.str()));
  DownstreamHead h = DownstreamHead::linear_probe(tuned.id(), std::move(head), labeled.class_count);
  return {std::move(tuned), std::move(h)};
}

EncoderHandle adversarial_train(const Dataset& data, std::size_t pgd_steps, double pgd_epsilon, std::size_t epochs,
                                std::int64_t seed, std::size_t batch_size) {
  if (pgd_steps > 0 && !(pgd_epsilon > 0.0)) fail(ErrorCode::kInvalidParameter, "pgd_epsilon must be positive");
  ContrastiveOptions o;
  o.seed = seed;
  o.epochs = epochs;
  o.batch_size = batch_size;
  o.pgd_steps = pgd_steps;
  o.pgd_epsilon = pgd_epsilon;
  return train_contrastive(data, o).encoder;
}

double sign_gradient_accuracy(const EncoderHandle& encoder, const DownstreamHead& head, const Dataset& data,
                              double epsilon) {
  if (head.kind() != HeadKind::kLinearProbe) fail(ErrorCode::kInvalidParameter, "needs a linear-probe head");
  if (head.encoder_id() != encoder.id()) fail(ErrorCode::kEncoderMismatch, "head is bound to " + head.encoder_id());
  nn::Sequential body = encoder.trainable_copy();
  nn::Sequential lin = head.linear();
  body.set_frozen(true);
  lin.set_frozen(true);
  const LossGrad lg = softmax_cross_entropy_with_grad(lin.forward(body.forward(data.images)), data.labels);
  const Tensor g = body.backward(lin.backward(lg.grad_first));
  Tensor adv = data.images;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    adv[i] = std::clamp(adv[i] + epsilon * static_cast<double>((g[i] > 0.0) - (g[i] < 0.0)), 0.0, 1.0);
  }
  return accuracy(head.predict(encoder, adv), data.labels);
}

EvalReport run_defense(const DefenseSpec& spec, const DefenseInputs& in) {
  validate(spec);
  if (in.artifact == nullptr || in.encoder == nullptr || in.downstream_test == nullptr) {
    fail(ErrorCode::kInvalidParameter, "defense needs an artifact, an encoder and downstream test data");
  }
  const auto need_train = [&] {
    if (in.downstream_train == nullptr) fail(ErrorCode::kInvalidParameter, "defense needs downstream training data");
    return *in.downstream_train;
  };
  EvalReport rep;
  switch (spec.kind) {
    case DefenseKind::kCorruption: {
      if (in.head == nullptr) fail(ErrorCode::kInvalidParameter, "corruption defense needs the encoder's probe");
      const Dataset& test = *in.downstream_test;
      PredictionRecord r;
      r.true_label = test.labels;
      r.class_count = in.head->class_count();
      r.clean_prediction = in.head->predict(*in.encoder, gaussian_corrupt(test.images, spec.sigma, spec.seed));
      r.adversarial_prediction = in.head->predict(
          *in.encoder, gaussian_corrupt(apply_artifact(*in.artifact, test.images), spec.sigma, spec.seed));
      const NoiseArtifact control = random_noise_control(*in.artifact, in.eval.seed);
      PredictionRecord rc = r;
      rc.adversarial_prediction = in.head->predict(
          *in.encoder, gaussian_corrupt(apply_artifact(control, test.images), spec.sigma, spec.seed));
      rep = evaluate_attack(*in.artifact, *in.encoder, *in.head, test, EvalOptions{in.eval.seed, false, false,
                                                                                    in.eval.setting, in.eval.probe});
      rep.clean_accuracy = clean_accuracy(r);
      rep.malicious_accuracy = malicious_accuracy(r);
      rep.flip_rate = flip_rate(r);
      rep.attack_success_rate = in.eval.asr_over_all_samples ? rep.flip_rate : attack_success_rate(r);
      rep.random_noise_asr = in.eval.asr_over_all_samples ? flip_rate(rc) : attack_success_rate(rc);
      rep.asr_over_all_samples = in.eval.asr_over_all_samples;
      break;
    }
    case DefenseKind::kFinetune: {
      const FinetuneResult ft =
          finetune_encoder(*in.encoder, need_train(), spec.epochs, spec.lr_body, spec.lr_head, spec.seed);
      rep = evaluate_attack(*in.artifact, ft.encoder, ft.head, *in.downstream_test, in.eval);
      break;
    }
    case DefenseKind::kPrune: {
      const EncoderHandle pruned = prune_encoder(*in.encoder, spec.prune_rate);
      const DownstreamHead head = train_linear_probe(pruned, need_train(), in.eval.probe);
      rep = evaluate_attack(*in.artifact, pruned, head, *in.downstream_test, in.eval);
      break;
    }
    case DefenseKind::kAdversarialTraining: {
      if (in.pretraining == nullptr) fail(ErrorCode::kInvalidParameter, "adversarial training needs pre-training data");
      const EncoderHandle robust =
          adversarial_train(*in.pretraining, spec.pgd_steps, spec.pgd_epsilon, spec.epochs, spec.seed);
      const DownstreamHead head = train_linear_probe(robust, need_train(), in.eval.probe);
      rep = evaluate_attack(*in.artifact, robust, head, *in.downstream_test, in.eval);
      break;
    }
  }
  rep.defense_kind = std::string(to_string(spec.kind));
  rep.defense_param = spec.parameter();
  return rep;
}

}  // namespace advenc
