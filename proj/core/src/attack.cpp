#include "advenc/attack.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <ostream>
#include <random>

#include "advenc/digest.hpp"
#include "advenc/error.hpp"
#include "advenc/losses.hpp"

namespace advenc {
namespace {

constexpr double kGeneratorBeta1 = 0.5;

void require_batch_of(const Tensor& x, const Tensor& per_image, const char* what) {
  if (x.rank() != 4 || x.sample_size() != per_image.size() ||
      !std::equal(x.shape().begin() + 1, x.shape().end(), per_image.shape().begin(), per_image.shape().end())) {
    fail(ErrorCode::kShapeMismatch, std::string(what) + ": batch " + shape_to_string(x.shape()) + " vs " +
                                        shape_to_string(per_image.shape()));
  }
}

void require_mask_fits(const Tensor& x, const Tensor& mask) {
  if (mask.rank() != 2 || x.rank() != 4 || mask.dim(0) != x.dim(2) || mask.dim(1) != x.dim(3)) {
    fail(ErrorCode::kShapeMismatch, "mask " + shape_to_string(mask.shape()) + " vs batch " + shape_to_string(x.shape()));
  }
}

Tensor full_mask(const ImageShape& s) { return Tensor({s.height, s.width}, 1.0); }

Tensor apply_mode(AttackMode mode, const Tensor& x, const Tensor& delta, const Tensor& mask) {
  return mode == AttackMode::kPerturbation ? apply_perturbation(x, delta) : apply_patch(x, delta, mask);
}

// Float32 copy that never rounds away from zero past `bound`.
std::vector<float> to_float32(const Tensor& t, double bound) {
  std::vector<float> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    float f = static_cast<float>(t[i]);
    while (std::abs(static_cast<double>(f)) > bound) f = std::nextafter(f, 0.0f);
    out[i] = f;
  }
  return out;
}

void write_floats(const std::filesystem::path& file, const std::vector<float>& values) {
  static_assert(std::endian::native == std::endian::little, "float32 LE files assume a little-endian host");
  std::ofstream out(file, std::ios::binary);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) fail(ErrorCode::kIo, "cannot write " + file.string());
}

Tensor read_floats(const std::filesystem::path& file, Shape shape) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingFile, file.string());
  std::vector<float> raw(shape_volume(shape));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(raw.size() * sizeof(float)) || in.peek() != EOF) {
    fail(ErrorCode::kCorruptManifest, file.string() + " does not hold " + shape_to_string(shape) + " floats");
  }
  return Tensor(std::move(shape), std::vector<double>(raw.begin(), raw.end()));
}

std::string read_text(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingFile, file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

PatchMask build_patch_mask(const ImageShape& shape, double fraction, PatchPosition position, std::int64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) fail(ErrorCode::kFractionOutOfRange, "patch fraction must lie in (0, 1]");
  if (shape.height == 0 || shape.width == 0) fail(ErrorCode::kShapeMismatch, "image must be at least 1 x 1");
  AttackConfig probe;
  probe.patch_fraction = fraction;
  probe.image_shape = shape;
  const std::size_t side = std::min({probe.patch_side(), shape.height, shape.width});
  if (side == 0) fail(ErrorCode::kDegeneratePatch, "patch fraction too small for " + to_string(shape));
  PatchMask m{Tensor({shape.height, shape.width}), shape.height - side, shape.width - side, side};
  if (position == PatchPosition::kRandomFixed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    m.row = std::uniform_int_distribution<std::size_t>(0, shape.height - side)(rng);
    m.col = std::uniform_int_distribution<std::size_t>(0, shape.width - side)(rng);
  }
  for (std::size_t r = m.row; r < m.row + side; ++r) {
    for (std::size_t c = m.col; c < m.col + side; ++c) m.grid[r * shape.width + c] = 1.0;
  }
  return m;
}

Tensor apply_perturbation(const Tensor& x, const Tensor& delta) {
  require_batch_of(x, delta, "apply_perturbation");
  Tensor out(x.shape());
  const std::size_t per = delta.size();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i] + delta[i % per], 0.0, 1.0);
  return out;
}

Tensor apply_perturbation_backward(const Tensor& x, const Tensor& delta, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "apply_perturbation backward");
  Tensor grad(delta.shape());
  const std::size_t per = delta.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i] + delta[i % per];
    if (v > 0.0 && v < 1.0) grad[i % per] += grad_out[i];
  }
  return grad;
}

Tensor apply_patch(const Tensor& x, const Tensor& patch, const Tensor& mask) {
  require_batch_of(x, patch, "apply_patch");
  require_mask_fits(x, mask);
  for (double v : patch.values()) {
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::kBudgetOutOfRange, "patch values must lie in [0, 1]");
  }
  Tensor out = x;
  const std::size_t plane = mask.size(), per = patch.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask[i % plane] != 0.0) out[i] = patch[i % per];
  }
  return out;
}

Tensor apply_patch_backward(const Tensor& mask, const Tensor& grad_out) {
  require_mask_fits(grad_out, mask);
  Tensor grad(Shape(grad_out.shape().begin() + 1, grad_out.shape().end()));
  const std::size_t plane = mask.size(), per = grad.size();
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    if (mask[i % plane] != 0.0) grad[i % per] += grad_out[i];
  }
  return grad;
}

Tensor apply_artifact(const NoiseArtifact& artifact, const Tensor& x) {
  return apply_mode(artifact.mode, x, artifact.delta, artifact.mask);
}

ObjectiveTerms generator_objective(GeneratorNet& gen, std::span<const double> z, nn::Sequential& encoder,
                                   const Tensor& x, const FeatureBatch& clean, const AttackConfig& c,
                                   const Tensor& mask, bool accumulate) {
  const Tensor raw = generate_noise_train(gen, z);
  const Tensor delta = clip_noise(raw, c.mode, c.epsilon);
  const Tensor x_adv = apply_mode(c.mode, x, delta, mask);
  const FeatureBatch adv{encoder.forward(x_adv), false};
  const FrequencyFilterSpec spec{c.hfc_cutoff};

  const LossGrad l_adv = adv_info_nce_with_grad(adv, clean, c.tau);
  const LossGrad l_hfc = hfc_loss_with_grad(x_adv, x, spec);
  const LossGrad l_q = quality_loss_with_grad(x_adv, x);
  ObjectiveTerms terms{total_loss(l_adv.value, l_hfc.value, l_q.value, {c.alpha, c.beta, c.lambda}), l_adv.value,
                       l_hfc.value, l_q.value};
  if (!accumulate) return terms;

  Tensor g = encoder.backward(l_adv.grad_first);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = c.alpha * g[i] + c.beta * l_hfc.grad_first[i] + c.lambda * l_q.grad_first[i];
  }
  const Tensor g_delta = c.mode == AttackMode::kPerturbation ? apply_perturbation_backward(x, delta, g)
                                                             : apply_patch_backward(mask, g);
  generate_noise_backward(gen, clip_noise_backward(raw, g_delta, c.mode, c.epsilon));
  return terms;
}

NoiseArtifact train_advencoder(const AttackConfig& config, const EncoderHandle& encoder, const Dataset& surrogate,
                               const AttackOptions& options) {
  AttackConfig checked = config;
  checked.epochs = std::max<std::size_t>(config.epochs, 1);
  validate_config(checked);
  if (surrogate.size() < 2) fail(ErrorCode::kBatchTooSmall, "surrogate set needs at least two images");
  if (config.image_shape != encoder.input_shape()) {
    fail(ErrorCode::kShapeMismatch, "config image_shape " + to_string(config.image_shape) + " vs encoder input " +
                                        to_string(encoder.input_shape()));
  }
  if (surrogate.image_shape() != config.image_shape) {
    fail(ErrorCode::kShapeMismatch, "surrogate images are " + to_string(surrogate.image_shape()));
  }

  nn::Sequential enc = encoder.trainable_copy();
  enc.set_frozen(true);
  const Tensor clean_all = encoder.forward(surrogate.images);
  if (!clean_all.all_finite()) fail(ErrorCode::kNonFinite, "encoder output is not finite");

  const auto seed = static_cast<std::uint64_t>(config.seed);
  GeneratorNet gen = config.use_generator ? make_generator(config.latent_dim, config.image_shape, seed)
                                          : make_direct_noise(config.image_shape, seed);
  const std::vector<double> z = sample_latent(config.seed, config.latent_dim);

  NoiseArtifact art;
  art.mode = config.mode;
  art.config = config;
  art.config_digest = config_digest(config);
  art.latent = z;
  art.encoder_id = encoder.id();
  art.surrogate_name = surrogate.name;
  if (config.mode == AttackMode::kPatch) {
    PatchMask pm = build_patch_mask(config.image_shape, config.patch_fraction, config.patch_position, config.seed);
    art.mask = std::move(pm.grid);
    art.patch_row = pm.row;
    art.patch_col = pm.col;
    art.patch_side = pm.side;
  } else {
    art.mask = full_mask(config.image_shape);
  }

  std::vector<std::size_t> probe_idx(std::min(config.batch_size, surrogate.size()));
  for (std::size_t i = 0; i < probe_idx.size(); ++i) probe_idx[i] = i;
  if (probe_idx.size() < 2) probe_idx = {0, 1};
  const Tensor probe_x = surrogate.images.gather(probe_idx);
  const FeatureBatch probe_clean{clean_all.gather(probe_idx), false};
  const auto probe_loss = [&] {
    const double v = generator_objective(gen, z, enc, probe_x, probe_clean, config, art.mask, false).total;
    if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, "generator loss is not finite");
    return v;
  };
  art.loss_trace.push_back(probe_loss());

  nn::Adam adam(config.learning_rate, kGeneratorBeta1);
  std::mt19937_64 rng(seed);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled_indices(surrogate.size(), rng);
    for (const auto& batch : make_batches(order, config.batch_size)) {
      const Tensor x = surrogate.images.gather(batch);
      const FeatureBatch clean{clean_all.gather(batch), false};
      gen.net.zero_grad();
      const ObjectiveTerms t = generator_objective(gen, z, enc, x, clean, config, art.mask, true);
      adam.step(gen.net.parameters());
      ++step;
      if (options.on_step) {
        const Tensor delta = clip_noise(generate_noise(gen, z), config.mode, config.epsilon);
        const Tensor x_adv = apply_mode(config.mode, x, delta, art.mask);
        options.on_step(AttackStep{epoch, step, delta, x, x_adv, t.total});
      }
    }
    art.loss_trace.push_back(probe_loss());
    if (options.log != nullptr) {
      *options.log << "epoch " << epoch + 1 << "/" << config.epochs << " L_G(probe) " << art.loss_trace.back() << '\n';
    }
  }

  art.delta = clip_noise(generate_noise(gen, z), config.mode, config.epsilon);
  art.generator_weights = serialize_weights(gen);
  check_invariants(art);
  return art;
}

std::vector<unsigned char> render_preview(const NoiseArtifact& a) {
  const ImageShape s = a.config.image_shape;
  std::vector<unsigned char> rgb(s.height * s.width * 3, 0);
  const double eps = a.config.epsilon;
  for (std::size_t c = 0; c < std::min<std::size_t>(s.channels, 3); ++c) {
    for (std::size_t p = 0; p < s.height * s.width; ++p) {
      const double d = a.delta[c * s.height * s.width + p];
      const double v = a.mode == AttackMode::kPerturbation ? (d + eps) / (2.0 * eps) : d;
      rgb[p * 3 + c] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  }
  if (s.channels == 1) {
    for (std::size_t p = 0; p < s.height * s.width; ++p) rgb[p * 3 + 1] = rgb[p * 3 + 2] = rgb[p * 3];
  }
  return rgb;
}

void save_artifact(const NoiseArtifact& a, const std::filesystem::path& dir) {
  check_invariants(a);
  std::filesystem::create_directories(dir);
  const ImageShape s = a.config.image_shape;
  const double bound = a.mode == AttackMode::kPerturbation ? a.config.epsilon : 1.0;
  write_floats(dir / "noise.bin", to_float32(a.delta, bound));
  write_floats(dir / "mask.bin", to_float32(a.mask, 1.0));
  {
    std::ofstream out(dir / "gen.weights", std::ios::binary);
    out << a.generator_weights;
    if (!out) fail(ErrorCode::kIo, "cannot write gen.weights");
  }
  const nlohmann::json meta = {
      {"format", "advenc-noise-v1"},
      {"mode", std::string(to_string(a.mode))},
      {"shape", {s.channels, s.height, s.width}},
      {"config", to_canonical_text(a.config)},
      {"config_digest", a.config_digest},
      {"seed", a.config.seed},
      {"latent", a.latent},
      {"loss_trace", a.loss_trace},
      {"encoder_id", a.encoder_id},
      {"surrogate_name", a.surrogate_name},
      {"patch", {{"row", a.patch_row}, {"col", a.patch_col}, {"side", a.patch_side}}},
      {"generator_architecture", a.config.use_generator ? kDecoderArchitecture : kDirectArchitecture},
      {"generator_weights_sha256", sha256_hex(a.generator_weights)},
  };
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';

  const auto rgb = render_preview(a);
  cv::Mat img(static_cast<int>(s.height), static_cast<int>(s.width), CV_8UC3);
  for (std::size_t p = 0; p < s.height * s.width; ++p) {
    img.data[p * 3 + 0] = rgb[p * 3 + 2];
    img.data[p * 3 + 1] = rgb[p * 3 + 1];
    img.data[p * 3 + 2] = rgb[p * 3 + 0];
  }
  if (!cv::imwrite((dir / "preview.png").string(), img)) fail(ErrorCode::kIo, "cannot write preview.png");
}

NoiseArtifact load_artifact(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path)) fail(ErrorCode::kMissingFile, meta_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text(meta_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptManifest, meta_path.string() + ": " + e.what());
  }
  NoiseArtifact a;
  try {
    a.config = parse_config_text(m.at("config").get<std::string>());
    a.mode = parse_attack_mode(m.at("mode").get<std::string>());
    a.config_digest = m.at("config_digest").get<std::string>();
    a.latent = m.at("latent").get<std::vector<double>>();
    a.loss_trace = m.at("loss_trace").get<std::vector<double>>();
    a.encoder_id = m.at("encoder_id").get<std::string>();
    a.surrogate_name = m.at("surrogate_name").get<std::string>();
    a.patch_row = m.at("patch").at("row").get<std::size_t>();
    a.patch_col = m.at("patch").at("col").get<std::size_t>();
    a.patch_side = m.at("patch").at("side").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptManifest, meta_path.string() + ": " + e.what());
  }
  if (a.config_digest != config_digest(a.config)) fail(ErrorCode::kCorruptManifest, "config digest mismatch");
  const ImageShape s = a.config.image_shape;
  const Tensor stored = read_floats(dir / "noise.bin", s.as_shape());
  a.mask = read_floats(dir / "mask.bin", {s.height, s.width});
  a.generator_weights = read_text(dir / "gen.weights");

  // Regenerate the noise at full precision; noise.bin is the float32 export.
  if (!a.generator_weights.empty()) {
    const std::string tag = a.config.use_generator ? kDecoderArchitecture : kDirectArchitecture;
    const GeneratorNet gen = restore_generator(tag, a.config.latent_dim, s, a.generator_weights);
    a.delta = clip_noise(generate_noise(gen, a.latent), a.mode, a.config.epsilon);
    for (std::size_t i = 0; i < a.delta.size(); ++i) {
      if (std::abs(a.delta[i] - stored[i]) > 1e-6) {
        fail(ErrorCode::kCorruptManifest, "noise.bin disagrees with the stored generator");
      }
    }
  } else {
    a.delta = stored;
  }
  check_invariants(a);
  return a;
}

}  // namespace advenc
