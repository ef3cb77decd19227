#include "advenc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <opencv2/imgcodecs.hpp>
#include <optional>
#include <set>

#include "advenc/error.hpp"

namespace advenc {
namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;
constexpr std::size_t kSyntheticClasses = 10;

// Bilinear sample of the window [y0, y0 + h) x [x0, x0 + w) of `src` plane into `dst`.
void sample_window(const double* src, std::size_t height, std::size_t width, double y0, double x0, double h, double w,
                   double* dst, std::size_t out_h, std::size_t out_w, bool flip) {
  for (std::size_t i = 0; i < out_h; ++i) {
    const double sy = std::clamp(y0 + (static_cast<double>(i) + 0.5) * h / static_cast<double>(out_h) - 0.5, 0.0,
                                 static_cast<double>(height - 1));
    const auto y_lo = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y_hi = std::min(y_lo + 1, height - 1);
    const double fy = sy - static_cast<double>(y_lo);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double sx = std::clamp(x0 + (static_cast<double>(j) + 0.5) * w / static_cast<double>(out_w) - 0.5, 0.0,
                                   static_cast<double>(width - 1));
      const auto x_lo = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x_hi = std::min(x_lo + 1, width - 1);
      const double fx = sx - static_cast<double>(x_lo);
      const double top = src[y_lo * width + x_lo] * (1.0 - fx) + src[y_lo * width + x_hi] * fx;
      const double bottom = src[y_hi * width + x_lo] * (1.0 - fx) + src[y_hi * width + x_hi] * fx;
      dst[i * out_w + (flip ? out_w - 1 - j : j)] = top * (1.0 - fy) + bottom * fy;
    }
  }
}

Tensor resize_batch(const Tensor& batch, const ImageShape& target) {
  const std::size_t n = batch.dim(0);
  if (batch.dim(1) != target.channels) {
    fail(ErrorCode::kShapeMismatch, "dataset has " + std::to_string(batch.dim(1)) + " channels, target " +
                                        to_string(target));
  }
  if (batch.dim(2) == target.height && batch.dim(3) == target.width) return batch;
  Tensor out({n, target.channels, target.height, target.width});
  const std::size_t h = batch.dim(2), w = batch.dim(3);
  for (std::size_t p = 0; p < n * target.channels; ++p) {
    sample_window(batch.data() + p * h * w, h, w, 0.0, 0.0, static_cast<double>(h), static_cast<double>(w),
                  out.data() + p * target.height * target.width, target.height, target.width, false);
  }
  return out;
}

std::vector<std::filesystem::path> sorted_matching(const std::filesystem::path& dir, bool train_split) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() != ".bin") continue;
    const bool is_test = name.rfind("test_batch", 0) == 0;
    const bool is_train = name.rfind("data_batch_", 0) == 0;
    if ((train_split && is_train) || (!train_split && is_test) || (!is_test && !is_train)) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

bool has_bin_files(const std::filesystem::path& dir) {
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".bin") return true;
  }
  return false;
}

double smooth_step(double v) { return std::clamp(v, 0.0, 1.0); }

// Coverage in [0, 1] of the class pattern at pixel centre (u, v).
struct PatternParams {
  std::size_t label = 0;
  double period = 6.0, phase = 0.0, phase2 = 0.0;
  double cx = 16.0, cy = 16.0, radius = 8.0, thickness = 2.5, half_width = 2.0;
};

double pattern_value(const PatternParams& p, double u, double v) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const auto wave = [&](double coord) { return smooth_step(0.5 + 1.5 * std::sin(kTwoPi * coord / p.period + p.phase)); };
  const double dx = u - p.cx, dy = v - p.cy;
  switch (p.label) {
    case 0: return wave(v);
    case 1: return wave(u);
    case 2: return wave((u + v) / std::numbers::sqrt2);
    case 3: return wave((u - v) / std::numbers::sqrt2);
    case 4:
      return smooth_step(0.5 + 1.5 * std::sin(kTwoPi * u / p.period + p.phase) *
                                   std::sin(kTwoPi * v / p.period + p.phase2) * 2.0);
    case 5: return smooth_step(p.radius - std::hypot(dx, dy) + 0.5);
    case 6: return smooth_step(p.thickness / 2.0 - std::abs(std::hypot(dx, dy) - p.radius) + 0.5);
    case 7: return smooth_step(std::min(p.radius - std::abs(dx), p.radius - std::abs(dy)) + 0.5);
    case 8: {
      const double horizontal = std::min(p.radius - std::abs(dx), p.half_width - std::abs(dy));
      const double vertical = std::min(p.half_width - std::abs(dx), p.radius - std::abs(dy));
      return smooth_step(std::max(horizontal, vertical) + 0.5);
    }
    default: {
      const double gx = std::remainder(u - p.phase * p.period, p.period);
      const double gy = std::remainder(v - p.phase2 * p.period, p.period);
      return smooth_step(p.radius - std::hypot(gx, gy) + 0.5);
    }
  }
}

}  // namespace

ImageShape Dataset::image_shape() const {
  if (images.rank() != 4) return {};
  return {images.dim(1), images.dim(2), images.dim(3)};
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{name, images.gather(indices), {}, class_count};
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  return out;
}

Dataset Dataset::head(std::size_t count) const {
  count = std::min(count, size());
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  return subset(idx);
}

std::size_t Dataset::distinct_labels() const { return std::set<int>(labels.begin(), labels.end()).size(); }

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) fail(ErrorCode::kShapeMismatch, "resize expects C x H x W");
  Tensor out({image.dim(0), height, width});
  const std::size_t h = image.dim(1), w = image.dim(2);
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    sample_window(image.data() + c * h * w, h, w, 0.0, 0.0, static_cast<double>(h), static_cast<double>(w),
                  out.data() + c * height * width, height, width, false);
  }
  return out;
}

Dataset load_cifar10_binary(const std::filesystem::path& path, const ImageShape& target, bool train_split,
                            std::size_t limit) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::kMissingFile, path.string());
  const auto files = std::filesystem::is_directory(path) ? sorted_matching(path, train_split)
                                                         : std::vector<std::filesystem::path>{path};
  if (files.empty()) fail(ErrorCode::kMissingFile, "no CIFAR-10 batch files under " + path.string());

  std::vector<unsigned char> bytes;
  for (const auto& file : files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail(ErrorCode::kMissingFile, file.string());
    bytes.insert(bytes.end(), std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  if (bytes.size() % kCifarRecord != 0) fail(ErrorCode::kIo, "CIFAR-10 data is not a whole number of records");
  std::size_t n = bytes.size() / kCifarRecord;
  if (limit > 0) n = std::min(n, limit);

  Tensor raw({n, 3, kCifarSide, kCifarSide});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kCifarRecord;
    labels[i] = rec[0];
    for (std::size_t j = 0; j < kCifarRecord - 1; ++j) raw[i * (kCifarRecord - 1) + j] = rec[1 + j] / 255.0;
  }
  const int max_label = n ? *std::max_element(labels.begin(), labels.end()) : 0;
  return Dataset{path.filename().string(), resize_batch(raw, target), std::move(labels),
                 static_cast<std::size_t>(std::max(10, max_label + 1))};
}

void write_cifar10_binary(const Dataset& data, const std::filesystem::path& file) {
  if (data.image_shape() != ImageShape{3, kCifarSide, kCifarSide}) {
    fail(ErrorCode::kShapeMismatch, "CIFAR-10 records are 3x32x32, dataset is " + to_string(data.image_shape()));
  }
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + file.string());
  std::vector<unsigned char> rec(kCifarRecord);
  for (std::size_t i = 0; i < data.size(); ++i) {
    rec[0] = static_cast<unsigned char>(data.labels[i]);
    const auto px = data.images.sample(i);
    for (std::size_t j = 0; j < px.size(); ++j) {
      rec[1 + j] = static_cast<unsigned char>(std::lround(std::clamp(px[j], 0.0, 1.0) * 255.0));
    }
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
}

Dataset load_image_folder(const std::filesystem::path& root, const ImageShape& target, std::size_t limit) {
  if (!std::filesystem::is_directory(root)) fail(ErrorCode::kMissingFile, root.string());
  std::vector<std::filesystem::path> class_dirs;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) fail(ErrorCode::kEmptyInput, "no class directories under " + root.string());

  std::vector<Tensor> images;
  std::vector<int> labels;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(class_dirs[label])) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      const cv::Mat bgr = cv::imread(file.string(), target.channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
      if (bgr.empty()) continue;
      const auto h = static_cast<std::size_t>(bgr.rows), w = static_cast<std::size_t>(bgr.cols);
      const std::size_t channels = static_cast<std::size_t>(bgr.channels());
      Tensor img({channels, h, w});
      for (std::size_t y = 0; y < h; ++y) {
        const unsigned char* row = bgr.ptr<unsigned char>(static_cast<int>(y));
        for (std::size_t x = 0; x < w; ++x) {
          for (std::size_t c = 0; c < channels; ++c) {
            // OpenCV stores BGR; tensors are RGB.
            img[(c * h + y) * w + x] = row[x * channels + (channels - 1 - c)] / 255.0;
          }
        }
      }
      images.push_back(resize_bilinear(img, target.height, target.width));
      labels.push_back(static_cast<int>(label));
      if (limit > 0 && images.size() >= limit) break;
    }
    if (limit > 0 && images.size() >= limit) break;
  }
  if (images.empty()) fail(ErrorCode::kEmptyInput, "no readable images under " + root.string());
  return Dataset{root.filename().string(), stack(images), std::move(labels), class_dirs.size()};
}

Dataset make_synthetic_cifar(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> pixel_noise(0.0, 0.03);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  constexpr std::size_t side = kCifarSide;
  Tensor images({count, 3, side, side});
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    PatternParams p;
    p.label = i % kSyntheticClasses;
    p.period = uniform(4.0, 8.0);
    p.phase = uniform(0.0, 2.0 * std::numbers::pi);
    p.phase2 = uniform(0.0, 2.0 * std::numbers::pi);
    p.cx = uniform(11.0, 21.0);
    p.cy = uniform(11.0, 21.0);
    switch (p.label) {
      case 5: p.radius = uniform(6.0, 10.0); break;
      case 6: p.radius = uniform(7.0, 11.0); p.thickness = uniform(2.0, 3.5); break;
      case 7: p.radius = uniform(5.0, 9.0); break;
      case 8: p.radius = uniform(8.0, 12.0); p.half_width = uniform(1.5, 3.0); break;
      case 9:
        p.period = uniform(6.0, 9.0);
        p.radius = uniform(1.5, 2.5);
        p.phase = unit(rng);
        p.phase2 = unit(rng);
        break;
      default: break;
    }
    double fg[3], bg[3];
    do {
      for (int c = 0; c < 3; ++c) {
        fg[c] = unit(rng);
        bg[c] = unit(rng);
      }
    } while ((std::abs(fg[0] - bg[0]) + std::abs(fg[1] - bg[1]) + std::abs(fg[2] - bg[2])) / 3.0 < 0.3);

    auto px = images.sample(i);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double cover = pattern_value(p, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = bg[c] + (fg[c] - bg[c]) * cover + pixel_noise(rng);
          px[(c * side + y) * side + x] = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
        }
      }
    }
    labels[i] = static_cast<int>(p.label);
  }
  return Dataset{"synthetic:" + std::to_string(count) + ":" + std::to_string(seed), std::move(images),
                 std::move(labels), kSyntheticClasses};
}

std::filesystem::path cache_directory() {
  if (const char* env = std::getenv("ADVENC_CACHE_DIR"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home) return std::filesystem::path(home) / ".cache" / "advenc";
  return std::filesystem::temp_directory_path() / "advenc-cache";
}

namespace {

struct SyntheticRef {
  std::size_t count;
  std::uint64_t seed;
};

std::optional<SyntheticRef> parse_synthetic(const std::string& reference) {
  constexpr std::string_view prefix = "synthetic:";
  if (reference.rfind(prefix, 0) != 0) return std::nullopt;
  const std::string rest = reference.substr(prefix.size());
  const auto colon = rest.find(':');
  try {
    if (colon == std::string::npos) return SyntheticRef{std::stoul(rest), 0};
    return SyntheticRef{std::stoul(rest.substr(0, colon)), std::stoull(rest.substr(colon + 1))};
  } catch (const std::exception&) {
    fail(ErrorCode::kParseError, "synthetic reference must be synthetic:<count>:<seed>, got " + reference);
  }
}

std::optional<std::filesystem::path> locate(const std::string& reference) {
  if (std::filesystem::exists(reference)) return std::filesystem::path(reference);
  const auto cached = cache_directory() / "datasets" / reference;
  if (std::filesystem::exists(cached)) return cached;
  return std::nullopt;
}

}  // namespace

bool dataset_reference_exists(const std::string& reference) {
  return parse_synthetic(reference).has_value() || locate(reference).has_value();
}

Dataset resolve_dataset(const std::string& reference, const ImageShape& target, bool train_split) {
  if (const auto synth = parse_synthetic(reference)) {
    Dataset data = make_synthetic_cifar(synth->count, synth->seed);
    data.images = resize_batch(data.images, target);
    return data;
  }
  const auto path = locate(reference);
  if (!path) fail(ErrorCode::kUnresolvedReference, "dataset '" + reference + "' not found");
  Dataset data = std::filesystem::is_directory(*path) && !has_bin_files(*path)
                     ? load_image_folder(*path, target)
                     : load_cifar10_binary(*path, target, train_split);
  data.name = reference;
  return data;
}

Tensor augment_batch(const Tensor& batch, std::mt19937_64& rng, const AugmentSpec& spec) {
  if (batch.rank() != 4) fail(ErrorCode::kShapeMismatch, "augment expects N x C x H x W");
  const std::size_t n = batch.dim(0), channels = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::size_t plane = h * w;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Tensor out(batch.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double scale = uniform(spec.crop_scale_min, 1.0);
    const double ratio = std::exp(uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    const double crop_w = std::min(static_cast<double>(w), std::sqrt(scale * ratio) * static_cast<double>(w));
    const double crop_h = std::min(static_cast<double>(h), std::sqrt(scale / ratio) * static_cast<double>(h));
    const double y0 = uniform(0.0, static_cast<double>(h) - crop_h);
    const double x0 = uniform(0.0, static_cast<double>(w) - crop_w);
    const bool flip = unit(rng) < spec.flip_probability;
    const double s = spec.jitter_strength;
    const double brightness = uniform(1.0 - s, 1.0 + s);
    const double contrast = uniform(1.0 - s, 1.0 + s);
    const double saturation = uniform(1.0 - s, 1.0 + s);

    double* dst = out.sample(i).data();
    const double* src = batch.sample(i).data();
    for (std::size_t c = 0; c < channels; ++c) {
      sample_window(src + c * plane, h, w, y0, x0, crop_h, crop_w, dst + c * plane, h, w, flip);
    }
    for (std::size_t k = 0; k < channels * plane; ++k) dst[k] = std::clamp(dst[k] * brightness, 0.0, 1.0);
    if (channels == 3) {
      std::vector<double> gray(plane);
      double mean = 0.0;
      for (std::size_t k = 0; k < plane; ++k) {
        gray[k] = 0.299 * dst[k] + 0.587 * dst[plane + k] + 0.114 * dst[2 * plane + k];
        mean += gray[k];
      }
      mean /= static_cast<double>(plane);
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t k = 0; k < plane; ++k) {
          double v = (dst[c * plane + k] - mean) * contrast + mean;
          const double g = (gray[k] - mean) * contrast + mean;
          v = g + (v - g) * saturation;
          dst[c * plane + k] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order, std::size_t batch_size) {
  if (batch_size == 0) fail(ErrorCode::kInvalidParameter, "batch size must be positive");
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace advenc
