#include "advenc/frequency.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <utility>

#include "advenc/error.hpp"

namespace advenc {
namespace {

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : data(fftw_alloc_complex(n)) {
    if (!data) fail(ErrorCode::kIo, "fftw allocation failed");
  }
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;

  fftw_complex* data;
};

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

// FFTW planning is not thread-safe, execution of an existing plan on new
// arrays is. Plans are created once per grid size and never destroyed.
const PlanPair& plans_for(std::size_t height, std::size_t width) {
  static std::mutex mutex;
  static std::map<std::pair<std::size_t, std::size_t>, PlanPair> cache;
  std::lock_guard lock(mutex);
  auto [it, inserted] = cache.try_emplace({height, width});
  if (inserted) {
    FftwBuffer scratch(height * width);
    const int h = static_cast<int>(height), w = static_cast<int>(width);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    it->second.forward = fftw_plan_dft_2d(h, w, scratch.data, scratch.data, FFTW_FORWARD, flags);
    it->second.inverse = fftw_plan_dft_2d(h, w, scratch.data, scratch.data, FFTW_BACKWARD, flags);
  }
  return it->second;
}

double signed_frequency(std::size_t k, std::size_t n) {
  return k < (n + 1) / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

}  // namespace

void validate(const FrequencyFilterSpec& spec) {
  if (!(spec.cutoff_fraction > 0.0 && spec.cutoff_fraction < 1.0)) {
    fail(ErrorCode::kInvalidParameter, "cutoff_fraction must lie in (0, 1)");
  }
}

std::vector<unsigned char> low_pass_mask(std::size_t height, std::size_t width, const FrequencyFilterSpec& spec) {
  validate(spec);
  std::vector<unsigned char> mask(height * width);
  const double half_h = static_cast<double>(height) / 2.0;
  const double half_w = static_cast<double>(width) / 2.0;
  for (std::size_t ky = 0; ky < height; ++ky) {
    const double fy = signed_frequency(ky, height) / half_h;
    for (std::size_t kx = 0; kx < width; ++kx) {
      const double fx = signed_frequency(kx, width) / half_w;
      const double radius = std::sqrt((fx * fx + fy * fy) / 2.0);
      mask[ky * width + kx] = radius <= spec.cutoff_fraction ? 1 : 0;
    }
  }
  return mask;
}

Tensor low_pass_filter(const Tensor& image, const FrequencyFilterSpec& spec) {
  if (image.rank() != 3 && image.rank() != 4) {
    fail(ErrorCode::kShapeMismatch, "frequency filter expects C x H x W or N x C x H x W, got " +
                                        shape_to_string(image.shape()));
  }
  const std::size_t height = image.dim(image.rank() - 2);
  const std::size_t width = image.dim(image.rank() - 1);
  if (height < 2 || width < 2) fail(ErrorCode::kShapeMismatch, "frequency filter needs H, W >= 2");
  if (!image.all_finite()) fail(ErrorCode::kNonFinite, "frequency filter input contains non-finite values");

  const auto mask = low_pass_mask(height, width, spec);
  const PlanPair& plans = plans_for(height, width);
  const std::size_t plane = height * width;
  const std::size_t planes = image.size() / plane;
  const double scale = 1.0 / static_cast<double>(plane);

  Tensor out(image.shape());
  FftwBuffer buf(plane);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = image.data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      buf.data[i][0] = src[i];
      buf.data[i][1] = 0.0;
    }
    fftw_execute_dft(plans.forward, buf.data, buf.data);
    for (std::size_t i = 0; i < plane; ++i) {
      if (!mask[i]) {
        buf.data[i][0] = 0.0;
        buf.data[i][1] = 0.0;
      }
    }
    fftw_execute_dft(plans.inverse, buf.data, buf.data);
    double* dst = out.data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = buf.data[i][0] * scale;
  }
  return out;
}

Tensor high_freq_component(const Tensor& image, const FrequencyFilterSpec& spec) {
  Tensor out = low_pass_filter(image, spec);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = image[i] - out[i];
  return out;
}

}  // namespace advenc
