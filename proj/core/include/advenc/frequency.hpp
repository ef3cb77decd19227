#pragma once

#include <vector>

#include "advenc/tensor.hpp"

namespace advenc {

/// Ideal circular low-pass mask in the centred 2-D spectrum. The radius is a
/// fraction of the largest radial frequency on the grid (the Nyquist corner),
/// measured in coordinates normalized per axis, so the same fraction means the
/// same thing at 32x32 and 64x64.
struct FrequencyFilterSpec {
  double cutoff_fraction = 0.25;
};

void validate(const FrequencyFilterSpec& spec);

/// H x W mask in unshifted FFT bin order: 1 for bins kept by the low-pass.
std::vector<unsigned char> low_pass_mask(std::size_t height, std::size_t width, const FrequencyFilterSpec& spec);

/// Applies the low-pass to every H x W plane of a C x H x W image or an
/// N x C x H x W batch. Throws kNonFinite for non-finite input.
Tensor low_pass_filter(const Tensor& image, const FrequencyFilterSpec& spec);

/// image - low_pass_filter(image). Both maps are symmetric orthogonal
/// projections, so each is its own adjoint and backpropagation reuses them.
Tensor high_freq_component(const Tensor& image, const FrequencyFilterSpec& spec);

}  // namespace advenc
