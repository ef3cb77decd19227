#include "advenc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "advenc/error.hpp"

namespace advenc {

std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (data_.size() != shape_volume(shape_)) {
    fail(ErrorCode::kShapeMismatch, "tensor of shape " + shape_to_string(shape_) + " given " +
                                        std::to_string(data_.size()) + " values");
  }
}

std::size_t Tensor::sample_size() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return data_.size() / shape_[0];
}

std::span<double> Tensor::sample(std::size_t i) {
  const std::size_t n = sample_size();
  return std::span<double>(data_).subspan(i * n, n);
}

std::span<const double> Tensor::sample(std::size_t i) const {
  const std::size_t n = sample_size();
  return std::span<const double>(data_).subspan(i * n, n);
}

Tensor Tensor::slice(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0]) {
    fail(ErrorCode::kShapeMismatch, "slice out of range");
  }
  Shape out_shape = shape_;
  out_shape[0] = end - begin;
  const std::size_t n = sample_size();
  return Tensor(std::move(out_shape),
                std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * n),
                                    data_.begin() + static_cast<std::ptrdiff_t>(end * n)));
}

Tensor Tensor::gather(std::span<const std::size_t> indices) const {
  Shape out_shape = shape_;
  out_shape.at(0) = indices.size();
  Tensor out(std::move(out_shape));
  const std::size_t n = sample_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= shape_[0]) fail(ErrorCode::kShapeMismatch, "gather index out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[i] * n), n, out.data() + i * n);
  }
  return out;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_volume(shape) != data_.size()) {
    fail(ErrorCode::kShapeMismatch,
         "cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) fail(ErrorCode::kEmptyInput, "stack of zero tensors");
  Shape shape = items.front().shape();
  shape.insert(shape.begin(), items.size());
  Tensor out(std::move(shape));
  const std::size_t n = items.front().size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items.front().shape()) fail(ErrorCode::kShapeMismatch, "stack of unequal shapes");
    std::copy_n(items[i].data(), n, out.data() + i * n);
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    fail(ErrorCode::kShapeMismatch, "concat " + shape_to_string(a.shape()) + " with " + shape_to_string(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<double> values(a.values().begin(), a.values().end());
  values.insert(values.end(), b.values().begin(), b.values().end());
  return Tensor(std::move(shape), std::move(values));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::kShapeMismatch,
         std::string(what) + ": " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace advenc
