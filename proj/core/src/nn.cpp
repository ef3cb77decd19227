#include "advenc/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <utility>

#include "advenc/error.hpp"

namespace advenc::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

void require_rank(const Tensor& x, std::size_t rank, const char* layer) {
  if (x.rank() != rank) {
    fail(ErrorCode::kShapeMismatch,
         std::string(layer) + " expects rank " + std::to_string(rank) + ", got " + shape_to_string(x.shape()));
  }
}

Parameter make_param(std::string name, Shape shape, bool prunable, double fill = 0.0) {
  Parameter p;
  p.name = std::move(name);
  p.value = Tensor(shape, fill);
  p.grad = Tensor(std::move(shape));
  p.prunable = prunable;
  return p;
}

// Rows indexed by (c, kh, kw), columns by output position.
void im2col(const double* image, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t padding, std::size_t out_h, std::size_t out_w, double* col) {
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t kh = 0; kh < kernel; ++kh) {
      for (std::size_t kw = 0; kw < kernel; ++kw) {
        double* row = col + ((c * kernel + kh) * kernel + kw) * out_h * out_w;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - pad;
          double* dst = row + oh * out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) {
            std::fill_n(dst, out_w, 0.0);
            continue;
          }
          const double* src = image + (c * height + static_cast<std::size_t>(ih)) * width;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) - pad;
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t padding, std::size_t out_h, std::size_t out_w, double* image) {
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t kh = 0; kh < kernel; ++kh) {
      for (std::size_t kw = 0; kw < kernel; ++kw) {
        const double* row = col + ((c * kernel + kh) * kernel + kw) * out_h * out_w;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) continue;
          double* dst = image + (c * height + static_cast<std::size_t>(ih)) * width;
          const double* src = row + oh * out_w;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) - pad;
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Layer

Tensor Layer::forward(const Tensor& x) {
  input_ = x;
  return infer(x);
}

std::vector<const Parameter*> Layer::parameters() const {
  auto mutable_params = const_cast<Layer*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

const Tensor& Layer::recorded_input() const {
  if (input_.empty()) fail(ErrorCode::kInvalidParameter, kind() + ": backward() without forward()");
  return input_;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
               std::size_t padding)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      weight_(make_param("weight", {out_channels, in_channels * kernel * kernel}, true)),
      bias_(make_param("bias", {out_channels}, false)) {
  if (kernel == 0 || stride == 0) fail(ErrorCode::kInvalidParameter, "conv2d kernel and stride must be positive");
}

std::size_t Conv2d::out_extent(std::size_t in_extent) const {
  if (in_extent + 2 * padding_ < kernel_) fail(ErrorCode::kShapeMismatch, "conv2d input smaller than kernel");
  return (in_extent + 2 * padding_ - kernel_) / stride_ + 1;
}

Tensor Conv2d::infer(const Tensor& x) const {
  require_rank(x, 4, "conv2d");
  if (x.dim(1) != in_channels_) fail(ErrorCode::kShapeMismatch, "conv2d channel mismatch");
  const std::size_t batch = x.dim(0), height = x.dim(2), width = x.dim(3);
  const std::size_t out_h = out_extent(height), out_w = out_extent(width);
  const std::size_t patch = in_channels_ * kernel_ * kernel_;
  const std::size_t positions = out_h * out_w;

  Tensor y({batch, out_channels_, out_h, out_w});
  RowMat col(patch, positions);
  ConstRowMap w(weight_.value.data(), out_channels_, patch);
  Eigen::Map<const Eigen::VectorXd> b(bias_.value.data(), out_channels_);
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(x.sample(n).data(), in_channels_, height, width, kernel_, stride_, padding_, out_h, out_w, col.data());
    RowMap out(y.sample(n).data(), out_channels_, positions);
    out.noalias() = w * col;
    out.colwise() += b;
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = recorded_input();
  const std::size_t batch = x.dim(0), height = x.dim(2), width = x.dim(3);
  const std::size_t out_h = out_extent(height), out_w = out_extent(width);
  const std::size_t patch = in_channels_ * kernel_ * kernel_;
  const std::size_t positions = out_h * out_w;
  if (grad_out.shape() != Shape{batch, out_channels_, out_h, out_w}) {
    fail(ErrorCode::kShapeMismatch, "conv2d backward gradient shape");
  }

  Tensor dx(x.shape());
  RowMat col(patch, positions);
  RowMat dcol(patch, positions);
  ConstRowMap w(weight_.value.data(), out_channels_, patch);
  RowMap dw(weight_.grad.data(), out_channels_, patch);
  Eigen::Map<Eigen::VectorXd> db(bias_.grad.data(), out_channels_);
  for (std::size_t n = 0; n < batch; ++n) {
    ConstRowMap g(grad_out.sample(n).data(), out_channels_, positions);
    if (!frozen_) {
      im2col(x.sample(n).data(), in_channels_, height, width, kernel_, stride_, padding_, out_h, out_w, col.data());
      dw.noalias() += g * col.transpose();
      db += g.rowwise().sum();
    }
    dcol.noalias() = w.transpose() * g;
    col2im(dcol.data(), in_channels_, height, width, kernel_, stride_, padding_, out_h, out_w, dx.sample(n).data());
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::size_t in_features, std::size_t out_features)
    : in_features_(in_features),
      out_features_(out_features),
      weight_(make_param("weight", {out_features, in_features}, true)),
      bias_(make_param("bias", {out_features}, false)) {}

Tensor Linear::infer(const Tensor& x) const {
  require_rank(x, 2, "linear");
  if (x.dim(1) != in_features_) fail(ErrorCode::kShapeMismatch, "linear input width mismatch");
  const std::size_t batch = x.dim(0);
  Tensor y({batch, out_features_});
  ConstRowMap in(x.data(), batch, in_features_);
  ConstRowMap w(weight_.value.data(), out_features_, in_features_);
  Eigen::Map<const Eigen::RowVectorXd> b(bias_.value.data(), out_features_);
  RowMap out(y.data(), batch, out_features_);
  out.noalias() = in * w.transpose();
  out.rowwise() += b;
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  const Tensor& x = recorded_input();
  const std::size_t batch = x.dim(0);
  if (grad_out.shape() != Shape{batch, out_features_}) fail(ErrorCode::kShapeMismatch, "linear backward gradient shape");
  ConstRowMap g(grad_out.data(), batch, out_features_);
  ConstRowMap in(x.data(), batch, in_features_);
  if (!frozen_) {
    RowMap dw(weight_.grad.data(), out_features_, in_features_);
    Eigen::Map<Eigen::RowVectorXd> db(bias_.grad.data(), out_features_);
    dw.noalias() += g.transpose() * in;
    db += g.colwise().sum();
  }
  Tensor dx(x.shape());
  ConstRowMap w(weight_.value.data(), out_features_, in_features_);
  RowMap(dx.data(), batch, in_features_).noalias() = g * w;
  return dx;
}

// ---------------------------------------------------------------------------
// InstanceNorm2d

InstanceNorm2d::InstanceNorm2d(std::size_t channels, double eps)
    : channels_(channels),
      eps_(eps),
      gamma_(make_param("gamma", {channels}, false, 1.0)),
      beta_(make_param("beta", {channels}, false)) {}

Tensor InstanceNorm2d::infer(const Tensor& x) const {
  require_rank(x, 4, "instance_norm2d");
  if (x.dim(1) != channels_) fail(ErrorCode::kShapeMismatch, "instance_norm2d channel mismatch");
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor y(x.shape());
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const double* src = x.data() + (n * channels_ + c) * plane;
      double* dst = y.data() + (n * channels_ + c) * plane;
      double mean = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mean += src[i];
      mean /= static_cast<double>(plane);
      double var = 0.0;
      for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<double>(plane);
      const double inv_std = 1.0 / std::sqrt(var + eps_);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = gamma_.value[c] * (src[i] - mean) * inv_std + beta_.value[c];
    }
  }
  return y;
}

Tensor InstanceNorm2d::backward(const Tensor& grad_out) {
  const Tensor& x = recorded_input();
  require_same_shape(x, grad_out, "instance_norm2d backward");
  const std::size_t plane = x.dim(2) * x.dim(3);
  const double inv_plane = 1.0 / static_cast<double>(plane);
  Tensor dx(x.shape());
  std::vector<double> xhat(plane);
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const double* src = x.data() + (n * channels_ + c) * plane;
      const double* g = grad_out.data() + (n * channels_ + c) * plane;
      double* dst = dx.data() + (n * channels_ + c) * plane;
      double mean = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mean += src[i];
      mean *= inv_plane;
      double var = 0.0;
      for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mean) * (src[i] - mean);
      var *= inv_plane;
      const double inv_std = 1.0 / std::sqrt(var + eps_);
      double sum_g = 0.0, sum_g_xhat = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[i] = (src[i] - mean) * inv_std;
        sum_g += g[i];
        sum_g_xhat += g[i] * xhat[i];
      }
      if (!frozen_) {
        gamma_.grad[c] += sum_g_xhat;
        beta_.grad[c] += sum_g;
      }
      const double scale = gamma_.value[c] * inv_std;
      for (std::size_t i = 0; i < plane; ++i) {
        dst[i] = scale * (g[i] - inv_plane * sum_g - xhat[i] * inv_plane * sum_g_xhat);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Pointwise and shape layers

Tensor ReLU::infer(const Tensor& x) const {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  const Tensor& x = recorded_input();
  require_same_shape(x, grad_out, "relu backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return dx;
}

Tensor Tanh::infer(const Tensor& x) const {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

Tensor Tanh::backward(const Tensor& grad_out) {
  const Tensor& x = recorded_input();
  require_same_shape(x, grad_out, "tanh backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = std::tanh(x[i]);
    dx[i] = grad_out[i] * (1.0 - t * t);
  }
  return dx;
}

Tensor Upsample2x::infer(const Tensor& x) const {
  require_rank(x, 4, "upsample2x");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = y.data() + p * 4 * h * w;
    for (std::size_t r = 0; r < 2 * h; ++r) {
      for (std::size_t c = 0; c < 2 * w; ++c) dst[r * 2 * w + c] = src[(r / 2) * w + c / 2];
    }
  }
  return y;
}

Tensor Upsample2x::backward(const Tensor& grad_out) {
  const Tensor& x = recorded_input();
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (grad_out.shape() != Shape{x.dim(0), x.dim(1), 2 * h, 2 * w}) {
    fail(ErrorCode::kShapeMismatch, "upsample2x backward gradient shape");
  }
  Tensor dx(x.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = grad_out.data() + p * 4 * h * w;
    double* dst = dx.data() + p * h * w;
    for (std::size_t r = 0; r < 2 * h; ++r) {
      for (std::size_t c = 0; c < 2 * w; ++c) dst[(r / 2) * w + c / 2] += src[r * 2 * w + c];
    }
  }
  return dx;
}

Tensor GlobalAvgPool::infer(const Tensor& x) const {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor y({x.dim(0), x.dim(1)});
  for (std::size_t i = 0; i < y.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += x[i * plane + j];
    y[i] = s / static_cast<double>(plane);
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  const Tensor& x = recorded_input();
  const std::size_t plane = x.dim(2) * x.dim(3);
  if (grad_out.shape() != Shape{x.dim(0), x.dim(1)}) fail(ErrorCode::kShapeMismatch, "global_avg_pool backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const double g = grad_out[i] / static_cast<double>(plane);
    std::fill_n(dx.data() + i * plane, plane, g);
  }
  return dx;
}

Tensor Reshape::infer(const Tensor& x) const {
  Shape shape = sample_shape_;
  shape.insert(shape.begin(), x.dim(0));
  return x.reshaped(std::move(shape));
}

Tensor Reshape::backward(const Tensor& grad_out) { return grad_out.reshaped(recorded_input().shape()); }

// ---------------------------------------------------------------------------
// Sequential

Sequential::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Tensor Sequential::infer(const Tensor& x) const {
  Tensor h = x;
  for (const auto& l : layers_) h = l->infer(h);
  return h;
}

Tensor Sequential::forward(const Tensor& x) {
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<Parameter*> Sequential::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    for (Parameter* p : l->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> Sequential::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& l : layers_) {
    for (const Parameter* p : std::as_const(*l).parameters()) out.push_back(p);
  }
  return out;
}

std::size_t Sequential::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

void Sequential::zero_grad() {
  for (Parameter* p : parameters()) p->grad.fill(0.0);
}

void Sequential::set_frozen(bool frozen) {
  for (auto& l : layers_) l->set_frozen(frozen);
}

void Sequential::init_normal(double weight_std, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, weight_std);
  for (Parameter* p : parameters()) {
    if (p->prunable) {
      for (double& v : p->value.values()) v = normal(rng);
    } else {
      p->value.fill(p->name == "gamma" ? 1.0 : 0.0);
    }
  }
}

void Sequential::init_he(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (Parameter* p : parameters()) {
    if (p->prunable) {
      const double fan_in = static_cast<double>(p->value.dim(1));
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
      for (double& v : p->value.values()) v = normal(rng);
    } else {
      p->value.fill(p->name == "gamma" ? 1.0 : 0.0);
    }
  }
}

std::vector<double> Sequential::flat_parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const Parameter* p : parameters()) out.insert(out.end(), p->value.values().begin(), p->value.values().end());
  return out;
}

void Sequential::set_flat_parameters(const std::vector<double>& values) {
  if (values.size() != parameter_count()) fail(ErrorCode::kShapeMismatch, "flat parameter count mismatch");
  std::size_t offset = 0;
  for (Parameter* p : parameters()) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), p->value.size(), p->value.data());
    offset += p->value.size();
  }
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<Parameter*>& params) {
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) fail(ErrorCode::kInvalidParameter, "adam parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[4] = {'A', 'D', 'V', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail(ErrorCode::kIo, "truncated weight stream");
  return v;
}

}  // namespace

void save_parameters(const Sequential& net, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  const auto params = net.parameters();
  write_pod(out, static_cast<std::uint64_t>(params.size()));
  for (const Parameter* p : params) {
    write_pod(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod(out, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) write_pod(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) fail(ErrorCode::kIo, "failed writing weight stream");
}

void load_parameters(Sequential& net, std::istream& in) {
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 4, kMagic)) fail(ErrorCode::kIo, "not a weight file");
  if (read_pod<std::uint32_t>(in) != kVersion) fail(ErrorCode::kIo, "unsupported weight file version");
  auto params = net.parameters();
  const auto count = read_pod<std::uint64_t>(in);
  if (count != params.size()) {
    fail(ErrorCode::kShapeMismatch, "weight file holds " + std::to_string(count) + " tensors, network has " +
                                        std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = read_pod<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
    if (shape != p->value.shape() || name != p->name) {
      fail(ErrorCode::kShapeMismatch, "stored tensor " + name + shape_to_string(shape) + " does not match " + p->name +
                                          shape_to_string(p->value.shape()));
    }
    in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!in) fail(ErrorCode::kIo, "truncated weight stream");
  }
}

}  // namespace advenc::nn
