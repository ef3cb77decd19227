#pragma once

// Minimal layer-based network toolkit: every layer knows its own forward map
// and the vector-Jacobian product of that map, which is all the attack and
// the toy pre-trainers need.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "advenc/tensor.hpp"

namespace advenc::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  /// Conv/linear weights are prunable; biases and normalization affine terms are not.
  bool prunable = false;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  /// Pure forward map, no state recorded.
  virtual Tensor infer(const Tensor& x) const = 0;

  /// Forward map that records its input for a subsequent backward().
  Tensor forward(const Tensor& x);

  /// Returns dL/dx for the recorded input and, unless frozen, adds dL/dparams
  /// into each Parameter::grad.
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual std::vector<Parameter*> parameters() { return {}; }
  std::vector<const Parameter*> parameters() const;

  void set_frozen(bool frozen) { frozen_ = frozen; }
  bool frozen() const { return frozen_; }

 protected:
  Layer() = default;
  Layer(const Layer& other) : frozen_(other.frozen_) {}
  Layer& operator=(const Layer&) = delete;

  const Tensor& recorded_input() const;

  bool frozen_ = false;

 private:
  Tensor input_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding);

  std::string kind() const override { return "conv2d"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }

  std::size_t out_extent(std::size_t in_extent) const;

 private:
  std::size_t in_channels_, out_channels_, kernel_, stride_, padding_;
  Parameter weight_;  // out x (in * k * k)
  Parameter bias_;
};

class Linear final : public Layer {
 public:
  Linear(std::size_t in_features, std::size_t out_features);

  std::string kind() const override { return "linear"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }

 private:
  std::size_t in_features_, out_features_;
  Parameter weight_;  // out x in
  Parameter bias_;
};

/// Per-sample, per-channel normalization over spatial positions with a learned
/// affine map. Has no running statistics, so training and evaluation agree.
class InstanceNorm2d final : public Layer {
 public:
  explicit InstanceNorm2d(std::size_t channels, double eps = 1e-5);

  std::string kind() const override { return "instance_norm2d"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<InstanceNorm2d>(*this); }
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&gamma_, &beta_}; }

 private:
  std::size_t channels_;
  double eps_;
  Parameter gamma_;
  Parameter beta_;
};

class ReLU final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;
};

class Tanh final : public Layer {
 public:
  std::string kind() const override { return "tanh"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Tanh>(*this); }
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;
};

/// Nearest-neighbour x2 spatial upsampling.
class Upsample2x final : public Layer {
 public:
  std::string kind() const override { return "upsample2x"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Upsample2x>(*this); }
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;
};

/// N x C x H x W -> N x C.
class GlobalAvgPool final : public Layer {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;
};

/// Reinterprets the per-sample payload with a new shape (batch axis kept).
class Reshape final : public Layer {
 public:
  explicit Reshape(Shape sample_shape) : sample_shape_(std::move(sample_shape)) {}

  std::string kind() const override { return "reshape"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Reshape>(*this); }
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape sample_shape_;
};

/// Ordered chain of layers with value semantics (copies are deep).
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  Tensor infer(const Tensor& x) const;
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

  void zero_grad();
  void set_frozen(bool frozen);

  /// Zero-mean normal initialization of prunable weights (std given), zero biases,
  /// unit normalization gains.
  void init_normal(double weight_std, std::uint64_t seed);
  /// He-style initialization (std = sqrt(2 / fan_in)) of prunable weights.
  void init_he(std::uint64_t seed);

  /// All parameter values flattened in declaration order.
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(const std::vector<double>& values);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Adam with bias correction.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(const std::vector<Parameter*>& params);
  double learning_rate() const { return lr_; }
  std::int64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Binary parameter container: names, shapes, float64 values, little-endian.
void save_parameters(const Sequential& net, std::ostream& out);
/// Throws kShapeMismatch when stored shapes disagree with the network.
void load_parameters(Sequential& net, std::istream& in);

}  // namespace advenc::nn
