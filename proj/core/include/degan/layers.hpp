#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "degan/rng.hpp"
#include "degan/tensor.hpp"

namespace degan {

// Everything a layer needs from forward to run its backward pass.
struct LayerCache {
  Tensor input;
  Tensor output;
  Tensor aux;                     // im2col buffer, normalized activations, ...
  std::vector<double> channel;    // per-channel scratch (batch-norm inverse std)
  bool training = false;
};

enum class InitScheme {
  dcgan,  // N(0, 0.02) weights, zero bias
  he,     // N(0, 2 / fan_in) weights, zero bias
};

struct ForwardArgs {
  std::span<const double> params;
  std::span<const double> state;
  std::span<double> state_update;  // empty unless training with running statistics
  bool training = false;
};

// Stateless layer description. Parameters and running state live in the
// owning model's flat buffers so a model copies by value.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string name() const = 0;
  virtual Shape output_shape(const Shape& sample_in) const = 0;
  virtual std::size_t param_count() const { return 0; }
  virtual std::size_t state_count() const { return 0; }
  virtual void init(std::span<double> params, std::span<double> state, Engine& rng) const;

  virtual Tensor forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const = 0;

  // Returns dL/dx. Accumulates dL/dparams into grad_params when it is non-empty.
  virtual Tensor backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                          std::span<double> grad_params) const = 0;
};

using LayerPtr = std::shared_ptr<const Layer>;

// Square-kernel convolution geometry shared by Conv2d and ConvTranspose2d.
struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t conv_out(std::size_t in) const;        // conv output extent
  std::size_t transposed_out(std::size_t in) const;  // transposed-conv output extent
};

class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out, InitScheme init = InitScheme::he);
  std::string name() const override { return "dense"; }
  Shape output_shape(const Shape& sample_in) const override;
  std::size_t param_count() const override { return in_ * out_ + out_; }
  void init(std::span<double> params, std::span<double> state, Engine& rng) const override;
  Tensor forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                  std::span<double> grad_params) const override;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t in_;
  std::size_t out_;
  InitScheme scheme_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, ConvGeometry geom, InitScheme init = InitScheme::he);
  std::string name() const override { return "conv2d"; }
  Shape output_shape(const Shape& sample_in) const override;
  std::size_t param_count() const override;
  void init(std::span<double> params, std::span<double> state, Engine& rng) const override;
  Tensor forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                  std::span<double> grad_params) const override;

 private:
  std::size_t cin_;
  std::size_t cout_;
  ConvGeometry geom_;
  InitScheme scheme_;
};

class ConvTranspose2d final : public Layer {
 public:
  ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, ConvGeometry geom,
                  InitScheme init = InitScheme::dcgan);
  std::string name() const override { return "conv_transpose2d"; }
  Shape output_shape(const Shape& sample_in) const override;
  std::size_t param_count() const override;
  void init(std::span<double> params, std::span<double> state, Engine& rng) const override;
  Tensor forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                  std::span<double> grad_params) const override;

 private:
  std::size_t cin_;
  std::size_t cout_;
  ConvGeometry geom_;
  InitScheme scheme_;
};

// Normalizes over every axis but the last (channel) axis.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(std::size_t channels, double momentum = 0.1, double eps = 1e-5);
  std::string name() const override { return "batch_norm"; }
  Shape output_shape(const Shape& sample_in) const override { return sample_in; }
  std::size_t param_count() const override { return 2 * channels_; }
  std::size_t state_count() const override { return 2 * channels_; }
  void init(std::span<double> params, std::span<double> state, Engine& rng) const override;
  Tensor forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                  std::span<double> grad_params) const override;

 private:
  std::size_t channels_;
  double momentum_;
  double eps_;
};

class Relu final : public Layer {
 public:
  std::string name() const override { return "relu"; }
  Shape output_shape(const Shape& sample_in) const override { return sample_in; }
  Tensor forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                  std::span<double> grad_params) const override;
};

class LeakyRelu final : public Layer {
 public:
  explicit LeakyRelu(double slope = 0.2) : slope_(slope) {}
  std::string name() const override { return "leaky_relu"; }
  Shape output_shape(const Shape& sample_in) const override { return sample_in; }
  Tensor forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                  std::span<double> grad_params) const override;

 private:
  double slope_;
};

class Tanh final : public Layer {
 public:
  std::string name() const override { return "tanh"; }
  Shape output_shape(const Shape& sample_in) const override { return sample_in; }
  Tensor forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                  std::span<double> grad_params) const override;
};

class Sigmoid final : public Layer {
 public:
  std::string name() const override { return "sigmoid"; }
  Shape output_shape(const Shape& sample_in) const override { return sample_in; }
  Tensor forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                  std::span<double> grad_params) const override;
};

// Reinterprets each sample with a new shape of equal size.
class Reshape final : public Layer {
 public:
  explicit Reshape(Shape sample_shape) : target_(std::move(sample_shape)) {}
  std::string name() const override { return "reshape"; }
  Shape output_shape(const Shape& sample_in) const override;
  Tensor forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                  std::span<double> grad_params) const override;

 private:
  Shape target_;
};

// Crops the spatial centre of an HWC sample.
class CenterCrop final : public Layer {
 public:
  CenterCrop(std::size_t height, std::size_t width) : height_(height), width_(width) {}
  std::string name() const override { return "center_crop"; }
  Shape output_shape(const Shape& sample_in) const override;
  Tensor forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                  std::span<double> grad_params) const override;

 private:
  std::size_t height_;
  std::size_t width_;
};

}  // namespace degan
