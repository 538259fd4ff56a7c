#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "degan/arch.hpp"
#include "degan/layers.hpp"

namespace degan {

enum class ModelMode { trainable, frozen };

// Per-layer caches recorded by a forward pass, consumed by backward.
struct Trace {
  std::vector<LayerCache> caches;
  bool training = false;
};

struct ModelMetadata {
  ValueRange input_range;        // what the model consumes
  RangeAdapter output_adapter;   // generators: map from output to the paired classifier input
  std::size_t native_size = 0;   // generators: spatial size before centre-cropping
};

// A parameterized differentiable function with a trainable/frozen mode.
// Layers are immutable and shared; parameters and running state are owned,
// so copying a Model yields an independent model.
class Model {
 public:
  Model(ArchSpec arch, Shape input_sample_shape, std::vector<LayerPtr> layers, std::uint64_t init_seed);

  const ArchSpec& arch() const { return arch_; }
  ModelMetadata& metadata() { return meta_; }
  const ModelMetadata& metadata() const { return meta_; }

  ModelMode mode() const { return mode_; }
  bool frozen() const { return mode_ == ModelMode::frozen; }
  void set_mode(ModelMode mode) { mode_ = mode; }

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  const std::vector<LayerPtr>& layers() const { return layers_; }

  std::size_t param_count() const { return params_.size(); }
  std::span<const double> parameters() const { return params_; }
  std::span<double> mutable_parameters();  // throws FrozenModelError when frozen
  std::span<const double> state() const { return state_; }
  void load(std::span<const double> params, std::span<const double> state);  // throws when frozen

  // Stable 64-bit hash of the parameter bytes.
  std::uint64_t param_digest() const;
  std::string digest_hex() const;

  // Inference-mode forward (running statistics, no state change). Safe to call
  // concurrently. Records caches when trace is given.
  Tensor forward(const Tensor& x, Trace* trace = nullptr) const;

  // Training-mode forward: batch statistics, running state updated.
  Tensor forward_train(const Tensor& x, Trace& trace);

  // Batch-statistics forward that leaves running state untouched. Allowed on
  // frozen models.
  Tensor forward_batch_stats(const Tensor& x, Trace* trace = nullptr) const;

  // Back-propagates grad_out through the recorded trace and returns dL/dx.
  // param_grad, when non-empty, must have param_count() entries and is accumulated into.
  Tensor backward(const Trace& trace, const Tensor& grad_out, std::span<double> param_grad = {}) const;

  std::vector<double> zero_grad() const { return std::vector<double>(params_.size(), 0.0); }

 private:
  Tensor run_forward(const Tensor& x, bool training, Trace* trace, std::span<double> state_update) const;
  void check_input(const Tensor& x) const;

  ArchSpec arch_;
  ModelMetadata meta_;
  ModelMode mode_ = ModelMode::trainable;
  Shape input_shape_;
  Shape output_shape_;
  std::vector<LayerPtr> layers_;
  std::vector<std::size_t> param_offset_;
  std::vector<std::size_t> state_offset_;
  std::vector<double> params_;
  std::vector<double> state_;
};

// Returns the model in frozen mode. Frozen models reject training-mode
// forwards, parameter gradients and optimizer steps.
Model freeze(Model model);

std::string digest_to_hex(std::uint64_t digest);

}  // namespace degan
