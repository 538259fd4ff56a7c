#include "degan/model.hpp"

#include <cstdio>
#include <cstring>

#include "degan/errors.hpp"

namespace degan {

Model::Model(ArchSpec arch, Shape input_sample_shape, std::vector<LayerPtr> layers, std::uint64_t init_seed)
    : arch_(std::move(arch)), input_shape_(std::move(input_sample_shape)), layers_(std::move(layers)) {
  Shape s = input_shape_;
  std::size_t np = 0;
  std::size_t ns = 0;
  for (const auto& layer : layers_) {
    s = layer->output_shape(s);
    param_offset_.push_back(np);
    state_offset_.push_back(ns);
    np += layer->param_count();
    ns += layer->state_count();
  }
  output_shape_ = s;
  params_.assign(np, 0.0);
  state_.assign(ns, 0.0);

  Engine rng(init_seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    std::span<double> p(params_.data() + param_offset_[i], layers_[i]->param_count());
    std::span<double> st(state_.data() + state_offset_[i], layers_[i]->state_count());
    layers_[i]->init(p, st, rng);
  }
}

std::span<double> Model::mutable_parameters() {
  if (frozen()) throw FrozenModelError("cannot mutate parameters of a frozen model");
  return params_;
}

void Model::load(std::span<const double> params, std::span<const double> state) {
  if (frozen()) throw FrozenModelError("cannot load parameters into a frozen model");
  if (params.size() != params_.size() || state.size() != state_.size()) {
    throw ArgumentError("parameter blob does not match architecture");
  }
  params_.assign(params.begin(), params.end());
  state_.assign(state.begin(), state.end());
}

std::uint64_t Model::param_digest() const {
  std::string_view bytes(reinterpret_cast<const char*>(params_.data()), params_.size() * sizeof(double));
  return fnv1a64(bytes);
}

std::string Model::digest_hex() const { return digest_to_hex(param_digest()); }

std::string digest_to_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

void Model::check_input(const Tensor& x) const {
  if (x.rank() != input_shape_.size() + 1 || x.sample_shape() != input_shape_) {
    throw ArgumentError("model expects samples of shape " + shape_to_string(input_shape_) + ", got " +
                        shape_to_string(x.shape));
  }
  if (x.batch() == 0) throw ArgumentError("model input batch is empty");
}

Tensor Model::run_forward(const Tensor& x, bool training, Trace* trace, std::span<double> state_update) const {
  check_input(x);
  if (trace) {
    trace->caches.assign(layers_.size(), LayerCache{});
    trace->training = training;
  }
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    ForwardArgs args;
    args.params = std::span<const double>(params_.data() + param_offset_[i], layers_[i]->param_count());
    args.state = std::span<const double>(state_.data() + state_offset_[i], layers_[i]->state_count());
    if (!state_update.empty()) args.state_update = state_update.subspan(state_offset_[i], layers_[i]->state_count());
    args.training = training;
    h = layers_[i]->forward(h, args, trace ? &trace->caches[i] : nullptr);
  }
  return h;
}

Tensor Model::forward(const Tensor& x, Trace* trace) const { return run_forward(x, false, trace, {}); }

Tensor Model::forward_train(const Tensor& x, Trace& trace) {
  if (frozen()) throw FrozenModelError("training-mode forward on a frozen model");
  return run_forward(x, true, &trace, state_);
}

Tensor Model::forward_batch_stats(const Tensor& x, Trace* trace) const { return run_forward(x, true, trace, {}); }

Tensor Model::backward(const Trace& trace, const Tensor& grad_out, std::span<double> param_grad) const {
  if (trace.caches.size() != layers_.size()) throw ArgumentError("trace does not belong to this model");
  if (!param_grad.empty()) {
    if (frozen()) throw FrozenModelError("parameter gradients requested for a frozen model");
    if (param_grad.size() != params_.size()) throw ArgumentError("gradient buffer size mismatch");
  }
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    std::span<const double> p(params_.data() + param_offset_[i], layers_[i]->param_count());
    std::span<double> gp;
    if (!param_grad.empty()) gp = param_grad.subspan(param_offset_[i], layers_[i]->param_count());
    g = layers_[i]->backward(g, p, trace.caches[i], gp);
  }
  return g;
}

Model freeze(Model model) {
  model.set_mode(ModelMode::frozen);
  return model;
}

}  // namespace degan
