#include "degan/optimizer.hpp"

#include <cmath>

#include "degan/errors.hpp"

namespace degan {

Adam::Adam(std::size_t param_count, AdamOptions options)
    : opt_(options), m_(param_count, 0.0), v_(param_count, 0.0) {}

void Adam::step(Model& model, std::span<const double> grad) {
  auto params = model.mutable_parameters();
  if (grad.size() != params.size() || params.size() != m_.size()) {
    throw ArgumentError("adam: gradient size does not match parameters");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * grad[i];
    v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * grad[i] * grad[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
  }
}

}  // namespace degan
