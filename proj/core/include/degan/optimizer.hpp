#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "degan/model.hpp"

namespace degan {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimizer bound to one model's parameter vector.
class Adam {
 public:
  Adam(std::size_t param_count, AdamOptions options);

  // Applies one update. Throws FrozenModelError for a frozen model.
  void step(Model& model, std::span<const double> grad);

  std::size_t steps() const { return t_; }
  const AdamOptions& options() const { return opt_; }

 private:
  AdamOptions opt_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

}  // namespace degan
