#include "degan/gradcheck.hpp"

#include <cmath>
#include <string>

#include "degan/errors.hpp"

namespace degan {

std::vector<double> finite_difference_grad(const ScalarFunction& f, std::span<const double> params, double h) {
  if (!(h > 0.0)) throw ArgumentError("finite_difference_grad: step must be positive");
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> grad(p.size(), 0.0);
  auto eval = [&](std::size_t i) {
    const double v = f(p);
    if (!std::isfinite(v)) {
      throw NumericError("finite_difference_grad: non-finite value at coordinate " + std::to_string(i));
    }
    return v;
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    const double up = eval(i);
    p[i] = saved - h;
    const double down = eval(i);
    p[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw ArgumentError("relative_error: size mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nb);
  if (denom < floor) return 0.0;
  return std::sqrt(diff) / denom;
}

}  // namespace degan
