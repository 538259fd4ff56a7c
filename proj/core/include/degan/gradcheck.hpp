#pragma once

#include <functional>
#include <span>
#include <vector>

namespace degan {

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central-difference gradient of f at params, one coordinate at a time.
// Throws NumericError if any evaluation is non-finite.
std::vector<double> finite_difference_grad(const ScalarFunction& f, std::span<const double> params,
                                           double h = 1e-5);

// ||a - b|| / (||a|| + ||b||), or 0 when both norms are below `floor`.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

}  // namespace degan
