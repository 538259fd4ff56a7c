#include "degan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "degan/errors.hpp"

namespace degan {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw ArgumentError("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                        shape_to_string(shape));
  }
}

std::size_t Tensor::sample_size() const {
  if (shape.empty() || shape[0] == 0) return 0;
  return data.size() / shape[0];
}

std::span<double> Tensor::sample(std::size_t i) {
  const std::size_t n = sample_size();
  return {data.data() + i * n, n};
}

std::span<const double> Tensor::sample(std::size_t i) const {
  const std::size_t n = sample_size();
  return {data.data() + i * n, n};
}

Tensor Tensor::reshaped(Shape s) const {
  if (shape_size(s) != data.size()) {
    throw ArgumentError("cannot reshape " + shape_to_string(shape) + " to " + shape_to_string(s));
  }
  return Tensor(std::move(s), data);
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Tensor gather_rows(const Tensor& batch, std::span<const std::size_t> indices) {
  Shape s = batch.shape;
  s[0] = indices.size();
  Tensor out(s);
  const std::size_t n = batch.sample_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = batch.sample(indices[i]);
    std::copy(src.begin(), src.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return out;
}

Tensor stack_samples(const std::vector<std::span<const double>>& samples, const Shape& sample_shape) {
  Shape s{samples.size()};
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  Tensor out(s);
  const std::size_t n = shape_size(sample_shape);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != n) throw ArgumentError("stack_samples: sample size mismatch");
    std::copy(samples[i].begin(), samples[i].end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return out;
}

}  // namespace degan
