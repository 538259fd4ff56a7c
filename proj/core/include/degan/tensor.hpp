#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace degan {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major array of doubles. Images are stored NHWC.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  bool empty() const { return data.empty(); }

  // Leading axis is the batch axis.
  std::size_t batch() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t sample_size() const;
  Shape sample_shape() const { return Shape(shape.begin() + (shape.empty() ? 0 : 1), shape.end()); }

  std::span<double> sample(std::size_t i);
  std::span<const double> sample(std::size_t i) const;

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double& at(std::size_t row, std::size_t col) { return data[row * shape[1] + col]; }
  double at(std::size_t row, std::size_t col) const { return data[row * shape[1] + col]; }

  Tensor reshaped(Shape s) const;
  bool all_finite() const;
};

// Gathers samples `indices` of a batch tensor into a new batch.
Tensor gather_rows(const Tensor& batch, std::span<const std::size_t> indices);

// Stacks same-shaped samples into a batch tensor.
Tensor stack_samples(const std::vector<std::span<const double>>& samples, const Shape& sample_shape);

}  // namespace degan
