#include "degan/distribution.hpp"

#include <algorithm>
#include <cmath>

#include "degan/errors.hpp"

namespace degan {

namespace {
void require_matrix(const Tensor& t, const char* who) {
  if (t.rank() != 2) throw ArgumentError(std::string(who) + ": expected an N x K matrix");
}
}  // namespace

ClassDistribution ClassDistribution::from_probs(Tensor probs, double tol) {
  require_matrix(probs, "ClassDistribution");
  const std::size_t n = probs.dim(0);
  const std::size_t k = probs.dim(1);
  if (n == 0 || k == 0) throw ArgumentError("ClassDistribution: empty distribution");
  ClassDistribution d;
  d.batch_mean.assign(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = probs.at(i, j);
      if (!std::isfinite(p) || p < -tol || p > 1.0 + tol) {
        throw ArgumentError("ClassDistribution: entry outside [0,1] in row " + std::to_string(i));
      }
      sum += p;
      d.batch_mean[j] += p;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw ArgumentError("ClassDistribution: row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
  }
  for (double& w : d.batch_mean) w /= static_cast<double>(n);
  d.probs = std::move(probs);
  return d;
}

ClassDistribution softmax(const Tensor& logits) {
  require_matrix(logits, "softmax");
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.dim(1);
  Tensor p({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (p.at(i, j) = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) p.at(i, j) /= z;
  }
  return ClassDistribution::from_probs(std::move(p));
}

Tensor softmax_backward(const ClassDistribution& y, const Tensor& grad_probs) {
  const std::size_t n = y.rows();
  const std::size_t k = y.classes();
  if (grad_probs.shape != y.probs.shape) throw ArgumentError("softmax_backward: shape mismatch");
  Tensor g({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) dot += grad_probs.at(i, j) * y.probs.at(i, j);
    for (std::size_t j = 0; j < k; ++j) g.at(i, j) = y.probs.at(i, j) * (grad_probs.at(i, j) - dot);
  }
  return g;
}

Tensor log_softmax(const Tensor& logits, double temperature) {
  require_matrix(logits, "log_softmax");
  if (!(temperature > 0.0)) throw ArgumentError("log_softmax: temperature must be positive");
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.dim(1);
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, logits.at(i, j) / temperature);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits.at(i, j) / temperature - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = logits.at(i, j) / temperature - lz;
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& m) {
  require_matrix(m, "argmax_rows");
  std::vector<std::size_t> out(m.dim(0));
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    const double* row = m.data.data() + i * m.dim(1);
    out[i] = static_cast<std::size_t>(std::max_element(row, row + m.dim(1)) - row);
  }
  return out;
}

}  // namespace degan
