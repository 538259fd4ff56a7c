#pragma once

#include <vector>

#include "degan/tensor.hpp"

namespace degan {

// Per-sample classifier output rows and their batch mean.
struct ClassDistribution {
  Tensor probs;                    // N x K, rows sum to 1
  std::vector<double> batch_mean;  // column means of probs

  std::size_t rows() const { return probs.batch(); }
  std::size_t classes() const { return probs.rank() == 2 ? probs.dim(1) : 0; }

  // Validates rows (entries in [0,1], sums within tol of 1) and computes the batch mean.
  static ClassDistribution from_probs(Tensor probs, double tol = 1e-6);
};

// Row-wise softmax of an N x K logit matrix, computed with max-subtraction.
ClassDistribution softmax(const Tensor& logits);

// Given dL/dprobs, returns dL/dlogits through the softmax that produced y.
Tensor softmax_backward(const ClassDistribution& y, const Tensor& grad_probs);

// Row-wise log-softmax of logits / temperature.
Tensor log_softmax(const Tensor& logits, double temperature = 1.0);

std::vector<std::size_t> argmax_rows(const Tensor& m);

}  // namespace degan
