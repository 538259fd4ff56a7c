#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "degan/distribution.hpp"
#include "degan/tensor.hpp"

namespace degan {

inline constexpr double kDefaultEpsLog = 1e-12;

// A scalar objective plus the named terms it was assembled from.
struct LossValue {
  double value = 0.0;
  std::map<std::string, double> components;
};

// How the generator's adversarial term is formed.
enum class AdversarialForm {
  literal,         // minimize mean ln(1 - D(G(z)))
  non_saturating,  // minimize -mean ln D(G(z))
};

// Mean ln D(x) over real samples. Probabilities are clamped to [eps, 1] before the log.
LossValue adv_real(std::span<const double> d_real, double eps = kDefaultEpsLog);

// Mean ln(1 - D(G(z))) over generated samples.
LossValue adv_fake(std::span<const double> d_fake, double eps = kDefaultEpsLog);

// Mean per-sample entropy -sum_k y_k ln y_k (natural log).
LossValue entropy_loss(const ClassDistribution& y, double eps = kDefaultEpsLog);

// Entropy of the batch-mean distribution w.
LossValue diversity_loss(const ClassDistribution& y, double eps = kDefaultEpsLog);

// adv_real + adv_fake. The discriminator maximizes this.
LossValue discriminator_loss(std::span<const double> d_real, std::span<const double> d_fake,
                             double eps = kDefaultEpsLog);

// adversarial term + lambda_e * entropy - lambda_d * diversity. The generator minimizes this.
LossValue generator_loss(std::span<const double> d_fake, const ClassDistribution& y, double lambda_e, double lambda_d,
                         AdversarialForm form = AdversarialForm::literal, double eps = kDefaultEpsLog);

// T^2 * mean soft cross-entropy between softmax(teacher/T) and softmax(student/T).
// components: "soft_ce" (== value), "kl" and "teacher_entropy", both T^2-scaled.
LossValue kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature);

struct IncrementalInputs {
  const Tensor& new_logits;              // N x K_total, student on new-class data
  std::span<const std::size_t> labels;   // N global labels in [K_old, K_total)
  const Tensor& frozen_old_logits;       // M x K_old, frozen old model on distillation batch (M may be 0)
  const Tensor& student_old_logits;      // M x K_old, student old-class slice on the same batch
  std::size_t old_classes = 0;
};

// ce + kd_loss(student_old, frozen_old) + reg_weight * R. ce is the
// cross-entropy of the new-class logit slice against the new-class labels;
// R = (mean|old-class logits| - mean|new-class logits|)^2 on the new-data batch.
// components: "ce", "distill", "scale_reg"; they sum to value.
LossValue incremental_loss(const IncrementalInputs& in, double temperature, double reg_weight);

// ---- gradients -------------------------------------------------------------

struct DiscriminatorLossGrad {
  LossValue loss;
  std::vector<double> d_real;  // dL_D / dD(x)
  std::vector<double> d_fake;  // dL_D / dD(G(z))
};
DiscriminatorLossGrad discriminator_loss_grad(std::span<const double> d_real, std::span<const double> d_fake,
                                              double eps = kDefaultEpsLog);

struct GeneratorLossGrad {
  LossValue loss;
  std::vector<double> d_fake;  // dL_G / dD(G(z))
  Tensor probs;                // dL_G / dy, N x K
};
GeneratorLossGrad generator_loss_grad(std::span<const double> d_fake, const ClassDistribution& y, double lambda_e,
                                      double lambda_d, AdversarialForm form = AdversarialForm::literal,
                                      double eps = kDefaultEpsLog);

struct LogitLossGrad {
  LossValue loss;
  Tensor logits;  // dL / dstudent_logits
};
LogitLossGrad kd_loss_grad(const Tensor& student_logits, const Tensor& teacher_logits, double temperature);

struct IncrementalLossGrad {
  LossValue loss;
  Tensor new_logits;          // dL / dnew_logits
  Tensor student_old_logits;  // dL / dstudent_old_logits
};
IncrementalLossGrad incremental_loss_grad(const IncrementalInputs& in, double temperature, double reg_weight);

// Plain mean cross-entropy of logits against integer labels, with gradient.
LogitLossGrad cross_entropy_grad(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace degan
