#include "degan/losses.hpp"

#include <algorithm>
#include <cmath>

#include "degan/errors.hpp"

namespace degan {

namespace {

void check_probabilities(std::span<const double> p, const char* who) {
  if (p.empty()) throw ArgumentError(std::string(who) + ": empty batch");
  for (double v : p) {
    if (!std::isfinite(v)) throw NumericError(std::string(who) + ": non-finite discriminator output");
    if (v < 0.0 || v > 1.0) throw ArgumentError(std::string(who) + ": discriminator output outside [0,1]");
  }
}

// ln(max(x, eps)) and its derivative in x.
double clamped_log(double x, double eps) { return std::log(std::max(x, eps)); }
double clamped_log_grad(double x, double eps) { return x > eps ? 1.0 / x : 0.0; }

void check_finite(const Tensor& t, const char* who) {
  if (!t.all_finite()) throw NumericError(std::string(who) + ": non-finite input");
}

double mean_abs(const Tensor& logits, std::size_t col_begin, std::size_t col_end) {
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.dim(1);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = col_begin; j < col_end; ++j) sum += std::abs(logits.data[i * k + j]);
  }
  return sum / static_cast<double>(n * (col_end - col_begin));
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

LossValue adv_real(std::span<const double> d_real, double eps) {
  check_probabilities(d_real, "adv_real");
  double sum = 0.0;
  for (double p : d_real) sum += clamped_log(p, eps);
  const double v = sum / static_cast<double>(d_real.size());
  return {v, {{"adv_real", v}}};
}

LossValue adv_fake(std::span<const double> d_fake, double eps) {
  check_probabilities(d_fake, "adv_fake");
  double sum = 0.0;
  for (double p : d_fake) sum += clamped_log(1.0 - p, eps);
  const double v = sum / static_cast<double>(d_fake.size());
  return {v, {{"adv_fake", v}}};
}

LossValue entropy_loss(const ClassDistribution& y, double eps) {
  const std::size_t n = y.rows();
  const std::size_t k = y.classes();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double h = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = y.probs.at(i, j);
      h -= p * clamped_log(p, eps);
    }
    total += h;
  }
  const double v = total / static_cast<double>(n);
  return {v, {{"entropy", v}}};
}

LossValue diversity_loss(const ClassDistribution& y, double eps) {
  double h = 0.0;
  for (double w : y.batch_mean) h -= w * clamped_log(w, eps);
  return {h, {{"diversity", h}}};
}

LossValue discriminator_loss(std::span<const double> d_real, std::span<const double> d_fake, double eps) {
  const LossValue real = adv_real(d_real, eps);
  const LossValue fake = adv_fake(d_fake, eps);
  return {real.value + fake.value, {{"adv_real", real.value}, {"adv_fake", fake.value}}};
}

LossValue generator_loss(std::span<const double> d_fake, const ClassDistribution& y, double lambda_e,
                         double lambda_d, AdversarialForm form, double eps) {
  if (!(lambda_e >= 0.0) || !(lambda_d >= 0.0)) throw ArgumentError("generator_loss: lambda must be >= 0");
  if (y.rows() != d_fake.size()) throw ArgumentError("generator_loss: batch size mismatch");
  double adv = 0.0;
  if (form == AdversarialForm::literal) {
    adv = adv_fake(d_fake, eps).value;
  } else {
    adv = -adv_real(d_fake, eps).value;
  }
  const double ent = entropy_loss(y, eps).value;
  const double div = diversity_loss(y, eps).value;
  return {adv + lambda_e * ent - lambda_d * div, {{"adv", adv}, {"entropy", ent}, {"diversity", div}}};
}

DiscriminatorLossGrad discriminator_loss_grad(std::span<const double> d_real, std::span<const double> d_fake,
                                              double eps) {
  DiscriminatorLossGrad out;
  out.loss = discriminator_loss(d_real, d_fake, eps);
  const double nr = static_cast<double>(d_real.size());
  const double nf = static_cast<double>(d_fake.size());
  out.d_real.resize(d_real.size());
  out.d_fake.resize(d_fake.size());
  for (std::size_t i = 0; i < d_real.size(); ++i) out.d_real[i] = clamped_log_grad(d_real[i], eps) / nr;
  for (std::size_t i = 0; i < d_fake.size(); ++i) out.d_fake[i] = -clamped_log_grad(1.0 - d_fake[i], eps) / nf;
  return out;
}

GeneratorLossGrad generator_loss_grad(std::span<const double> d_fake, const ClassDistribution& y, double lambda_e,
                                      double lambda_d, AdversarialForm form, double eps) {
  GeneratorLossGrad out;
  out.loss = generator_loss(d_fake, y, lambda_e, lambda_d, form, eps);
  const std::size_t n = y.rows();
  const std::size_t k = y.classes();
  const double inv_n = 1.0 / static_cast<double>(n);

  out.d_fake.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.d_fake[i] = form == AdversarialForm::literal ? -clamped_log_grad(1.0 - d_fake[i], eps) * inv_n
                                                     : -clamped_log_grad(d_fake[i], eps) * inv_n;
  }

  // d/dp [-p ln max(p, eps)] = -(ln max(p, eps) + [p > eps]).
  auto neg_plogp_grad = [eps](double p) { return -(clamped_log(p, eps) + (p > eps ? 1.0 : 0.0)); };
  std::vector<double> div_grad(k);
  for (std::size_t j = 0; j < k; ++j) div_grad[j] = neg_plogp_grad(y.batch_mean[j]) * inv_n;

  out.probs = Tensor({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double ent = neg_plogp_grad(y.probs.at(i, j)) * inv_n;
      out.probs.at(i, j) = lambda_e * ent - lambda_d * div_grad[j];
    }
  }
  return out;
}

LogitLossGrad kd_loss_grad(const Tensor& student_logits, const Tensor& teacher_logits, double temperature) {
  if (student_logits.shape != teacher_logits.shape || student_logits.rank() != 2) {
    throw ArgumentError("kd_loss: student " + shape_to_string(student_logits.shape) + " and teacher " +
                        shape_to_string(teacher_logits.shape) + " logits must be matching N x K matrices");
  }
  if (!(temperature > 0.0)) throw ArgumentError("kd_loss: temperature must be positive");
  if (student_logits.dim(0) == 0) throw ArgumentError("kd_loss: empty batch");
  check_finite(student_logits, "kd_loss");
  check_finite(teacher_logits, "kd_loss");

  const std::size_t n = student_logits.dim(0);
  const std::size_t k = student_logits.dim(1);
  const Tensor log_s = log_softmax(student_logits, temperature);
  const Tensor log_t = log_softmax(teacher_logits, temperature);
  const double t2 = temperature * temperature;
  const double inv_n = 1.0 / static_cast<double>(n);

  double ce = 0.0;
  double h_t = 0.0;
  LogitLossGrad out;
  out.logits = Tensor({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double pt = std::exp(log_t.at(i, j));
      const double ps = std::exp(log_s.at(i, j));
      ce -= pt * log_s.at(i, j);
      h_t -= pt * log_t.at(i, j);
      out.logits.at(i, j) = temperature * (ps - pt) * inv_n;
    }
  }
  ce *= t2 * inv_n;
  h_t *= t2 * inv_n;
  out.loss = {ce, {{"soft_ce", ce}, {"kl", ce - h_t}, {"teacher_entropy", h_t}}};
  return out;
}

LossValue kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature) {
  return kd_loss_grad(student_logits, teacher_logits, temperature).loss;
}

LogitLossGrad cross_entropy_grad(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw ArgumentError("cross_entropy: logits must be N x K with N labels");
  }
  check_finite(logits, "cross_entropy");
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.dim(1);
  const Tensor logp = log_softmax(logits);
  const double inv_n = 1.0 / static_cast<double>(n);
  LogitLossGrad out;
  out.logits = Tensor({n, k});
  double ce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw ArgumentError("cross_entropy: label out of range");
    ce -= logp.at(i, labels[i]);
    for (std::size_t j = 0; j < k; ++j) {
      out.logits.at(i, j) = (std::exp(logp.at(i, j)) - (j == labels[i] ? 1.0 : 0.0)) * inv_n;
    }
  }
  ce *= inv_n;
  out.loss = {ce, {{"ce", ce}}};
  return out;
}

IncrementalLossGrad incremental_loss_grad(const IncrementalInputs& in, double temperature, double reg_weight) {
  if (!(reg_weight >= 0.0)) throw ArgumentError("incremental_loss: reg_weight must be >= 0");
  if (in.new_logits.rank() != 2) throw ArgumentError("incremental_loss: new-data logits must be N x K_total");
  const std::size_t n = in.new_logits.dim(0);
  const std::size_t k_total = in.new_logits.dim(1);
  const std::size_t k_old = in.old_classes;
  if (k_old == 0 || k_old >= k_total) throw ArgumentError("incremental_loss: need 0 < K_old < K_total");
  for (std::size_t label : in.labels) {
    if (label < k_old || label >= k_total) {
      throw ArgumentError("incremental_loss: label " + std::to_string(label) + " is not a new class");
    }
  }

  // Cross-entropy over the new-class slice only; old logits get no CE gradient.
  const std::size_t k_new = k_total - k_old;
  Tensor new_slice({n, k_new});
  std::vector<std::size_t> local(in.labels.begin(), in.labels.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k_new; ++j) new_slice.at(i, j) = in.new_logits.at(i, k_old + j);
    local[i] -= k_old;
  }
  const LogitLossGrad ce = cross_entropy_grad(new_slice, local);
  IncrementalLossGrad out;
  out.new_logits = Tensor({n, k_total});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k_new; ++j) out.new_logits.at(i, k_old + j) = ce.logits.at(i, j);
  }

  double distill = 0.0;
  const bool has_distill = in.student_old_logits.size() > 0;
  if (has_distill) {
    if (in.student_old_logits.rank() != 2 || in.student_old_logits.dim(1) != k_old) {
      throw ArgumentError("incremental_loss: distillation logits must be M x K_old");
    }
    LogitLossGrad kd = kd_loss_grad(in.student_old_logits, in.frozen_old_logits, temperature);
    distill = kd.loss.value;
    out.student_old_logits = std::move(kd.logits);
  } else {
    out.student_old_logits = Tensor({0, k_old});
  }

  const double old_scale = mean_abs(in.new_logits, 0, k_old);
  const double new_scale = mean_abs(in.new_logits, k_old, k_total);
  const double gap = old_scale - new_scale;
  const double reg = reg_weight * gap * gap;
  if (reg_weight > 0.0) {
    const double g_old = reg_weight * 2.0 * gap / static_cast<double>(n * k_old);
    const double g_new = -reg_weight * 2.0 * gap / static_cast<double>(n * (k_total - k_old));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k_total; ++j) {
        const double x = in.new_logits.at(i, j);
        out.new_logits.at(i, j) += (j < k_old ? g_old : g_new) * sign(x);
      }
    }
  }

  out.loss = {ce.loss.value + distill + reg,
              {{"ce", ce.loss.value}, {"distill", distill}, {"scale_reg", reg}}};
  return out;
}

LossValue incremental_loss(const IncrementalInputs& in, double temperature, double reg_weight) {
  return incremental_loss_grad(in, temperature, reg_weight).loss;
}

}  // namespace degan
