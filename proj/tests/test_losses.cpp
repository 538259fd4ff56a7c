#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "degan/errors.hpp"
#include "degan/losses.hpp"

namespace degan {
namespace {

constexpr double kTol = 1e-6;

ClassDistribution rows(std::size_t k, std::vector<double> values) {
  const std::size_t n = values.size() / k;
  return ClassDistribution::from_probs(Tensor({n, k}, std::move(values)));
}

ClassDistribution uniform_rows(std::size_t n, std::size_t k) {
  return rows(k, std::vector<double>(n * k, 1.0 / static_cast<double>(k)));
}

ClassDistribution random_distribution(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 2.0);
  Tensor logits({n, k});
  for (double& v : logits.data) v = g(rng);
  return softmax(logits);
}

TEST(AdvReal, AllOnesIsZero) {
  const std::vector<double> d{1.0, 1.0, 1.0};
  EXPECT_NEAR(adv_real(d).value, 0.0, kTol);
}

TEST(AdvReal, ScalarOracles) {
  EXPECT_NEAR(adv_real(std::vector<double>{0.5, 0.5}).value, -0.693147, kTol);
  EXPECT_NEAR(adv_real(std::vector<double>{0.9, 0.1}).value, -1.203973, kTol);
}

TEST(AdvReal, ZeroIsClampedNotInfinite) {
  const double v = adv_real(std::vector<double>{0.0}, 1e-12).value;
  EXPECT_NEAR(v, std::log(1e-12), 1e-9);
}

TEST(AdvReal, RejectsOutOfRangeAndNaN) {
  EXPECT_THROW(adv_real(std::vector<double>{1.5}), ArgumentError);
  EXPECT_THROW(adv_real(std::vector<double>{std::nan("")}), NumericError);
  EXPECT_THROW(adv_real(std::vector<double>{}), ArgumentError);
}

TEST(AdvFake, ScalarOracles) {
  EXPECT_NEAR(adv_fake(std::vector<double>{0.0, 0.0}).value, 0.0, kTol);
  EXPECT_NEAR(adv_fake(std::vector<double>{0.5}).value, -0.693147, kTol);
  EXPECT_NEAR(adv_fake(std::vector<double>{0.25, 0.75}).value, -0.836988, kTol);
}

TEST(EntropyLoss, Examples) {
  EXPECT_NEAR(entropy_loss(rows(3, {0, 1, 0})).value, 0.0, kTol);
  EXPECT_NEAR(entropy_loss(uniform_rows(1, 10)).value, 2.302585, kTol);
  EXPECT_NEAR(entropy_loss(rows(2, {0.5, 0.5, 1.0, 0.0})).value, 0.346574, kTol);
}

TEST(DiversityLoss, Examples) {
  EXPECT_NEAR(diversity_loss(rows(3, {0, 1, 0, 0, 1, 0})).value, 0.0, kTol);
  std::vector<double> eye(100, 0.0);
  for (std::size_t i = 0; i < 10; ++i) eye[i * 10 + i] = 1.0;
  EXPECT_NEAR(diversity_loss(rows(10, eye)).value, 2.302585, kTol);
  EXPECT_NEAR(diversity_loss(rows(2, {1.0, 0.0, 0.5, 0.5})).value, 0.562335, kTol);
}

TEST(DiscriminatorLoss, Examples) {
  EXPECT_NEAR(discriminator_loss(std::vector<double>{1.0}, std::vector<double>{0.0}).value, 0.0, kTol);
  const auto l = discriminator_loss(std::vector<double>{0.5}, std::vector<double>{0.5});
  EXPECT_NEAR(l.value, -1.386294, kTol);
  EXPECT_NEAR(l.components.at("adv_real") + l.components.at("adv_fake"), l.value, 1e-12);
}

TEST(DiscriminatorLoss, BatchOrderInvariant) {
  std::vector<double> r{0.9, 0.2, 0.6, 0.7};
  std::vector<double> f{0.1, 0.4, 0.3, 0.8};
  const double a = discriminator_loss(r, f).value;
  std::reverse(r.begin(), r.end());
  std::rotate(f.begin(), f.begin() + 1, f.end());
  EXPECT_NEAR(discriminator_loss(r, f).value, a, 1e-14);
}

TEST(GeneratorLoss, ZeroLambdaReducesToAdvFake) {
  const std::vector<double> d{0.2, 0.7, 0.4};
  std::mt19937_64 rng(1);
  const auto y = random_distribution(3, 4, rng);
  EXPECT_EQ(generator_loss(d, y, 0.0, 0.0).value, adv_fake(d).value);
}

TEST(GeneratorLoss, SingleRowUniformExample) {
  // With one row the batch mean equals the row, so both class terms equal ln 10.
  const auto y = uniform_rows(1, 10);
  const auto l = generator_loss(std::vector<double>{0.5}, y, 1.0, 1.0);
  EXPECT_NEAR(l.value, -0.693147, kTol);
  EXPECT_NEAR(l.components.at("entropy"), 2.302585, kTol);
  EXPECT_NEAR(l.components.at("diversity"), 2.302585, kTol);
}

TEST(GeneratorLoss, NonSaturatingUsesNegLogD) {
  const std::vector<double> d{0.25, 0.5};
  const auto y = uniform_rows(2, 3);
  const auto l = generator_loss(d, y, 0.0, 0.0, AdversarialForm::non_saturating);
  EXPECT_NEAR(l.value, -(std::log(0.25) + std::log(0.5)) / 2.0, 1e-12);
}

TEST(GeneratorLoss, RejectsNegativeLambda) {
  const auto y = uniform_rows(1, 2);
  EXPECT_THROW(generator_loss(std::vector<double>{0.5}, y, -0.1, 0.0), ArgumentError);
}

TEST(GeneratorLoss, MonotoneInLambdas) {
  std::mt19937_64 rng(2);
  const std::vector<double> d{0.3, 0.6, 0.5, 0.2};
  const auto y = random_distribution(4, 5, rng);
  double prev_e = -1e300;
  double prev_d = 1e300;
  for (double lam : {0.0, 0.1, 0.5, 1.0, 3.0}) {
    const double ve = generator_loss(d, y, lam, 0.5).value;
    const double vd = generator_loss(d, y, 0.5, lam).value;
    EXPECT_GT(ve, prev_e);
    EXPECT_LT(vd, prev_d);
    prev_e = ve;
    prev_d = vd;
  }
}

TEST(ClassLossProperties, BoundsJensenAndPermutation) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> kdist(2, 12);
  std::uniform_int_distribution<std::size_t> ndist(1, 16);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = kdist(rng);
    const std::size_t n = ndist(rng);
    const auto y = random_distribution(n, k, rng);
    const double ent = entropy_loss(y).value;
    const double div = diversity_loss(y).value;
    const double ln_k = std::log(static_cast<double>(k));
    ASSERT_GE(ent, -1e-12);
    ASSERT_LE(ent, ln_k + 1e-12);
    ASSERT_GE(div, -1e-12);
    ASSERT_LE(div, ln_k + 1e-12);
    ASSERT_GE(div, ent - 1e-12);

    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor permuted({n, k});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) permuted.at(i, perm[j]) = y.probs.at(i, j);
    }
    const auto yp = ClassDistribution::from_probs(permuted);
    ASSERT_NEAR(entropy_loss(yp).value, ent, 1e-12);
    ASSERT_NEAR(diversity_loss(yp).value, div, 1e-12);
  }
}

TEST(KdLoss, IdenticalLogitsGiveZeroKlAndZeroGradient) {
  const Tensor logits({2, 3}, {1.0, -0.5, 2.0, 0.3, 0.3, -1.0});
  const auto g = kd_loss_grad(logits, logits, 4.0);
  EXPECT_NEAR(g.loss.components.at("kl"), 0.0, 1e-10);
  EXPECT_NEAR(g.loss.value, g.loss.components.at("teacher_entropy"), 1e-10);
  for (double v : g.logits.data) EXPECT_NEAR(v, 0.0, 1e-8);
}

TEST(KdLoss, TwoClassScalarOracle) {
  const Tensor teacher({1, 2}, {2.0, 0.0});
  const Tensor student({1, 2}, {0.0, 2.0});
  const auto l = kd_loss(student, teacher, 1.0);
  EXPECT_NEAR(l.value, 1.888522, kTol);
  EXPECT_NEAR(l.components.at("kl"), 1.523188, kTol);
  EXPECT_NEAR(l.components.at("teacher_entropy"), 0.365334, kTol);
}

TEST(KdLoss, HighTemperatureApproachesUniformAsymptote) {
  const double t = 1e3;
  const Tensor teacher({1, 3}, {2.0, 0.0, -1.0});
  const Tensor student({1, 3}, {0.0, 2.0, 5.0});
  const double v = kd_loss(student, teacher, t).value;
  const double asymptote = t * t * std::log(3.0);
  EXPECT_NEAR(v / asymptote, 1.0, 1e-5);
  // 50-digit reference for the excess at this T; it tends to 41/9 as T grows.
  EXPECT_NEAR(v - asymptote, 4.5561955, kTol);
}

TEST(KdLoss, RejectsMismatchedShapes) {
  EXPECT_THROW(kd_loss(Tensor({1, 2}), Tensor({1, 3}), 1.0), ArgumentError);
  EXPECT_THROW(kd_loss(Tensor({1, 2}), Tensor({1, 2}), 0.0), ArgumentError);
}

TEST(IncrementalLoss, ReducesToCrossEntropy) {
  const Tensor logits({2, 4}, {0.1, 0.2, 1.5, -0.3, 0.0, -1.0, 0.2, 2.0});
  const std::vector<std::size_t> labels{2, 3};
  const Tensor empty({0, 2});
  const IncrementalInputs in{logits, labels, empty, empty, 2};
  const auto g = incremental_loss_grad(in, 2.0, 0.0);
  const Tensor new_slice({2, 2}, {1.5, -0.3, 0.2, 2.0});
  const std::vector<std::size_t> local{0, 1};
  EXPECT_NEAR(g.loss.value, cross_entropy_grad(new_slice, local).loss.value, 1e-14);
  // ln(1 + e^-1.8) and ln(1 + e^-1.8) averaged.
  EXPECT_NEAR(g.loss.value, 0.152977, kTol);
  EXPECT_EQ(g.loss.components.at("distill"), 0.0);
  EXPECT_EQ(g.loss.components.at("scale_reg"), 0.0);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(g.new_logits.at(i, 0), 0.0);
    EXPECT_EQ(g.new_logits.at(i, 1), 0.0);
  }
}

TEST(IncrementalLoss, IdenticalOldLogitsContributeNoGradient) {
  const Tensor logits({2, 4}, {0.1, 0.2, 1.5, -0.3, 0.0, -1.0, 0.2, 2.0});
  const std::vector<std::size_t> labels{2, 3};
  const Tensor old({3, 2}, {0.5, -0.5, 1.0, 2.0, -1.0, 0.0});
  const IncrementalInputs in{logits, labels, old, old, 2};
  const auto g = incremental_loss_grad(in, 2.0, 0.1);
  for (double v : g.student_old_logits.data) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_NEAR(g.loss.components.at("ce") + g.loss.components.at("distill") + g.loss.components.at("scale_reg"),
              g.loss.value, 1e-12);
}

TEST(IncrementalLoss, ScaleRegularizerValue) {
  // Old-class |logits| mean 1.5, new-class mean 0.5.
  const Tensor logits({1, 4}, {1.0, -2.0, 0.5, -0.5});
  const std::vector<std::size_t> labels{3};
  const Tensor empty({0, 2});
  const auto l = incremental_loss({logits, labels, empty, empty, 2}, 2.0, 0.1);
  EXPECT_NEAR(l.components.at("scale_reg"), 0.1, 1e-12);
}

TEST(IncrementalLoss, RejectsOldClassLabels) {
  const Tensor logits({1, 4}, {0.0, 0.0, 0.0, 0.0});
  const std::vector<std::size_t> labels{1};
  const Tensor empty({0, 2});
  EXPECT_THROW(incremental_loss({logits, labels, empty, empty, 2}, 2.0, 0.1), ArgumentError);
}

}  // namespace
}  // namespace degan
