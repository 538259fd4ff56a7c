#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "degan/config.hpp"
#include "degan/errors.hpp"
#include "degan/gradcheck.hpp"
#include "degan/models.hpp"
#include "degan/optimizer.hpp"
#include "degan/rng.hpp"

namespace degan {
namespace {

TEST(SampleLatent, DeterministicUnderSeed) {
  Engine a(7);
  Engine b(7);
  const auto x = sample_latent({2}, 3, a);
  const auto y = sample_latent({2}, 3, b);
  EXPECT_EQ(x.values.shape, (Shape{3, 2}));
  EXPECT_EQ(x.values.data, y.values.data);
}

TEST(SampleLatent, ColumnMeansWithinCltBound) {
  Engine rng(0);
  const auto z = sample_latent({100}, 128, rng);
  const double bound = 4.0 / std::sqrt(128.0);
  for (std::size_t j = 0; j < 100; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 128; ++i) mean += z.values.at(i, j);
    EXPECT_LT(std::abs(mean / 128.0), bound);
  }
}

TEST(SampleLatent, RejectsEmptyBatch) {
  Engine rng(1);
  EXPECT_THROW(sample_latent({1}, 0, rng), ArgumentError);
}

TEST(SampleLatent, ReplayFromSeedTrace) {
  Engine rng(3);
  sample_latent({5}, 4, rng);
  const auto z = sample_latent({5}, 4, rng);
  const auto replay = replay_latent({5}, 4, z.seed_trace);
  EXPECT_EQ(z.values.data, replay.values.data);
}

TEST(RngStreams, NamedStreamsAreIndependentOfEachOther) {
  const RngStreams root(42);
  EXPECT_EQ(root.child_seed("a"), RngStreams(42).child_seed("a"));
  EXPECT_NE(root.child_seed("a"), root.child_seed("b"));
  EXPECT_NE(root.child_seed("a"), RngStreams(43).child_seed("a"));
}

TEST(ClassDistribution, RowsSumToOneAfterSoftmax) {
  const Tensor logits({3, 4}, {1000.0, 0.0, -3.0, 2.0, 0.1, 0.2, 0.3, 0.4, -50.0, -50.0, -50.0, -50.0});
  const auto y = softmax(logits);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += y.probs.at(i, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_NEAR(y.batch_mean[3], (y.probs.at(0, 3) + y.probs.at(1, 3) + y.probs.at(2, 3)) / 3.0, 1e-15);
}

TEST(ClassDistribution, RejectsInvalidRows) {
  EXPECT_THROW(ClassDistribution::from_probs(Tensor({1, 2}, {0.7, 0.7})), ArgumentError);
  EXPECT_THROW(ClassDistribution::from_probs(Tensor({1, 2}, {1.5, -0.5})), ArgumentError);
}

TEST(FiniteDifference, Square) {
  auto f = [](std::span<const double> p) { return p[0] * p[0]; };
  const auto g = finite_difference_grad(f, std::vector<double>{3.0}, 1e-4);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDifference, ConstantIsZero) {
  auto f = [](std::span<const double>) { return 4.2; };
  for (double v : finite_difference_grad(f, std::vector<double>{1.0, -2.0, 0.5})) EXPECT_NEAR(v, 0.0, 1e-8);
}

TEST(FiniteDifference, NonFiniteIsNumericError) {
  auto f = [](std::span<const double> p) { return std::log(p[0]); };
  EXPECT_THROW(finite_difference_grad(f, std::vector<double>{0.0}), NumericError);
}

ArchSpec small_classifier() {
  ArchSpec s;
  s.family = ArchFamily::conv_classifier;
  s.image = {8, 8, 1};
  s.num_classes = 3;
  return s;
}

TEST(Freeze, ForwardIsPureAndDigestStable) {
  const Model c = freeze(build_classifier(small_classifier(), 1));
  EXPECT_TRUE(c.frozen());
  const Tensor x({2, 8, 8, 1}, 0.3);
  const auto before = c.param_digest();
  EXPECT_EQ(c.forward(x).data, c.forward(x).data);
  EXPECT_EQ(c.param_digest(), before);
}

TEST(Freeze, RejectsUpdates) {
  Model c = freeze(build_classifier(small_classifier(), 1));
  Adam opt(c.param_count(), {});
  const std::vector<double> grad(c.param_count(), 1.0);
  EXPECT_THROW(opt.step(c, grad), FrozenModelError);
  EXPECT_THROW(c.mutable_parameters(), FrozenModelError);
  Trace t;
  EXPECT_THROW(c.forward_train(Tensor({2, 8, 8, 1}), t), FrozenModelError);
  Trace inf;
  const Tensor out = c.forward(Tensor({2, 8, 8, 1}), &inf);
  std::vector<double> pg(c.param_count());
  EXPECT_THROW(c.backward(inf, Tensor(out.shape, 1.0), pg), FrozenModelError);
}

TEST(Freeze, OtherModelsTrainingLeavesDigest) {
  const Model c = freeze(build_classifier(small_classifier(), 1));
  const auto before = c.param_digest();
  Model other = build_classifier(small_classifier(), 2);
  Adam opt(other.param_count(), {});
  for (int i = 0; i < 10; ++i) opt.step(other, std::vector<double>(other.param_count(), 0.1));
  EXPECT_EQ(c.param_digest(), before);
  EXPECT_NE(other.param_digest(), build_classifier(small_classifier(), 2).param_digest());
}

TEST(Config, TextRoundTrip) {
  ExperimentConfig cfg;
  cfg.lambda_e = 0.123456789012345;
  cfg.gan_epochs = 7;
  cfg.non_saturating = false;
  cfg.seed = 18446744073709551615ULL;
  EXPECT_EQ(parse_config(to_text(cfg)), cfg);
}

TEST(Config, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "degan_config_roundtrip.txt";
  ExperimentConfig cfg;
  cfg.kd_temperature = 3.5;
  save_config(cfg, path);
  EXPECT_EQ(load_config(path), cfg);
  std::filesystem::remove(path);
}

TEST(Config, UnknownKeyRejected) { EXPECT_THROW(parse_config("lamda_e = 1\n"), ConfigError); }

TEST(Config, OutOfRangeRejected) {
  EXPECT_THROW(parse_config("lambda_e = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("kd_temperature = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("batch_size = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("eps_log = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("batch_size = many\n"), ConfigError);
}

TEST(Config, CommentsAndOverlay) {
  ExperimentConfig base;
  base.batch_size = 32;
  const auto cfg = parse_config("# desk\nlambda_d = 2  # diversity\n\n", base);
  EXPECT_EQ(cfg.lambda_d, 2.0);
  EXPECT_EQ(cfg.batch_size, 32u);
}

TEST(Config, Defaults) {
  const ExperimentConfig cfg;
  EXPECT_EQ(cfg.latent_dim, 100u);
  EXPECT_EQ(cfg.batch_size, 128u);
  EXPECT_EQ(cfg.gan_lr, 0.0002);
  EXPECT_EQ(cfg.gan_beta1, 0.5);
  EXPECT_EQ(cfg.gan_epochs, 200u);
  EXPECT_EQ(cfg.kd_temperature, 20.0);
  EXPECT_EQ(cfg.batches_per_kd_epoch, 400u);
  EXPECT_EQ(cfg.incr_reg_weight, 0.1);
  EXPECT_EQ(cfg.eps_log, 1e-12);
  EXPECT_TRUE(cfg.non_saturating);
}

}  // namespace
}  // namespace degan
