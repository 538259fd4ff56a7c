#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "degan/errors.hpp"
#include "degan/models.hpp"
#include "degan/pipelines.hpp"

namespace degan {
namespace {

namespace fs = std::filesystem;

const ImageShape kImg{16, 16, 1};

ExperimentConfig desk_config() {
  ExperimentConfig cfg;
  cfg.batch_size = 64;
  cfg.latent_dim = 32;
  cfg.teacher_max_epochs = 20;
  cfg.gan_epochs = 4;
  cfg.eval_samples = 200;
  cfg.kd_epochs = 3;
  cfg.batches_per_kd_epoch = 10;
  cfg.kd_temperature = 4.0;
  cfg.incr_epochs = 3;
  cfg.incr_batches_per_epoch = 5;
  return cfg;
}

ArchSpec classifier_spec(std::size_t k = 5) {
  ArchSpec a;
  a.image = kImg;
  a.num_classes = k;
  return a;
}

struct Desk {
  DatasetSpec train = make_synthetic(5, 200, kImg, SyntheticStyle::true_style, 1);
  DatasetSpec test = make_synthetic(5, 60, kImg, SyntheticStyle::true_style, 2);
  DatasetSpec proxy = subset_classes(make_synthetic(5, 100, kImg, SyntheticStyle::related_style, 3), {0});
  TeacherResult teacher = train_teacher(train, classifier_spec(), desk_config());
};

const Desk& desk() {
  static const Desk d;
  return d;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("degan_pipelines_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(MetricsTable, RejectsBadRows) {
  MetricsTable t;
  t.columns = {"epoch", "loss"};
  t.add_row({0, 1.5});
  EXPECT_THROW(t.add_row({1}), ArgumentError);
  EXPECT_THROW(t.add_row({0, 2.0}), ArgumentError);
  t.add_row({1, 0.25});
  EXPECT_EQ(t.last("loss"), 0.25);
  EXPECT_EQ(t.column("epoch"), (std::vector<double>{0, 1}));
}

TEST(MetricsTable, TsvRoundTrip) {
  MetricsTable t;
  t.columns = {"epoch", "x"};
  t.add_row({0, 0.1234567891});
  t.add_row({1, -3e-12});
  const std::string tsv = t.to_tsv();
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "epoch\tx");
  const MetricsTable back = MetricsTable::from_tsv(tsv);
  EXPECT_EQ(back.columns, t.columns);
  EXPECT_EQ(back.to_tsv(), tsv);
}

TEST(RunRecord, WriteReadRoundTrip) {
  const fs::path dir = temp_dir("record");
  RunRecord r;
  r.pipeline = "test";
  r.config.lambda_d = 3.0;
  r.metrics.columns = {"epoch", "a"};
  r.metrics.add_row({0, 1.0});
  r.summary["acc"] = 0.5;
  r.digests["m"] = "abc";
  r.seed_trace["s"] = 42;
  r.tags["proxy"] = "noise";
  fs::create_directories(dir / "ckpt");
  r.checkpoints["m"] = dir / "ckpt";
  r.wall_clock_seconds = 1.5;
  write_record(r, dir);
  EXPECT_EQ(slurp(dir / "record.json").find(dir.string()), std::string::npos);
  const RunRecord back = read_record(dir);
  EXPECT_EQ(back.pipeline, r.pipeline);
  EXPECT_EQ(back.config, r.config);
  EXPECT_EQ(back.summary, r.summary);
  EXPECT_EQ(back.digests, r.digests);
  EXPECT_EQ(back.seed_trace, r.seed_trace);
  EXPECT_EQ(back.tags, r.tags);
  EXPECT_TRUE(fs::equivalent(back.checkpoints.at("m"), dir / "ckpt"));
  EXPECT_NO_THROW(validate(back));
  fs::remove_all(dir / "ckpt");
  EXPECT_THROW(validate(back), InvariantError);
  fs::remove_all(dir);
}

TEST(TrainTeacher, FrozenAndEarlyStopped) {
  const auto& t = desk().teacher;
  EXPECT_TRUE(t.model.frozen());
  const auto& m = t.record.metrics;
  const double best = t.record.summary.at("best_epoch");
  const auto val = m.column("val_acc");
  EXPECT_EQ(*std::max_element(val.begin(), val.end()), t.record.summary.at("val_acc"));
  EXPECT_LE(m.rows.size(), static_cast<std::size_t>(best) + desk_config().teacher_patience + 1);
}

TEST(TrainTeacher, UnlabeledIsArgumentError) {
  EXPECT_THROW(train_teacher(make_noise_proxy(20, kImg, 1), classifier_spec(), desk_config()), ArgumentError);
}

TEST(TrainDegan, NeedsFrozenClassifier) {
  const Model open = build_classifier(classifier_spec(), 1);
  EXPECT_THROW(train_degan(open, desk().proxy, desk_config()), ContractError);
}

TEST(TrainDegan, ZeroLambdasMatchVanillaRun) {
  ExperimentConfig cfg = desk_config();
  cfg.lambda_e = 0.0;
  cfg.lambda_d = 0.0;
  const auto a = train_degan(desk().teacher.model, desk().proxy, cfg);
  const auto b = train_vanilla_gan(desk().teacher.model, desk().proxy, desk_config());
  EXPECT_EQ(a.generator.param_digest(), b.generator.param_digest());
  EXPECT_EQ(a.record.metrics.to_tsv(), b.record.metrics.to_tsv());
  EXPECT_EQ(b.record.pipeline, "train_vanilla_gan");
}

TEST(TrainDegan, ClassifierUnchangedAndMetricsLogged) {
  const Model& clf = desk().teacher.model;
  const auto before = clf.digest_hex();
  const auto g = train_degan(clf, desk().proxy, desk_config());
  EXPECT_EQ(clf.digest_hex(), before);
  EXPECT_EQ(g.record.digests.at("classifier_before"), g.record.digests.at("classifier_after"));
  const auto& cols = g.record.metrics.columns;
  for (const char* c : {"d_loss", "g_adv", "g_entropy", "g_diversity", "mean_confidence", "hist_entropy", "hist_4"}) {
    EXPECT_NE(std::find(cols.begin(), cols.end(), c), cols.end()) << c;
  }
  EXPECT_EQ(g.record.metrics.rows.size(), desk_config().gan_epochs);
}

TEST(TrainDegan, BitIdenticalUnderSeed) {
  const auto a = train_degan(desk().teacher.model, desk().proxy, desk_config());
  const auto b = train_degan(desk().teacher.model, desk().proxy, desk_config());
  EXPECT_EQ(a.record.metrics.to_tsv(), b.record.metrics.to_tsv());
  EXPECT_EQ(a.generator.param_digest(), b.generator.param_digest());
  ExperimentConfig other = desk_config();
  other.seed = 1;
  EXPECT_NE(train_degan(desk().teacher.model, desk().proxy, other).generator.param_digest(),
            a.generator.param_digest());
}

TEST(GenerateBatch, ShapeRangeDeterminism) {
  const auto g = train_degan(desk().teacher.model, desk().proxy, desk_config());
  Engine r1(5), r2(5);
  const auto a = generate_batch(g.generator, desk().teacher.model, 300, r1);
  const auto b = generate_batch(g.generator, desk().teacher.model, 300, r2);
  EXPECT_EQ(a.images.shape, (Shape{300, 16, 16, 1}));
  EXPECT_EQ(a.images.data, b.images.data);
  const ValueRange range = desk().teacher.model.metadata().input_range;
  for (double v : a.images.data) ASSERT_TRUE(v >= range.lo && v <= range.hi);
  EXPECT_EQ(a.classes.probs.shape, (Shape{300, 5}));
}

TEST(Distill, TrueDataSanityWithinTwoPoints) {
  ExperimentConfig cfg = desk_config();
  cfg.kd_epochs = 10;
  cfg.batches_per_kd_epoch = 20;
  ArchSpec student = classifier_spec();
  student.width_multiplier = 0.5;
  const auto r = distill(desk().teacher.model, student, {nullptr, &desk().train}, desk().test, cfg);
  EXPECT_GE(r.record.summary.at("test_acc"), r.record.summary.at("teacher_test_acc") - 0.02);
  EXPECT_EQ(r.record.digests.at("teacher"), desk().teacher.model.digest_hex());
}

TEST(Distill, GeneratorSourceRuns) {
  const auto g = train_degan(desk().teacher.model, desk().proxy, desk_config());
  ArchSpec student = classifier_spec();
  student.width_multiplier = 0.5;
  const auto r = distill(desk().teacher.model, student, {&g.generator, nullptr}, desk().test, desk_config());
  EXPECT_EQ(r.record.metrics.rows.size(), desk_config().kd_epochs);
  EXPECT_TRUE(r.student.frozen());
}

struct IncrementalDesk {
  DatasetSpec all = make_synthetic(10, 150, kImg, SyntheticStyle::true_style, 21);
  DatasetSpec test = make_synthetic(10, 50, kImg, SyntheticStyle::true_style, 22);
  DatasetSpec old_data = subset_classes(all, {0, 1, 2, 3, 4});
  DatasetSpec new_data = offset_labels(subset_classes(all, {5, 6, 7, 8, 9}), 5, 10);
  Model old_model = train_teacher(old_data, classifier_spec(5), desk_config()).model;
};

const IncrementalDesk& incr_desk() {
  static const IncrementalDesk d;
  return d;
}

TEST(Incremental, OverlappingLabelsRejected) {
  const auto& d = incr_desk();
  const DatasetSpec overlap = offset_labels(subset_classes(d.all, {5, 6, 7, 8, 9}), 4, 10);
  EXPECT_THROW(incremental_update(d.old_model, overlap, IncrementalMode::finetune, d.test, desk_config()),
               ArgumentError);
}

TEST(Incremental, FinetuneForgetsOldClasses) {
  const auto& d = incr_desk();
  ExperimentConfig cfg = desk_config();
  cfg.incr_epochs = 10;
  cfg.incr_batches_per_epoch = 10;
  const auto before = d.old_model.digest_hex();
  const auto r = incremental_update(d.old_model, d.new_data, IncrementalMode::finetune, d.test, cfg);
  EXPECT_EQ(d.old_model.digest_hex(), before);
  EXPECT_EQ(r.record.digests.at("old_model"), before);
  EXPECT_EQ(r.model.output_shape(), (Shape{10}));
  EXPECT_LT(r.record.summary.at("acc_old"), 1.0 / 10.0 + 0.10);
  EXPECT_GT(r.record.summary.at("acc_new"), 0.9);
  EXPECT_FALSE(r.generator.has_value());
}

TEST(Incremental, ModeNames) {
  for (auto m : {IncrementalMode::finetune, IncrementalMode::lwf_proxy, IncrementalMode::degan}) {
    EXPECT_EQ(parse_incremental_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_incremental_mode("icarl"), ConfigError);
}

// Full-length desk runs for the class-balance and confidence properties.
// Literal generator form: at desk scale it separates DeGAN from vanilla far
// more clearly than the non-saturating default.
ExperimentConfig property_config() {
  ExperimentConfig cfg = desk_config();
  cfg.gan_epochs = 200;
  cfg.eval_samples = 500;
  cfg.non_saturating = false;
  return cfg;
}

std::vector<double> histogram_of(const Model& generator, std::size_t n) {
  Engine rng(77);
  return class_histogram(generate_batch(generator, desk().teacher.model, n, rng).classes);
}

TEST(Property, ClassBalanceWithDiversityTerm) {
  ExperimentConfig cfg = property_config();
  cfg.lambda_d = 5.0;
  const auto degan = train_degan(desk().teacher.model, desk().proxy, cfg);
  const auto plain = train_vanilla_gan(desk().teacher.model, desk().proxy, property_config());
  const auto h_degan = histogram_of(degan.generator, 10000);
  const auto h_plain = histogram_of(plain.generator, 10000);
  const double k = 5.0;
  EXPECT_GE(*std::min_element(h_degan.begin(), h_degan.end()), 0.3 / k);
  EXPECT_LT(*std::min_element(h_plain.begin(), h_plain.end()), 0.05 / k);
}

TEST(Property, EntropyTermRaisesConfidence) {
  ExperimentConfig with = property_config();
  with.lambda_e = 1.0;
  ExperimentConfig without = property_config();
  without.lambda_e = 0.0;
  const auto a = train_degan(desk().teacher.model, desk().proxy, with);
  const auto b = train_degan(desk().teacher.model, desk().proxy, without);
  EXPECT_GT(a.record.summary.at("final_mean_confidence"), b.record.summary.at("final_mean_confidence"));
}

}  // namespace
}  // namespace degan
