#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "degan/config.hpp"
#include "degan/datasets.hpp"
#include "degan/distribution.hpp"
#include "degan/losses.hpp"
#include "degan/model.hpp"
#include "degan/rng.hpp"

namespace degan {

// Per-epoch metrics: fixed columns (the first is always "epoch"), one row per epoch.
struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add_row(std::vector<double> row);  // throws ArgumentError on width mismatch or non-increasing epoch
  double last(const std::string& column) const;
  std::vector<double> column(const std::string& name) const;
  // Tab-separated, header row first, values printed with %.10g.
  std::string to_tsv() const;
  static MetricsTable from_tsv(const std::string& text);
};

struct RunRecord {
  std::string pipeline;
  ExperimentConfig config;
  MetricsTable metrics;
  std::map<std::string, double> summary;          // final accuracies etc.
  std::map<std::string, std::string> digests;     // model name -> param digest hex
  std::map<std::string, std::uint64_t> seed_trace;  // RNG stream name -> child seed
  std::map<std::string, std::filesystem::path> checkpoints;
  std::map<std::string, std::string> tags;        // free-form labels, e.g. proxy name
  double wall_clock_seconds = 0.0;
};

// Checks epoch monotonicity and that every referenced checkpoint exists.
void validate(const RunRecord& record);

// Writes metrics.tsv, record.json and config.txt into dir. Wall-clock time goes
// to timing.json so the other files depend on the seed only.
void write_record(const RunRecord& record, const std::filesystem::path& dir);
RunRecord read_record(const std::filesystem::path& dir);

// Optional progress sink for long runs.
using Progress = std::function<void(std::string_view)>;

// Fraction of samples whose argmax matches the label.
double accuracy(const Model& classifier, const DatasetSpec& data);
// Accuracy restricted to samples whose label lies in [lo, hi).
double accuracy_in_range(const Model& classifier, const DatasetSpec& data, std::size_t lo, std::size_t hi);

// Normalized argmax histogram of a class distribution and its natural-log entropy.
std::vector<double> class_histogram(const ClassDistribution& y);
double histogram_entropy(const std::vector<double>& freq);
double mean_confidence(const ClassDistribution& y);

struct TeacherResult {
  Model model;  // frozen
  RunRecord record;
};

// Trains a classifier on a stratified 80/20 split of true_data with early
// stopping on validation accuracy, restores the best epoch and freezes it.
TeacherResult train_teacher(const DatasetSpec& true_data, const ArchSpec& arch, const ExperimentConfig& cfg,
                            const Progress& progress = {});

struct GanArchs {
  ArchSpec generator;
  ArchSpec discriminator;
};

// Generator/discriminator specs matching a classifier's input shape.
GanArchs gan_archs_for(const Model& classifier, const ExperimentConfig& cfg);

struct GanResult {
  Model generator;
  Model discriminator;
  RunRecord record;
};

// L_D on a real and a generated batch (both in [-1, 1]). Runs D in training
// mode and accumulates dL_D/dtheta_D into grad.
LossValue discriminator_objective(Model& disc, const Tensor& real, const Tensor& fake, std::span<double> grad,
                                  double eps);

struct GeneratorFeedback {
  LossValue loss;
  Tensor grad_fake;  // dL_G / dG(z)
};

// L_G on a generated batch and its gradient with respect to that batch. D runs
// on batch statistics without touching its running state; the classifier sees
// the batch through `adapter` in inference mode. With both lambdas zero the
// classifier is not evaluated.
GeneratorFeedback generator_feedback(const Model& disc, const Model& classifier, const RangeAdapter& adapter,
                                     const Tensor& fake, double lambda_e, double lambda_d, AdversarialForm form,
                                     double eps);

// Alternating GAN training on the proxy with frozen-classifier feedback. With
// lambda_e == lambda_d == 0 the classifier is only used for logging metrics.
// Throws ContractError if the classifier is not frozen and InvariantError if a
// digest check fails.
GanResult train_degan(const Model& classifier, const DatasetSpec& proxy, const ExperimentConfig& cfg,
                      const std::optional<GanArchs>& archs = std::nullopt, const Progress& progress = {});

// Plain DCGAN on the proxy: train_degan with both classifier weights zeroed.
GanResult train_vanilla_gan(const Model& classifier, const DatasetSpec& proxy, ExperimentConfig cfg,
                            const std::optional<GanArchs>& archs = std::nullopt, const Progress& progress = {});

struct GeneratedBatch {
  Tensor images;  // classifier input range
  ClassDistribution classes;
  LatentBatch latent;
};

// n generated images mapped to the classifier range plus the classifier's outputs.
// Uses the generator's running normalization statistics.
GeneratedBatch generate_batch(const Model& generator, const Model& classifier, std::size_t n, Engine& rng);

// Images only, in the classifier range.
Tensor generate_images(const Model& generator, std::size_t n, Engine& rng);

// Where distillation batches come from.
struct DistillSource {
  const Model* generator = nullptr;  // fresh samples every step
  const DatasetSpec* data = nullptr; // shuffled mini-batches
};

struct DistillResult {
  Model student;
  RunRecord record;
};

// Trains a fresh student of student_arch to match the teacher's softened
// outputs on batches drawn from source; reports accuracy on test_set.
DistillResult distill(const Model& teacher, const ArchSpec& student_arch, const DistillSource& source,
                      const DatasetSpec& test_set, const ExperimentConfig& cfg, const Progress& progress = {});

enum class IncrementalMode { finetune, lwf_proxy, degan };
std::string to_string(IncrementalMode mode);
IncrementalMode parse_incremental_mode(const std::string& text);

struct IncrementalResult {
  Model model;
  RunRecord record;
  std::optional<Model> generator;  // degan mode only
};

// Single-step class-incremental update. new_data carries labels in
// [K_old, K_total) with num_classes == K_total; test_set covers all classes.
// finetune trains the expanded head with cross-entropy over all K_total
// outputs; lwf_proxy and degan minimize incremental_loss, distilling on
// new_data or on samples from a DeGAN trained on new_data.
IncrementalResult incremental_update(const Model& old_model, const DatasetSpec& new_data, IncrementalMode mode,
                                     const DatasetSpec& test_set, const ExperimentConfig& cfg,
                                     const Progress& progress = {});

}  // namespace degan
