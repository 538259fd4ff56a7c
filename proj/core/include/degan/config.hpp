#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace degan {

// Every hyperparameter a run depends on. Serializes to a flat `key = value`
// text file; unknown keys are rejected.
struct ExperimentConfig {
  // Weights of the classifier-feedback terms in the generator objective.
  double lambda_e = 0.1;
  double lambda_d = 1.0;

  std::size_t batch_size = 128;
  std::size_t latent_dim = 100;

  double gan_lr = 0.0002;
  double gan_beta1 = 0.5;
  std::size_t gan_epochs = 200;
  // true: generator minimizes -ln D(G(z)); false: minimizes ln(1 - D(G(z))).
  bool non_saturating = true;
  // Generated samples drawn at the end of every GAN epoch for the class
  // histogram and confidence metrics.
  std::size_t eval_samples = 1000;

  double kd_temperature = 20.0;
  std::size_t kd_epochs = 100;
  std::size_t batches_per_kd_epoch = 400;
  // 0: fresh generator samples every KD step; otherwise a fixed pool of this size.
  std::size_t kd_pool_size = 0;

  double teacher_lr = 1e-3;
  double student_lr = 1e-3;
  std::size_t teacher_max_epochs = 100;
  std::size_t teacher_patience = 5;

  double incr_reg_weight = 0.1;
  double incr_temperature = 2.0;
  std::size_t incr_epochs = 30;
  std::size_t incr_batches_per_epoch = 20;

  std::uint64_t seed = 0;
  double eps_log = 1e-12;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Throws ConfigError when a field is outside its documented range.
void validate(const ExperimentConfig& cfg);

std::string to_text(const ExperimentConfig& cfg);

// Overlays `key = value` lines onto `base`. Blank lines and '#' comments are
// ignored. Throws ConfigError on unknown keys or malformed values.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

// Applies a single key/value override (same rules as parse_config).
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

std::vector<std::string> config_keys();

}  // namespace degan
