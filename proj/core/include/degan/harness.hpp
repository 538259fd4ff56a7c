#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "degan/arch.hpp"
#include "degan/config.hpp"
#include "degan/datasets.hpp"
#include "degan/model.hpp"
#include "degan/pipelines.hpp"

namespace degan {

// How one named dataset is produced. Exactly one source kind is set.
struct DatasetRecipe {
  enum class Kind { synthetic, noise, derived, cache, cifar, idx };
  Kind kind = Kind::synthetic;

  // synthetic / noise
  SyntheticStyle style = SyntheticStyle::true_style;
  std::size_t classes = 0;
  std::size_t per_class = 0;
  std::size_t count = 0;
  ImageShape image;
  std::uint64_t seed = 0;

  // derived: another recipe, optionally filtered / converted
  std::string from;
  std::optional<std::set<std::size_t>> class_filter;
  bool grayscale = false;

  // cache / on-disk readers
  std::string cache_name;
  std::vector<std::filesystem::path> files;
  bool cifar100 = false;
};

enum class PipelineKind { train_teacher, train_degan, distill, kd_suite, incremental, incremental_suite, sweep };
std::string to_string(PipelineKind kind);
PipelineKind parse_pipeline(const std::string& text);

// Everything needed to reproduce a set of runs.
struct ExperimentManifest {
  PipelineKind pipeline = PipelineKind::train_teacher;
  std::filesystem::path out;
  std::vector<std::uint64_t> seeds;
  ExperimentConfig config;
  std::map<std::string, DatasetRecipe> datasets;
  // Role -> dataset name: "train", "test", "proxy".
  std::map<std::string, std::string> roles;
  ArchSpec teacher_arch;
  ArchSpec student_arch;
  // distill: "degan", "vanilla", "proxy" or "true".
  std::string distill_source = "degan";
  // incremental / incremental_suite
  std::size_t old_classes = 0;
  IncrementalMode incremental_mode = IncrementalMode::degan;
  // sweep grid
  std::vector<double> sweep_lambda_e;
  std::vector<double> sweep_lambda_d;
  // Free-form labels copied into every record (e.g. {"proxy": "1-class related"}).
  std::map<std::string, std::string> tags;
};

// Parses and validates a manifest. Relative config_file paths resolve against
// base_dir. Every dataset reference, role and pipeline-specific field is checked
// here so a bad manifest fails before any training starts (ConfigError).
ExperimentManifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentManifest load_manifest(const std::filesystem::path& path);

// Materializes a dataset recipe for one run seed. Synthetic and noise recipes
// mix the run seed into their own seed.
DatasetSpec resolve_dataset(const ExperimentManifest& m, const std::string& name, std::uint64_t run_seed);

struct RunOptions {
  bool resume = false;
  Progress progress;
};

// Executes the manifest once per seed. Each seed writes out/seed_<s>/ (stage
// records, checkpoints, a DONE marker); afterwards out/summary.tsv holds the
// mean and per-seed value of every summary metric. A non-empty output
// directory requires resume; with resume, seeds that have a DONE marker are
// loaded instead of rerun. Returns one record per seed.
std::vector<RunRecord> run(const ExperimentManifest& m, const RunOptions& options = {});

// Reads the per-seed records of a finished run directory.
std::vector<RunRecord> load_run_records(const std::filesystem::path& out);

struct SampleGrid {
  std::filesystem::path image;    // .pgm (one channel) or .ppm (three channels)
  std::filesystem::path sidecar;  // .tsv: index, row, col, argmax, confidence
};

// Writes a rows x cols grid of generated samples as a binary PGM/PPM raster
// (values mapped from [-1, 1] to 0..255) plus a sidecar with the classifier's
// argmax and confidence per sample. Throws ConfigError if path is not writable.
SampleGrid export_samples(const Model& generator, const Model& classifier, std::size_t rows, std::size_t cols,
                          std::uint64_t seed, const std::filesystem::path& path);

enum class TableId { kd_main, kd_proxy_sweep, incremental };
std::string to_string(TableId id);
TableId parse_table_id(const std::string& text);

// Text table in the published layout with this run's numbers next to the
// published reference values. Missing cells print as "-". Throws
// ArgumentError for an empty record set.
std::string make_table(const std::vector<RunRecord>& records, TableId id);

}  // namespace degan
