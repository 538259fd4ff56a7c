#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "degan/errors.hpp"
#include "degan/harness.hpp"
#include "degan/models.hpp"

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kInvariant = 3 };

// Desk-scale defaults used when no --manifest is given: 16x16 grayscale
// gratings, five classes, a one-class related proxy.
json desk_manifest() {
  return json::parse(R"({
    "seeds": [0],
    "datasets": {
      "true": {"kind": "synthetic", "style": "true_style", "classes": 5, "per_class": 200, "image": [16, 16, 1]},
      "test": {"kind": "synthetic", "style": "true_style", "classes": 5, "per_class": 100, "image": [16, 16, 1], "seed": 1},
      "related": {"kind": "synthetic", "style": "related_style", "classes": 5, "per_class": 100, "image": [16, 16, 1], "seed": 2},
      "proxy": {"kind": "derived", "from": "related", "classes": [0]}
    },
    "roles": {"train": "true", "test": "test", "proxy": "proxy"},
    "config": {"batch_size": 64, "latent_dim": 32, "gan_epochs": 50, "eval_samples": 1000,
               "kd_epochs": 20, "batches_per_kd_epoch": 50, "kd_temperature": 4}
  })");
}

struct Common {
  std::string manifest;
  std::string config;
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds;
  std::string out;
  bool resume = false;
  bool quiet = false;
  std::string device = "cpu";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--manifest", c.manifest, "Experiment manifest (JSON); desk defaults when omitted")
      ->check(CLI::ExistingFile);
  app->add_option("--config", c.config, "Config file (key = value lines) overlaid on the manifest config")
      ->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "Config override key=value (repeatable)");
  app->add_option("--seed", c.seeds, "Seed(s); replaces the manifest seed list");
  app->add_option("--out", c.out, "Output directory");
  app->add_flag("--resume", c.resume, "Continue a non-empty output directory, skipping finished seeds");
  app->add_flag("-q,--quiet", c.quiet, "No progress output");
  app->add_option("--device", c.device, "Compute device")->check(CLI::IsMember({"cpu"}));
}

json base_manifest(const Common& c, fs::path& base_dir) {
  if (c.manifest.empty()) {
    base_dir = fs::current_path();
    return desk_manifest();
  }
  std::ifstream in(c.manifest);
  base_dir = fs::path(c.manifest).parent_path();
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw degan::ConfigError("manifest " + c.manifest + ": " + e.what());
  }
}

int run_pipeline(const Common& c, json j, const fs::path& base_dir) {
  if (!c.seeds.empty()) {
    j["seeds"] = c.seeds;
    j.erase("repeat");
  }
  if (!c.out.empty()) j["out"] = c.out;
  if (!j.contains("out")) throw degan::ConfigError("no output directory: pass --out or set \"out\" in the manifest");
  degan::ExperimentManifest m = degan::parse_manifest(j, base_dir);
  if (!c.config.empty()) m.config = degan::load_config(c.config, m.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw degan::ConfigError("--set expects key=value, got '" + kv + "'");
    degan::set_config_value(m.config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  degan::validate(m.config);

  degan::RunOptions options;
  options.resume = c.resume;
  if (!c.quiet) options.progress = [](std::string_view msg) { std::cerr << msg << '\n'; };
  const auto records = degan::run(m, options);
  std::cout << "wrote " << records.size() << " run record(s) and summary.tsv to " << m.out.string() << '\n';
  std::ifstream summary(m.out / "summary.tsv");
  std::cout << summary.rdbuf();
  return kOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const degan::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const degan::InvariantError& e) {
    std::cerr << "invariant violated: " << e.what() << '\n';
    return kInvariant;
  } catch (const degan::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kInvariant;
  } catch (const degan::FrozenModelError& e) {
    std::cerr << "frozen model modified: " << e.what() << '\n';
    return kInvariant;
  } catch (const degan::ContractError& e) {
    std::cerr << "contract violated: " << e.what() << '\n';
    return kInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-enriching GAN experiments: teacher training, GAN training, distillation, incremental learning"};
  app.require_subcommand(1);

  Common c;
  std::string source = "degan";
  bool suite = false;
  std::string mode = "degan";
  std::vector<double> lambda_e, lambda_d;

  auto* teacher = app.add_subcommand("train-teacher", "Train and freeze a teacher classifier");
  add_common(teacher, c);

  auto* gan = app.add_subcommand("train-degan", "Train a teacher, then a DeGAN on the proxy");
  add_common(gan, c);
  bool vanilla = false;
  gan->add_flag("--vanilla", vanilla, "Zero both classifier weights (plain DCGAN)");

  auto* kd = app.add_subcommand("distill", "Distill the teacher into a half-capacity student");
  add_common(kd, c);
  kd->add_option("--source", source, "Batch source for distillation")
      ->check(CLI::IsMember({"degan", "vanilla", "proxy", "true"}));
  kd->add_flag("--suite", suite, "Run all four sources against one teacher per seed");

  auto* incr = app.add_subcommand("incremental", "Single-step class-incremental update");
  add_common(incr, c);
  incr->add_option("--mode", mode, "Update mode")->check(CLI::IsMember({"finetune", "lwf_proxy", "degan"}));
  incr->add_flag("--suite", suite, "Run all three modes from one old model per seed");
  std::size_t old_classes = 0;
  incr->add_option("--old-classes", old_classes, "Number of old classes (default: half)");

  auto* sweep = app.add_subcommand("sweep", "DeGAN over a lambda_e x lambda_d grid");
  add_common(sweep, c);
  sweep->add_option("--lambda-e", lambda_e, "lambda_e grid values")->delimiter(',');
  sweep->add_option("--lambda-d", lambda_d, "lambda_d grid values")->delimiter(',');

  auto* exp = app.add_subcommand("export-samples", "Write a grid of generated samples and a sidecar TSV");
  std::string gen_dir, clf_dir, image_out;
  std::size_t rows = 8, cols = 8;
  std::uint64_t export_seed = 0;
  exp->add_option("--generator", gen_dir, "Generator checkpoint directory")->required()->check(CLI::ExistingDirectory);
  exp->add_option("--classifier", clf_dir, "Classifier checkpoint directory")->required()->check(CLI::ExistingDirectory);
  exp->add_option("--rows", rows, "Grid rows")->check(CLI::PositiveNumber);
  exp->add_option("--cols", cols, "Grid columns")->check(CLI::PositiveNumber);
  exp->add_option("--seed", export_seed, "Sampling seed");
  exp->add_option("--out", image_out, "Image path (.pgm/.ppm chosen by channel count)")->required();

  auto* table = app.add_subcommand("make-table", "Format finished runs in the published table layouts");
  std::vector<std::string> run_dirs;
  std::string table_id = "kd_main";
  table->add_option("--runs", run_dirs, "Run output directories")->required()->check(CLI::ExistingDirectory);
  table->add_option("--table", table_id, "Table layout")->check(CLI::IsMember({"kd_main", "kd_proxy_sweep", "incremental"}));

  CLI11_PARSE(app, argc, argv);

  auto pipeline = [&](const char* name, auto&& customize) {
    return guarded([&] {
      fs::path base_dir;
      json j = base_manifest(c, base_dir);
      j["pipeline"] = name;
      customize(j);
      return run_pipeline(c, j, base_dir);
    });
  };

  if (teacher->parsed()) return pipeline("train_teacher", [](json&) {});
  if (gan->parsed()) {
    return pipeline("train_degan", [&](json& j) {
      if (vanilla) {
        j["config"]["lambda_e"] = 0.0;
        j["config"]["lambda_d"] = 0.0;
      }
    });
  }
  if (kd->parsed()) {
    return pipeline(suite ? "kd_suite" : "distill", [&](json& j) {
      if (kd->count("--source") || !j.contains("source")) j["source"] = source;
    });
  }
  if (incr->parsed()) {
    return pipeline(suite ? "incremental_suite" : "incremental", [&](json& j) {
      if (incr->count("--mode") || !j.contains("mode")) j["mode"] = mode;
      if (old_classes) j["old_classes"] = old_classes;
      if (!j.contains("old_classes")) {
        const auto& train = j["datasets"][j["roles"]["train"].get<std::string>()];
        j["old_classes"] = train.value("classes", 2) / 2;
      }
    });
  }
  if (sweep->parsed()) {
    return pipeline("sweep", [&](json& j) {
      if (!lambda_e.empty()) j["lambda_e"] = lambda_e;
      if (!lambda_d.empty()) j["lambda_d"] = lambda_d;
    });
  }
  if (exp->parsed()) {
    return guarded([&] {
      const auto g = degan::load_checkpoint(gen_dir);
      const auto clf = degan::load_checkpoint(clf_dir);
      const auto grid = degan::export_samples(g, clf, rows, cols, export_seed, image_out);
      std::cout << grid.image.string() << '\n' << grid.sidecar.string() << '\n';
      return kOk;
    });
  }
  if (table->parsed()) {
    return guarded([&] {
      std::vector<degan::RunRecord> records;
      for (const auto& dir : run_dirs) {
        auto r = degan::load_run_records(dir);
        records.insert(records.end(), r.begin(), r.end());
      }
      std::cout << degan::make_table(records, degan::parse_table_id(table_id));
      return kOk;
    });
  }
  return kFailure;
}
