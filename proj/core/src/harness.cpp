#include "degan/harness.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "degan/errors.hpp"
#include "degan/models.hpp"
#include "degan/rng.hpp"

namespace degan {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

ImageShape parse_image(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": image must be [height, width, channels]");
  ImageShape s{j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
  if (s.height == 0 || s.width == 0 || s.channels == 0) throw ConfigError(where + ": image dimensions must be > 0");
  return s;
}

DatasetRecipe parse_recipe(const std::string& name, const json& j, const fs::path& base_dir) {
  const std::string where = "dataset '" + name + "'";
  if (!j.is_object() || !j.contains("kind")) throw ConfigError(where + ": needs a \"kind\"");
  DatasetRecipe r;
  const auto kind = j.at("kind").get<std::string>();
  r.seed = get_or<std::uint64_t>(j, "seed", 0);
  if (kind == "synthetic") {
    r.kind = DatasetRecipe::Kind::synthetic;
    try {
      r.style = parse_style(get_or<std::string>(j, "style", "true_style"));
    } catch (const std::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
    r.classes = get_or<std::size_t>(j, "classes", 0);
    r.per_class = get_or<std::size_t>(j, "per_class", 0);
    if (r.classes < 2 || r.per_class == 0) throw ConfigError(where + ": needs classes >= 2 and per_class > 0");
    r.image = parse_image(j.at("image"), where);
  } else if (kind == "noise") {
    r.kind = DatasetRecipe::Kind::noise;
    r.count = get_or<std::size_t>(j, "count", 0);
    if (r.count == 0) throw ConfigError(where + ": needs count > 0");
    r.image = parse_image(j.at("image"), where);
  } else if (kind == "derived") {
    r.kind = DatasetRecipe::Kind::derived;
    r.from = get_or<std::string>(j, "from", "");
    if (j.contains("classes")) r.class_filter = j.at("classes").get<std::set<std::size_t>>();
    r.grayscale = get_or<bool>(j, "grayscale", false);
  } else if (kind == "cache") {
    r.kind = DatasetRecipe::Kind::cache;
    r.cache_name = get_or<std::string>(j, "name", name);
  } else if (kind == "cifar" || kind == "idx") {
    r.kind = kind == "cifar" ? DatasetRecipe::Kind::cifar : DatasetRecipe::Kind::idx;
    for (const auto& f : j.at("files")) {
      fs::path p = f.get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      if (!fs::exists(p)) throw ConfigError(where + ": file not found: " + p.string());
      r.files.push_back(p);
    }
    if (r.files.empty()) throw ConfigError(where + ": needs files");
    if (r.kind == DatasetRecipe::Kind::idx && r.files.size() != 2) {
      throw ConfigError(where + ": idx needs [images, labels]");
    }
    r.cifar100 = get_or<bool>(j, "cifar100", false);
  } else {
    throw ConfigError(where + ": unknown kind '" + kind + "'");
  }
  return r;
}

ArchSpec parse_arch(const json& j, ArchSpec s, const std::string& where) {
  try {
    if (j.contains("family")) s.family = parse_family(j.at("family").get<std::string>());
    if (j.contains("scale")) s.scale = parse_scale(j.at("scale").get<std::string>());
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  s.width_multiplier = get_or<double>(j, "width_multiplier", s.width_multiplier);
  if (j.contains("widths")) s.widths = j.at("widths").get<std::vector<std::size_t>>();
  if (!(s.width_multiplier > 0.0)) throw ConfigError(where + ": width_multiplier must be > 0");
  if (s.family != ArchFamily::conv_classifier) throw ConfigError(where + ": must be a conv_classifier");
  return s;
}

void apply_config_json(ExperimentConfig& cfg, const json& j) {
  if (!j.is_object()) throw ConfigError("\"config\" must be an object");
  for (const auto& [key, value] : j.items()) {
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_boolean()) {
      text = value.get<bool>() ? "true" : "false";
    } else if (value.is_number()) {
      text = value.dump();
    } else {
      throw ConfigError("config key '" + key + "': unsupported value " + value.dump());
    }
    set_config_value(cfg, key, text);
  }
}

std::vector<std::string> required_roles(const ExperimentManifest& m) {
  switch (m.pipeline) {
    case PipelineKind::train_teacher:
      return {"train"};
    case PipelineKind::train_degan:
    case PipelineKind::sweep:
      return {"train", "proxy"};
    case PipelineKind::distill:
      if (m.distill_source == "true") return {"train", "test"};
      return {"train", "test", "proxy"};
    case PipelineKind::kd_suite:
      return {"train", "test", "proxy"};
    case PipelineKind::incremental:
    case PipelineKind::incremental_suite:
      return {"train", "test"};
  }
  return {};
}

void check_references(const ExperimentManifest& m) {
  for (const auto& [role, name] : m.roles) {
    if (role != "train" && role != "test" && role != "proxy") throw ConfigError("unknown role '" + role + "'");
    if (!m.datasets.count(name)) throw ConfigError("role '" + role + "' references unknown dataset '" + name + "'");
  }
  for (const auto& role : required_roles(m)) {
    if (!m.roles.count(role)) throw ConfigError(to_string(m.pipeline) + " needs a '" + role + "' dataset role");
  }
  for (const auto& [name, recipe] : m.datasets) {
    if (recipe.kind == DatasetRecipe::Kind::cache && !DatasetCache::from_env().contains(recipe.cache_name)) {
      throw ConfigError("dataset '" + name + "': '" + recipe.cache_name + "' is not in the dataset cache");
    }
    if (recipe.kind != DatasetRecipe::Kind::derived) continue;
    std::set<std::string> seen{name};
    const DatasetRecipe* cur = &recipe;
    while (cur->kind == DatasetRecipe::Kind::derived) {
      auto it = m.datasets.find(cur->from);
      if (it == m.datasets.end()) {
        throw ConfigError("dataset '" + name + "' derives from unknown dataset '" + cur->from + "'");
      }
      if (!seen.insert(cur->from).second) throw ConfigError("dataset '" + name + "' has a cyclic derivation");
      cur = &it->second;
    }
  }
}

std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

// Everything one seed's run accumulates across its stages.
class SeedRun {
 public:
  SeedRun(const ExperimentManifest& m, std::uint64_t seed, fs::path dir, Progress progress)
      : m_(m), seed_(seed), dir_(std::move(dir)), progress_(std::move(progress)) {
    cfg_ = m.config;
    cfg_.seed = seed;
    agg_.pipeline = to_string(m.pipeline);
    agg_.config = cfg_;
    agg_.tags = m.tags;
  }

  const ExperimentConfig& cfg() const { return cfg_; }

  const DatasetSpec& data(const std::string& role) {
    auto it = cache_.find(role);
    if (it == cache_.end()) it = cache_.emplace(role, resolve_dataset(m_, m_.roles.at(role), seed_)).first;
    return it->second;
  }

  Progress progress(const std::string& stage) const {
    if (!progress_) return {};
    return [this, stage](std::string_view msg) {
      progress_("seed " + std::to_string(seed_) + " " + stage + ": " + std::string(msg));
    };
  }

  // Saves a stage's models and record under <seed dir>/<stage>/ and folds its
  // digests, seed trace and checkpoints into the seed's aggregate record.
  void stage(const std::string& name, RunRecord rec, const std::map<std::string, const Model*>& models) {
    const fs::path dir = dir_ / name;
    for (const auto& [model_name, model] : models) {
      const fs::path ckpt = dir / ("ckpt_" + model_name);
      save_checkpoint(*model, ckpt);
      rec.checkpoints[model_name] = ckpt;
    }
    validate(rec);
    write_record(rec, dir);
    for (const auto& [k, v] : rec.digests) agg_.digests[name + "/" + k] = v;
    for (const auto& [k, v] : rec.seed_trace) agg_.seed_trace[name + "/" + k] = v;
    for (const auto& [k, v] : rec.checkpoints) agg_.checkpoints[name + "/" + k] = v;
    agg_.wall_clock_seconds += rec.wall_clock_seconds;
    agg_.metrics = rec.metrics;
  }

  void summary(const std::string& key, double value) { agg_.summary[key] = value; }
  void tag(const std::string& key, const std::string& value) { agg_.tags[key] = value; }

  RunRecord finish() {
    validate(agg_);
    write_record(agg_, dir_);
    std::ofstream(dir_ / "DONE") << "ok\n";
    return agg_;
  }

 private:
  const ExperimentManifest& m_;
  std::uint64_t seed_;
  fs::path dir_;
  Progress progress_;
  ExperimentConfig cfg_;
  RunRecord agg_;
  std::map<std::string, DatasetSpec> cache_;
};

ArchSpec classifier_arch(ArchSpec arch, const DatasetSpec& data, std::size_t num_classes) {
  arch.image = data.image;
  arch.num_classes = num_classes;
  return arch;
}

Model teacher_stage(SeedRun& run, const ExperimentManifest& m, const DatasetSpec& train) {
  auto t = train_teacher(train, classifier_arch(m.teacher_arch, train, train.num_classes), run.cfg(),
                         run.progress("teacher"));
  run.stage("teacher", t.record, {{"teacher", &t.model}});
  run.summary("teacher_val_acc", t.record.summary.at("val_acc"));
  return t.model;
}

GanResult gan_stage(SeedRun& run, const std::string& name, const Model& teacher, const DatasetSpec& proxy,
                    ExperimentConfig cfg) {
  auto g = train_degan(teacher, proxy, cfg, std::nullopt, run.progress(name));
  run.stage(name, g.record, {{"generator", &g.generator}, {"discriminator", &g.discriminator}});
  run.summary(name + "_hist_entropy", g.record.summary.at("final_hist_entropy"));
  run.summary(name + "_mean_confidence", g.record.summary.at("final_mean_confidence"));
  return g;
}

std::string source_key(const std::string& source) { return "kd_" + source + "_acc"; }

void distill_stage(SeedRun& run, const std::string& source, const Model& teacher, const DistillSource& from,
                   const ExperimentManifest& m) {
  const DatasetSpec& test = run.data("test");
  const auto arch = classifier_arch(m.student_arch, test, teacher.output_shape().at(0));
  auto d = distill(teacher, arch, from, test, run.cfg(), run.progress("kd_" + source));
  run.stage("kd_" + source, d.record, {{"student", &d.student}});
  run.summary(source_key(source), d.record.summary.at("test_acc"));
  run.summary("teacher_test_acc", d.record.summary.at("teacher_test_acc"));
}

ExperimentConfig vanilla(ExperimentConfig cfg) {
  cfg.lambda_e = 0.0;
  cfg.lambda_d = 0.0;
  return cfg;
}

void run_distill(SeedRun& run, const ExperimentManifest& m, const Model& teacher, const std::string& source) {
  if (source == "true") {
    distill_stage(run, source, teacher, {nullptr, &run.data("train")}, m);
  } else if (source == "proxy") {
    distill_stage(run, source, teacher, {nullptr, &run.data("proxy")}, m);
  } else {
    const bool plain = source == "vanilla";
    const auto g = gan_stage(run, plain ? "gan_vanilla" : "gan_degan", teacher, run.data("proxy"),
                             plain ? vanilla(run.cfg()) : run.cfg());
    distill_stage(run, source, teacher, {&g.generator, nullptr}, m);
  }
}

void run_incremental(SeedRun& run, const ExperimentManifest& m, const std::vector<IncrementalMode>& modes) {
  const DatasetSpec& train = run.data("train");
  const DatasetSpec& test = run.data("test");
  const std::size_t k_total = train.num_classes;
  std::set<std::size_t> old_ids, new_ids;
  for (std::size_t c = 0; c < k_total; ++c) (c < m.old_classes ? old_ids : new_ids).insert(c);
  const DatasetSpec old_train = subset_classes(train, old_ids);
  const DatasetSpec new_train = offset_labels(subset_classes(train, new_ids), m.old_classes, k_total);
  const Model teacher = teacher_stage(run, m, old_train);
  run.summary("teacher_old_test_acc", accuracy(teacher, subset_classes(test, old_ids)));
  for (const auto mode : modes) {
    const std::string name = "incr_" + to_string(mode);
    auto r = incremental_update(teacher, new_train, mode, test, run.cfg(), run.progress(name));
    std::map<std::string, const Model*> models{{"model", &r.model}};
    if (r.generator) models["generator"] = &*r.generator;
    run.stage(name, r.record, models);
    run.summary(name + "_acc", r.record.summary.at("acc_all"));
    run.summary(name + "_acc_old", r.record.summary.at("acc_old"));
    run.summary(name + "_acc_new", r.record.summary.at("acc_new"));
  }
}

std::string grid_key(double le, double ld) { return "le=" + fmt("%g", le) + ",ld=" + fmt("%g", ld); }

RunRecord run_seed(const ExperimentManifest& m, std::uint64_t seed, const fs::path& dir, const Progress& progress) {
  SeedRun run(m, seed, dir, progress);
  switch (m.pipeline) {
    case PipelineKind::train_teacher: {
      const Model t = teacher_stage(run, m, run.data("train"));
      if (m.roles.count("test")) run.summary("teacher_test_acc", accuracy(t, run.data("test")));
      break;
    }
    case PipelineKind::train_degan: {
      const Model t = teacher_stage(run, m, run.data("train"));
      gan_stage(run, "gan", t, run.data("proxy"), run.cfg());
      break;
    }
    case PipelineKind::distill: {
      const Model t = teacher_stage(run, m, run.data("train"));
      run.tag("source", m.distill_source);
      run_distill(run, m, t, m.distill_source);
      break;
    }
    case PipelineKind::kd_suite: {
      const Model t = teacher_stage(run, m, run.data("train"));
      for (const char* source : {"true", "proxy", "vanilla", "degan"}) run_distill(run, m, t, source);
      break;
    }
    case PipelineKind::incremental:
      run_incremental(run, m, {m.incremental_mode});
      break;
    case PipelineKind::incremental_suite:
      run_incremental(run, m, {IncrementalMode::finetune, IncrementalMode::lwf_proxy, IncrementalMode::degan});
      break;
    case PipelineKind::sweep: {
      const Model t = teacher_stage(run, m, run.data("train"));
      std::size_t index = 0;
      for (double le : m.sweep_lambda_e) {
        for (double ld : m.sweep_lambda_d) {
          ExperimentConfig cfg = run.cfg();
          cfg.lambda_e = le;
          cfg.lambda_d = ld;
          const auto g = gan_stage(run, "gan_" + std::to_string(index++), t, run.data("proxy"), cfg);
          run.summary("hist_entropy[" + grid_key(le, ld) + "]", g.record.summary.at("final_hist_entropy"));
          run.summary("mean_confidence[" + grid_key(le, ld) + "]", g.record.summary.at("final_mean_confidence"));
        }
      }
      break;
    }
  }
  return run.finish();
}

void check_resolved(const ExperimentManifest& m, std::uint64_t seed) {
  std::map<std::string, DatasetSpec> data;
  for (const auto& [role, name] : m.roles) data.emplace(role, resolve_dataset(m, name, seed));
  const DatasetSpec& train = data.at("train");
  if (train.labels.empty()) throw ConfigError("train dataset '" + train.name + "' is unlabeled");
  for (const auto& [role, ds] : data) {
    if (ds.image.sample_shape() != train.image.sample_shape()) throw ConfigError("dataset role '" + role + "' has a different image shape");
  }
  if (auto it = data.find("test"); it != data.end()) {
    if (it->second.labels.empty()) throw ConfigError("test dataset is unlabeled");
    if (it->second.num_classes != train.num_classes) {
      throw ConfigError("test dataset class count differs from the train dataset");
    }
  }
  if (m.pipeline == PipelineKind::incremental || m.pipeline == PipelineKind::incremental_suite) {
    if (m.old_classes >= train.num_classes) throw ConfigError("old_classes must be below the train class count");
  }
}

void write_summary(const std::vector<std::uint64_t>& seeds, const std::vector<RunRecord>& records,
                   const fs::path& path) {
  std::set<std::string> keys;
  for (const auto& r : records) {
    for (const auto& [k, v] : r.summary) keys.insert(k);
  }
  std::ostringstream os;
  os << "metric\tmean";
  for (auto s : seeds) os << "\tseed_" << s;
  os << '\n';
  for (const auto& k : keys) {
    double sum = 0.0;
    std::size_t n = 0;
    std::string cells;
    for (const auto& r : records) {
      auto it = r.summary.find(k);
      if (it == r.summary.end()) {
        cells += "\t-";
        continue;
      }
      sum += it->second;
      ++n;
      cells += "\t" + fmt("%.10g", it->second);
    }
    os << k << '\t' << (n ? fmt("%.10g", sum / static_cast<double>(n)) : "-") << cells << '\n';
  }
  std::ofstream(path) << os.str();
}

}  // namespace

std::string to_string(PipelineKind kind) {
  switch (kind) {
    case PipelineKind::train_teacher: return "train_teacher";
    case PipelineKind::train_degan: return "train_degan";
    case PipelineKind::distill: return "distill";
    case PipelineKind::kd_suite: return "kd_suite";
    case PipelineKind::incremental: return "incremental";
    case PipelineKind::incremental_suite: return "incremental_suite";
    case PipelineKind::sweep: return "sweep";
  }
  return "?";
}

PipelineKind parse_pipeline(const std::string& text) {
  for (auto k : {PipelineKind::train_teacher, PipelineKind::train_degan, PipelineKind::distill, PipelineKind::kd_suite,
                 PipelineKind::incremental, PipelineKind::incremental_suite, PipelineKind::sweep}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown pipeline '" + text + "'");
}

ExperimentManifest parse_manifest(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("manifest must be a JSON object");
  try {
    ExperimentManifest m;
    m.pipeline = parse_pipeline(j.at("pipeline").get<std::string>());
    if (j.contains("out")) m.out = j.at("out").get<std::string>();
    m.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", {0});
    if (m.seeds.empty()) throw ConfigError("seed list is empty");
    if (j.contains("repeat") && j.at("repeat").get<std::size_t>() != m.seeds.size()) {
      throw ConfigError("repeat count does not match the seed list length");
    }
    if (std::set<std::uint64_t>(m.seeds.begin(), m.seeds.end()).size() != m.seeds.size()) {
      throw ConfigError("seed list has duplicates");
    }
    if (j.contains("config_file")) {
      fs::path p = j.at("config_file").get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      m.config = load_config(p);
    }
    if (j.contains("config")) apply_config_json(m.config, j.at("config"));
    validate(m.config);
    if (j.contains("datasets")) {
      for (const auto& [name, r] : j.at("datasets").items()) m.datasets[name] = parse_recipe(name, r, base_dir);
    }
    if (j.contains("roles")) m.roles = j.at("roles").get<std::map<std::string, std::string>>();
    ArchSpec teacher;
    ArchSpec student;
    student.width_multiplier = 0.5;
    if (j.contains("archs")) {
      const auto& a = j.at("archs");
      if (a.contains("teacher")) teacher = parse_arch(a.at("teacher"), teacher, "teacher arch");
      if (a.contains("student")) student = parse_arch(a.at("student"), student, "student arch");
    }
    m.teacher_arch = teacher;
    m.student_arch = student;
    m.distill_source = get_or<std::string>(j, "source", "degan");
    if (m.distill_source != "degan" && m.distill_source != "vanilla" && m.distill_source != "proxy" &&
        m.distill_source != "true") {
      throw ConfigError("unknown distillation source '" + m.distill_source + "'");
    }
    m.old_classes = get_or<std::size_t>(j, "old_classes", 0);
    if ((m.pipeline == PipelineKind::incremental || m.pipeline == PipelineKind::incremental_suite) &&
        m.old_classes == 0) {
      throw ConfigError("incremental pipelines need old_classes > 0");
    }
    if (j.contains("mode")) m.incremental_mode = parse_incremental_mode(j.at("mode").get<std::string>());
    m.sweep_lambda_e = get_or<std::vector<double>>(j, "lambda_e", {m.config.lambda_e});
    m.sweep_lambda_d = get_or<std::vector<double>>(j, "lambda_d", {m.config.lambda_d});
    for (double v : m.sweep_lambda_e) {
      if (!(v >= 0.0)) throw ConfigError("lambda_e grid values must be >= 0");
    }
    for (double v : m.sweep_lambda_d) {
      if (!(v >= 0.0)) throw ConfigError("lambda_d grid values must be >= 0");
    }
    if (m.sweep_lambda_e.empty() || m.sweep_lambda_d.empty()) throw ConfigError("sweep grid is empty");
    if (j.contains("tags")) m.tags = j.at("tags").get<std::map<std::string, std::string>>();
    check_references(m);
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
}

ExperimentManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
  return parse_manifest(j, path.parent_path());
}

DatasetSpec resolve_dataset(const ExperimentManifest& m, const std::string& name, std::uint64_t run_seed) {
  auto it = m.datasets.find(name);
  if (it == m.datasets.end()) throw ConfigError("unknown dataset '" + name + "'");
  const DatasetRecipe& r = it->second;
  const std::uint64_t seed = RngStreams(run_seed).child_seed("data/" + name + "/" + std::to_string(r.seed));
  DatasetSpec ds;
  switch (r.kind) {
    case DatasetRecipe::Kind::synthetic:
      ds = make_synthetic(r.classes, r.per_class, r.image, r.style, seed);
      break;
    case DatasetRecipe::Kind::noise:
      ds = make_noise_proxy(r.count, r.image, seed);
      break;
    case DatasetRecipe::Kind::derived: {
      ProxyRecipe p;
      p.source = resolve_dataset(m, r.from, run_seed);
      p.class_filter = r.class_filter;
      p.grayscale = r.grayscale;
      try {
        ds = build_proxy(p);
      } catch (const ArgumentError& e) {
        throw ConfigError("dataset '" + name + "': " + e.what());
      }
      break;
    }
    case DatasetRecipe::Kind::cache:
      ds = DatasetCache::from_env().load(r.cache_name);
      break;
    case DatasetRecipe::Kind::cifar:
      ds = read_cifar_binary(r.files, r.cifar100, name);
      break;
    case DatasetRecipe::Kind::idx:
      ds = read_idx(r.files[0], r.files[1], name);
      break;
  }
  ds.name = name;
  return ds;
}

std::vector<RunRecord> run(const ExperimentManifest& m, const RunOptions& options) {
  if (m.out.empty()) throw ConfigError("manifest has no output directory");
  check_references(m);
  if (fs::exists(m.out) && !fs::is_empty(m.out) && !options.resume) {
    throw ConfigError("output directory " + m.out.string() + " is not empty; pass resume to continue it");
  }
  try {
    fs::create_directories(m.out);
  } catch (const fs::filesystem_error& e) {
    throw ConfigError("output directory not writable: " + std::string(e.what()));
  }
  if (!std::ofstream(m.out / "manifest_config.txt")) {
    throw ConfigError("output directory not writable: " + m.out.string());
  }
  save_config(m.config, m.out / "manifest_config.txt");
  check_resolved(m, m.seeds.front());

  std::vector<RunRecord> records;
  for (auto seed : m.seeds) {
    const fs::path dir = m.out / seed_dir_name(seed);
    if (options.resume && fs::exists(dir / "DONE")) {
      if (options.progress) options.progress("seed " + std::to_string(seed) + ": already complete, skipping");
      records.push_back(read_record(dir));
      continue;
    }
    fs::remove_all(dir);
    const auto start = std::chrono::steady_clock::now();
    RunRecord rec = run_seed(m, seed, dir, options.progress);
    rec.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream(dir / "timing.json") << json{{"wall_clock_seconds", rec.wall_clock_seconds}}.dump() << '\n';
    records.push_back(std::move(rec));
  }
  write_summary(m.seeds, records, m.out / "summary.tsv");
  return records;
}

std::vector<RunRecord> load_run_records(const fs::path& out) {
  if (!fs::is_directory(out)) throw ConfigError("not a run directory: " + out.string());
  std::vector<std::pair<std::uint64_t, fs::path>> dirs;
  for (const auto& entry : fs::directory_iterator(out)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("seed_", 0) != 0 || !fs::exists(entry.path() / "DONE")) continue;
    dirs.emplace_back(std::stoull(name.substr(5)), entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<RunRecord> records;
  for (const auto& [seed, dir] : dirs) records.push_back(read_record(dir));
  return records;
}

SampleGrid export_samples(const Model& generator, const Model& classifier, std::size_t rows, std::size_t cols,
                          std::uint64_t seed, const fs::path& path) {
  if (rows == 0 || cols == 0) throw ArgumentError("export_samples: grid must be non-empty");
  const std::size_t n = rows * cols;
  Engine rng = RngStreams(seed).stream("export");
  const GeneratedBatch batch = generate_batch(generator, classifier, n, rng);
  const Tensor raw = generator.forward(batch.latent.values);
  const std::size_t h = raw.dim(1), w = raw.dim(2), c = raw.dim(3);
  if (c != 1 && c != 3) throw ArgumentError("export_samples: only 1- or 3-channel images can be rastered");

  SampleGrid out;
  out.image = path;
  out.image.replace_extension(c == 1 ? ".pgm" : ".ppm");
  out.sidecar = path;
  out.sidecar.replace_extension(".tsv");
  if (!path.parent_path().empty()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }

  const std::size_t width = cols * w, height = rows * h;
  std::vector<unsigned char> pixels(width * height * c);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r0 = (i / cols) * h, c0 = (i % cols) * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double v = raw[((i * h + y) * w + x) * c + ch];
          const double scaled = std::clamp((v + 1.0) * 0.5, 0.0, 1.0) * 255.0;
          pixels[((r0 + y) * width + c0 + x) * c + ch] = static_cast<unsigned char>(std::lround(scaled));
        }
      }
    }
  }
  std::ofstream img(out.image, std::ios::binary);
  if (!img) throw ConfigError("cannot write " + out.image.string());
  img << (c == 1 ? "P5" : "P6") << '\n' << width << ' ' << height << "\n255\n";
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!img) throw ConfigError("cannot write " + out.image.string());

  std::ofstream side(out.sidecar);
  if (!side) throw ConfigError("cannot write " + out.sidecar.string());
  side << "index\trow\tcol\targmax\tconfidence\n";
  const std::size_t k = batch.classes.probs.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (batch.classes.probs.at(i, j) > batch.classes.probs.at(i, best)) best = j;
    }
    side << i << '\t' << i / cols << '\t' << i % cols << '\t' << best << '\t'
         << fmt("%.10g", batch.classes.probs.at(i, best)) << '\n';
  }
  return out;
}

std::string to_string(TableId id) {
  switch (id) {
    case TableId::kd_main: return "kd_main";
    case TableId::kd_proxy_sweep: return "kd_proxy_sweep";
    case TableId::incremental: return "incremental";
  }
  return "?";
}

TableId parse_table_id(const std::string& text) {
  for (auto id : {TableId::kd_main, TableId::kd_proxy_sweep, TableId::incremental}) {
    if (to_string(id) == text) return id;
  }
  throw ConfigError("unknown table '" + text + "'");
}

namespace {

constexpr const char* kMissing = "-";

struct Cell {
  double sum = 0.0;
  std::size_t n = 0;
  std::string str() const { return n ? fmt("%.2f", 100.0 * sum / static_cast<double>(n)) : kMissing; }
};

Cell collect(const std::vector<const RunRecord*>& records, const std::string& key) {
  Cell c;
  for (const auto* r : records) {
    if (auto it = r->summary.find(key); it != r->summary.end()) {
      c.sum += it->second;
      ++c.n;
    }
  }
  return c;
}

std::string ref(double v) { return v < 0 ? kMissing : fmt("%.2f", v); }

// Pads every column to its widest cell (UTF-8 aware).
std::string layout(const std::vector<std::vector<std::string>>& rows) {
  auto width = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
  };
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    widths.resize(std::max(widths.size(), row.size()), 0);
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], width(row[i]));
  }
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      out += rows[r][i];
      if (i + 1 < rows[r].size()) out += std::string(widths[i] - width(rows[r][i]) + 2, ' ');
    }
    out += '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w + 2;
      out += std::string(total - 2, '-') + '\n';
    }
  }
  return out;
}

std::string kd_main(const std::vector<const RunRecord*>& recs) {
  struct Row {
    const char* label;
    std::string key;
    double cifar10, fmnist, cifar100;
  };
  const std::vector<Row> rows{
      {"Teacher", "teacher_test_acc", 83.02, 90.72, 79.05},
      {"True data", source_key("true"), 81.78, 88.98, 69.65},
      {"Proxy data", source_key("proxy"), 74.58, 77.81, 46.32},
      {"DCGAN", source_key("vanilla"), 66.24, 79.67, 39.77},
      {"DeGAN", source_key("degan"), 80.55, 83.79, 65.25},
  };
  std::vector<std::vector<std::string>> t{{"Method", "This run (" + std::to_string(recs.size()) + " seeds)",
                                           "Ref CIFAR-10", "Ref F-MNIST", "Ref CIFAR-100"}};
  for (const auto& r : rows) t.push_back({r.label, collect(recs, r.key).str(), ref(r.cifar10), ref(r.fmnist), ref(r.cifar100)});
  return "Student accuracy (%). Ref columns are published reference values, not desk-scale targets.\n" + layout(t);
}

std::string kd_proxy_sweep(const std::vector<const RunRecord*>& recs) {
  const std::vector<std::pair<std::string, std::array<double, 3>>> published{
      {"90 classes", {74.58, 66.24, 80.55}},   {"40 classes", {65.78, 66.13, 76.32}},
      {"6 classes", {36.44, 39.44, 59.53}},    {"Sample-1", {42.15, 56.81, 66.95}},
      {"Sample-2", {49.24, 67.33, 74.59}},     {"Sample-3", {46.65, 62.1, 72.87}},
      {"Sample-4", {49.08, 69.34, 76.63}},     {"Sample-5", {47.0, 68.66, 71.61}},
      {"SVHN", {45.18, 26.5, 55.05}},          {"Random Noise", {11.63, 10.09, 23.26}},
  };
  std::vector<std::string> proxies;
  std::map<std::string, std::vector<const RunRecord*>> by_proxy;
  for (const auto* r : recs) {
    auto it = r->tags.find("proxy");
    const std::string p = it == r->tags.end() ? "proxy" : it->second;
    if (!by_proxy.count(p)) proxies.push_back(p);
    by_proxy[p].push_back(r);
  }
  const std::array<std::pair<const char*, std::string>, 3> methods{
      {{"Proxy data", source_key("proxy")}, {"DCGAN", source_key("vanilla")}, {"DeGAN", source_key("degan")}}};

  std::vector<std::vector<std::string>> mine{{"Method"}};
  for (const auto& p : proxies) mine[0].push_back(p);
  for (std::size_t i = 0; i < methods.size(); ++i) {
    std::vector<std::string> row{methods[i].first};
    for (const auto& p : proxies) row.push_back(collect(by_proxy[p], methods[i].second).str());
    mine.push_back(row);
  }
  std::vector<std::vector<std::string>> theirs{{"Method"}};
  for (const auto& [name, v] : published) theirs[0].push_back(name);
  for (std::size_t i = 0; i < methods.size(); ++i) {
    std::vector<std::string> row{methods[i].first};
    for (const auto& [name, v] : published) row.push_back(ref(v[i]));
    theirs.push_back(row);
  }
  return "Student accuracy (%) by proxy dataset, this run:\n" + layout(mine) +
         "\nPublished reference values (CIFAR-10 true data), not desk-scale targets:\n" + layout(theirs);
}

std::string incremental_table(const std::vector<const RunRecord*>& recs) {
  struct Row {
    const char* label;
    std::string key;
    double published;
  };
  const std::vector<Row> rows{
      {"Finetuning", "incr_finetune_acc", 41.6},
      {"Fixed representation", "", 46.8},
      {"LwF.MC", "", 62.58},
      {"Using proxy data", "incr_lwf_proxy_acc", 65.03},
      {"DeGAN", "incr_degan_acc", 68.65},
  };
  std::vector<std::vector<std::string>> t{
      {"Method", "This run (" + std::to_string(recs.size()) + " seeds)", "Ref CIFAR-100"}};
  for (const auto& r : rows) {
    t.push_back({r.label, r.key.empty() ? kMissing : collect(recs, r.key).str(), ref(r.published)});
  }
  return "Combined accuracy (%) after one incremental update. Ref is the published reference value.\n" + layout(t);
}

}  // namespace

std::string make_table(const std::vector<RunRecord>& records, TableId id) {
  if (records.empty()) throw ArgumentError("make_table: no run records");
  std::vector<const RunRecord*> recs;
  for (const auto& r : records) recs.push_back(&r);
  switch (id) {
    case TableId::kd_main: return kd_main(recs);
    case TableId::kd_proxy_sweep: return kd_proxy_sweep(recs);
    case TableId::incremental: return incremental_table(recs);
  }
  return {};
}

}  // namespace degan
