#include "degan/pipelines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "degan/errors.hpp"
#include "degan/losses.hpp"
#include "degan/models.hpp"
#include "degan/optimizer.hpp"

namespace degan {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr std::size_t kEvalChunk = 256;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void report(const Progress& progress, const std::string& line) {
  if (progress) progress(line);
}

// Records the child seed of every stream a pipeline draws from.
class SeedLedger {
 public:
  SeedLedger(std::uint64_t root, RunRecord& record) : streams_(root), record_(record) {}
  Engine stream(const std::string& name) {
    record_.seed_trace[name] = streams_.child_seed(name);
    return streams_.stream(name);
  }

 private:
  RngStreams streams_;
  RunRecord& record_;
};

void require_finite(double v, const std::string& component, const std::string& where) {
  if (!std::isfinite(v)) throw NumericError(where + ": non-finite " + component);
}

void require_finite(const LossValue& loss, const std::string& where) {
  require_finite(loss.value, "total loss", where);
  for (const auto& [name, value] : loss.components) require_finite(value, name, where);
}

// Running means of loss components over one epoch.
class EpochMeans {
 public:
  void add(const std::string& name, double v) {
    auto& [sum, n] = acc_[name];
    sum += v;
    ++n;
  }
  double mean(const std::string& name) const {
    auto it = acc_.find(name);
    if (it == acc_.end() || it->second.second == 0) return 0.0;
    return it->second.first / static_cast<double>(it->second.second);
  }

 private:
  std::map<std::string, std::pair<double, std::size_t>> acc_;
};

Tensor batch_images(const DatasetSpec& ds, const std::vector<std::size_t>& idx) {
  return gather_rows(ds.images, idx);
}

std::vector<std::size_t> batch_labels(const DatasetSpec& ds, const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.labels[i]);
  return out;
}

std::vector<std::size_t> predict(const Model& classifier, const Tensor& images) {
  std::vector<std::size_t> out;
  const std::size_t n = images.batch();
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + kEvalChunk); ++i) idx.push_back(i);
    const auto am = argmax_rows(classifier.forward(gather_rows(images, idx)));
    out.insert(out.end(), am.begin(), am.end());
  }
  return out;
}

// Copies the first `cols` columns of an N x K matrix.
Tensor leading_columns(const Tensor& m, std::size_t cols) {
  const std::size_t n = m.dim(0);
  const std::size_t k = m.dim(1);
  Tensor out({n, cols});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = m.data[i * k + j];
  }
  return out;
}

Tensor pad_columns(const Tensor& m, std::size_t cols) {
  const std::size_t n = m.dim(0);
  const std::size_t k = m.dim(1);
  Tensor out({n, cols});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = m.at(i, j);
  }
  return out;
}

void add_into(std::vector<double>& acc, const std::vector<double>& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

}  // namespace

// ---- metrics --------------------------------------------------------------

void MetricsTable::add_row(std::vector<double> row) {
  if (row.size() != columns.size()) throw ArgumentError("metrics row width does not match header");
  if (!rows.empty() && !(row.front() > rows.back().front())) {
    throw ArgumentError("metrics rows must have increasing epoch index");
  }
  rows.push_back(std::move(row));
}

std::vector<double> MetricsTable::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw ArgumentError("no metrics column '" + name + "'");
  const auto c = static_cast<std::size_t>(it - columns.begin());
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

double MetricsTable::last(const std::string& name) const {
  const auto col = column(name);
  if (col.empty()) throw ArgumentError("metrics table is empty");
  return col.back();
}

std::string MetricsTable::to_tsv() const {
  std::ostringstream os;
  for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "\t" : "") << columns[c];
  os << '\n';
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "\t" : "") << format_value(r[c]);
    os << '\n';
  }
  return os.str();
}

MetricsTable MetricsTable::from_tsv(const std::string& text) {
  MetricsTable t;
  std::istringstream is(text);
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, '\t')) cells.push_back(cell);
    if (header) {
      t.columns = cells;
      header = false;
      continue;
    }
    std::vector<double> row;
    for (const auto& c : cells) row.push_back(std::stod(c));
    t.add_row(std::move(row));
  }
  return t;
}

void validate(const RunRecord& record) {
  for (std::size_t i = 1; i < record.metrics.rows.size(); ++i) {
    if (!(record.metrics.rows[i].front() > record.metrics.rows[i - 1].front())) {
      throw InvariantError("run record metrics are not monotone in epoch");
    }
  }
  for (const auto& [name, path] : record.checkpoints) {
    if (!std::filesystem::exists(path)) throw InvariantError("checkpoint '" + name + "' missing at " + path.string());
  }
}

void write_record(const RunRecord& record, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "metrics.tsv") << record.metrics.to_tsv();
  save_config(record.config, dir / "config.txt");
  json j;
  j["pipeline"] = record.pipeline;
  j["summary"] = record.summary;
  j["digests"] = record.digests;
  json seeds = json::object();
  for (const auto& [k, v] : record.seed_trace) seeds[k] = std::to_string(v);
  j["seed_trace"] = seeds;
  json ckpt = json::object();
  for (const auto& [k, v] : record.checkpoints) {
    ckpt[k] = std::filesystem::proximate(v, dir).generic_string();
  }
  j["checkpoints"] = ckpt;
  j["tags"] = record.tags;
  std::ofstream(dir / "record.json") << j.dump(2) << '\n';
  std::ofstream(dir / "timing.json") << json{{"wall_clock_seconds", record.wall_clock_seconds}}.dump() << '\n';
}

RunRecord read_record(const std::filesystem::path& dir) {
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  RunRecord r;
  r.metrics = MetricsTable::from_tsv(slurp(dir / "metrics.tsv"));
  r.config = load_config(dir / "config.txt");
  const json j = json::parse(slurp(dir / "record.json"));
  r.pipeline = j.at("pipeline").get<std::string>();
  r.summary = j.at("summary").get<std::map<std::string, double>>();
  r.digests = j.at("digests").get<std::map<std::string, std::string>>();
  for (const auto& [k, v] : j.at("seed_trace").items()) r.seed_trace[k] = std::stoull(v.get<std::string>());
  for (const auto& [k, v] : j.at("checkpoints").items()) {
    const std::filesystem::path p = v.get<std::string>();
    r.checkpoints[k] = p.is_absolute() ? p : (dir / p).lexically_normal();
  }
  if (j.contains("tags")) r.tags = j.at("tags").get<std::map<std::string, std::string>>();
  if (std::filesystem::exists(dir / "timing.json")) {
    r.wall_clock_seconds = json::parse(slurp(dir / "timing.json")).at("wall_clock_seconds").get<double>();
  }
  return r;
}

// ---- evaluation helpers ---------------------------------------------------

double accuracy(const Model& classifier, const DatasetSpec& data) {
  return accuracy_in_range(classifier, data, 0, std::numeric_limits<std::size_t>::max());
}

double accuracy_in_range(const Model& classifier, const DatasetSpec& data, std::size_t lo, std::size_t hi) {
  if (!data.labeled()) throw ArgumentError("accuracy: dataset is unlabeled");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] >= lo && data.labels[i] < hi) idx.push_back(i);
  }
  if (idx.empty()) throw ArgumentError("accuracy: no samples in the requested class range");
  const auto pred = predict(classifier, gather_rows(data.images, idx));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) hits += pred[i] == data.labels[idx[i]];
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

std::vector<double> class_histogram(const ClassDistribution& y) {
  std::vector<double> freq(y.classes(), 0.0);
  for (std::size_t c : argmax_rows(y.probs)) freq[c] += 1.0;
  for (double& f : freq) f /= static_cast<double>(y.rows());
  return freq;
}

double histogram_entropy(const std::vector<double>& freq) {
  double h = 0.0;
  for (double f : freq) {
    if (f > 0.0) h -= f * std::log(f);
  }
  return h;
}

double mean_confidence(const ClassDistribution& y) {
  double sum = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double best = 0.0;
    for (std::size_t j = 0; j < y.classes(); ++j) best = std::max(best, y.probs.at(i, j));
    sum += best;
  }
  return sum / static_cast<double>(y.rows());
}

// ---- teacher --------------------------------------------------------------

TeacherResult train_teacher(const DatasetSpec& true_data, const ArchSpec& arch, const ExperimentConfig& cfg,
                            const Progress& progress) {
  validate(cfg);
  if (!true_data.labeled()) throw ArgumentError("train_teacher: dataset is unlabeled");
  validate(true_data);
  const auto start = Clock::now();

  RunRecord record;
  record.pipeline = "train_teacher";
  record.config = cfg;
  record.metrics.columns = {"epoch", "train_loss", "train_acc", "val_acc"};
  SeedLedger seeds(cfg.seed, record);

  ArchSpec spec = arch;
  spec.num_classes = true_data.num_classes;
  spec.image = true_data.image;
  auto [train, val] = split_train_val(true_data, 0.8, seeds.stream("teacher/split")());
  Model model = build_classifier(spec, seeds.stream("teacher/init")());
  Adam adam(model.param_count(), {.lr = cfg.teacher_lr});
  BatchSampler sampler(train.size(), cfg.batch_size, seeds.stream("teacher/batches"));

  Model best = model;
  double best_val = -1.0;
  std::size_t best_epoch = 0;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.teacher_max_epochs; ++epoch) {
    EpochMeans means;
    for (const auto& idx : sampler.epoch()) {
      Trace trace;
      const Tensor logits = model.forward_train(batch_images(train, idx), trace);
      const auto ce = cross_entropy_grad(logits, batch_labels(train, idx));
      require_finite(ce.loss, "train_teacher");
      auto grad = model.zero_grad();
      model.backward(trace, ce.logits, grad);
      adam.step(model, grad);
      means.add("loss", ce.loss.value);
    }
    const double train_acc = accuracy(model, train);
    const double val_acc = accuracy(model, val);
    record.metrics.add_row({static_cast<double>(epoch), means.mean("loss"), train_acc, val_acc});
    report(progress, "teacher epoch " + std::to_string(epoch) + " val_acc " + format_value(val_acc));
    if (val_acc > best_val) {
      best_val = val_acc;
      best = model;
      best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.teacher_patience) {
      break;
    }
  }

  Model frozen = freeze(std::move(best));
  record.summary["best_epoch"] = static_cast<double>(best_epoch);
  record.summary["train_acc"] = accuracy(frozen, train);
  record.summary["val_acc"] = best_val;
  record.digests["teacher"] = frozen.digest_hex();
  record.wall_clock_seconds = seconds_since(start);
  return {std::move(frozen), std::move(record)};
}

// ---- GAN ------------------------------------------------------------------

GanArchs gan_archs_for(const Model& classifier, const ExperimentConfig& cfg) {
  const ArchSpec& c = classifier.arch();
  GanArchs out;
  out.generator.family = ArchFamily::dcgan_generator;
  out.generator.image = c.image;
  out.generator.latent_dim = cfg.latent_dim;
  out.generator.scale = c.scale;
  out.discriminator.family = ArchFamily::dcgan_discriminator;
  out.discriminator.image = c.image;
  out.discriminator.scale = c.scale;
  return out;
}

Tensor generate_images(const Model& generator, std::size_t n, Engine& rng) {
  const LatentBatch z = sample_latent({generator.arch().latent_dim}, n, rng);
  return generator.metadata().output_adapter.apply(generator.forward(z.values));
}

GeneratedBatch generate_batch(const Model& generator, const Model& classifier, std::size_t n, Engine& rng) {
  GeneratedBatch out;
  out.latent = sample_latent({generator.arch().latent_dim}, n, rng);
  out.images = generator.metadata().output_adapter.apply(generator.forward(out.latent.values));
  Tensor probs({n, classifier.output_shape().at(0)});
  const std::size_t k = probs.dim(1);
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + kEvalChunk); ++i) idx.push_back(i);
    const auto part = classify(classifier, gather_rows(out.images, idx));
    std::copy(part.probs.data.begin(), part.probs.data.end(),
              probs.data.begin() + static_cast<std::ptrdiff_t>(start * k));
  }
  out.classes = ClassDistribution::from_probs(std::move(probs));
  return out;
}

LossValue discriminator_objective(Model& disc, const Tensor& real, const Tensor& fake, std::span<double> grad,
                                  double eps) {
  Trace r_trace;
  Trace f_trace;
  const Tensor d_real = disc.forward_train(real, r_trace);
  const Tensor d_fake = disc.forward_train(fake, f_trace);
  const auto dl = discriminator_loss_grad(d_real.data, d_fake.data, eps);
  disc.backward(r_trace, Tensor(d_real.shape, dl.d_real), grad);
  disc.backward(f_trace, Tensor(d_fake.shape, dl.d_fake), grad);
  return dl.loss;
}

GeneratorFeedback generator_feedback(const Model& disc, const Model& classifier, const RangeAdapter& adapter,
                                     const Tensor& fake, double lambda_e, double lambda_d, AdversarialForm form,
                                     double eps) {
  GeneratorFeedback out;
  Trace d_trace;
  const Tensor d_fake = disc.forward_batch_stats(fake, &d_trace);
  if (lambda_e > 0.0 || lambda_d > 0.0) {
    Trace c_trace;
    const Tensor logits = classifier.forward(adapter.apply(fake), &c_trace);
    const ClassDistribution y = softmax(logits);
    auto g = generator_loss_grad(d_fake.data, y, lambda_e, lambda_d, form, eps);
    out.loss = g.loss;
    out.grad_fake = disc.backward(d_trace, Tensor(d_fake.shape, g.d_fake));
    const Tensor gc = classifier.backward(c_trace, softmax_backward(y, g.probs));
    for (std::size_t i = 0; i < out.grad_fake.size(); ++i) out.grad_fake[i] += adapter.scale * gc[i];
  } else {
    // A one-column distribution has zero entropy and diversity.
    const auto y = ClassDistribution::from_probs(Tensor({fake.batch(), 1}, 1.0));
    auto g = generator_loss_grad(d_fake.data, y, 0.0, 0.0, form, eps);
    out.loss = g.loss;
    out.grad_fake = disc.backward(d_trace, Tensor(d_fake.shape, g.d_fake));
  }
  return out;
}

GanResult train_degan(const Model& classifier, const DatasetSpec& proxy, const ExperimentConfig& cfg,
                      const std::optional<GanArchs>& archs, const Progress& progress) {
  validate(cfg);
  if (!classifier.frozen()) throw ContractError("train_degan: classifier must be frozen");
  validate(proxy);
  if (proxy.images.sample_shape() != classifier.input_shape()) {
    throw ArgumentError("train_degan: proxy images " + shape_to_string(proxy.images.sample_shape()) +
                        " do not match classifier input " + shape_to_string(classifier.input_shape()));
  }
  const auto start = Clock::now();
  const bool feedback = cfg.lambda_e > 0.0 || cfg.lambda_d > 0.0;
  const AdversarialForm form = cfg.non_saturating ? AdversarialForm::non_saturating : AdversarialForm::literal;
  const double eps = cfg.eps_log;

  RunRecord record;
  record.pipeline = feedback ? "train_degan" : "train_vanilla_gan";
  record.config = cfg;
  record.metrics.columns = {"epoch",     "d_loss",    "adv_real",  "adv_fake",        "g_loss",
                            "g_adv",     "g_entropy", "g_diversity", "mean_confidence", "hist_entropy"};
  const std::size_t k = classifier.output_shape().at(0);
  for (std::size_t c = 0; c < k; ++c) record.metrics.columns.push_back("hist_" + std::to_string(c));
  SeedLedger seeds(cfg.seed, record);

  const GanArchs spec = archs ? *archs : gan_archs_for(classifier, cfg);
  Model gen = build_generator(spec.generator, seeds.stream("gan/g_init")());
  Model disc = build_discriminator(spec.discriminator, seeds.stream("gan/d_init")());
  const RangeAdapter adapter = gen.metadata().output_adapter;
  Adam g_opt(gen.param_count(), {.lr = cfg.gan_lr, .beta1 = cfg.gan_beta1});
  Adam d_opt(disc.param_count(), {.lr = cfg.gan_lr, .beta1 = cfg.gan_beta1});
  BatchSampler sampler(proxy.size(), cfg.batch_size, seeds.stream("gan/batches"));
  Engine latent_rng = seeds.stream("gan/latent");
  const Tensor proxy_gan = to_gan_range(proxy.images);
  const LatentSpec latent{spec.generator.latent_dim};

  const std::uint64_t c_digest = classifier.param_digest();
  record.digests["classifier_before"] = digest_to_hex(c_digest);

  for (std::size_t epoch = 1; epoch <= cfg.gan_epochs; ++epoch) {
    EpochMeans means;
    for (const auto& idx : sampler.epoch()) {
      const std::size_t n = idx.size();
      const Tensor real = gather_rows(proxy_gan, idx);
      const LatentBatch z = sample_latent(latent, n, latent_rng);
      Trace g_trace;
      const Tensor fake = gen.forward_train(z.values, g_trace);

      // Discriminator step: ascend L_D with the generator held fixed.
      const std::uint64_t g_before = gen.param_digest();
      {
        auto grad = disc.zero_grad();
        const LossValue dl = discriminator_objective(disc, real, fake, grad, eps);
        require_finite(dl, "train_degan discriminator step");
        for (double& g : grad) g = -g;
        d_opt.step(disc, grad);
        means.add("d_loss", dl.value);
        means.add("adv_real", dl.components.at("adv_real"));
        means.add("adv_fake", dl.components.at("adv_fake"));
      }
      if (gen.param_digest() != g_before) throw InvariantError("train_degan: generator changed during discriminator step");

      // Generator step: descend L_G through the updated discriminator and the frozen classifier.
      const std::uint64_t d_before = disc.param_digest();
      {
        const auto fb = generator_feedback(disc, classifier, adapter, fake, cfg.lambda_e, cfg.lambda_d, form, eps);
        require_finite(fb.loss, "train_degan generator step");
        auto grad = gen.zero_grad();
        gen.backward(g_trace, fb.grad_fake, grad);
        g_opt.step(gen, grad);
        means.add("g_loss", fb.loss.value);
        means.add("g_adv", fb.loss.components.at("adv"));
        means.add("g_entropy", fb.loss.components.at("entropy"));
        means.add("g_diversity", fb.loss.components.at("diversity"));
      }
      if (disc.param_digest() != d_before) {
        throw InvariantError("train_degan: discriminator changed during generator step");
      }
      if (classifier.param_digest() != c_digest) throw InvariantError("train_degan: classifier parameters changed");
    }

    // Evaluation draws come from their own stream so they never perturb training.
    Engine eval_rng = RngStreams(seeds.stream("gan/eval")()).stream("epoch/" + std::to_string(epoch));
    const auto sample = generate_batch(gen, classifier, cfg.eval_samples, eval_rng);
    const auto hist = class_histogram(sample.classes);
    std::vector<double> row = {static_cast<double>(epoch), means.mean("d_loss"),    means.mean("adv_real"),
                               means.mean("adv_fake"),     means.mean("g_loss"),    means.mean("g_adv"),
                               means.mean("g_entropy"),    means.mean("g_diversity"), mean_confidence(sample.classes),
                               histogram_entropy(hist)};
    row.insert(row.end(), hist.begin(), hist.end());
    record.metrics.add_row(std::move(row));
    report(progress, record.pipeline + " epoch " + std::to_string(epoch) + " d_loss " +
                         format_value(means.mean("d_loss")) + " hist_entropy " + format_value(histogram_entropy(hist)));
  }

  record.digests["classifier_after"] = classifier.digest_hex();
  record.digests["generator"] = gen.digest_hex();
  record.digests["discriminator"] = disc.digest_hex();
  record.summary["final_mean_confidence"] = record.metrics.last("mean_confidence");
  record.summary["final_hist_entropy"] = record.metrics.last("hist_entropy");
  record.wall_clock_seconds = seconds_since(start);
  return {std::move(gen), std::move(disc), std::move(record)};
}

GanResult train_vanilla_gan(const Model& classifier, const DatasetSpec& proxy, ExperimentConfig cfg,
                            const std::optional<GanArchs>& archs, const Progress& progress) {
  cfg.lambda_e = 0.0;
  cfg.lambda_d = 0.0;
  return train_degan(classifier, proxy, cfg, archs, progress);
}

// ---- distillation ---------------------------------------------------------

DistillResult distill(const Model& teacher, const ArchSpec& student_arch, const DistillSource& source,
                      const DatasetSpec& test_set, const ExperimentConfig& cfg, const Progress& progress) {
  validate(cfg);
  if (!teacher.frozen()) throw ContractError("distill: teacher must be frozen");
  if ((source.generator == nullptr) == (source.data == nullptr)) {
    throw ArgumentError("distill: exactly one of generator or data must be given");
  }
  const auto start = Clock::now();

  RunRecord record;
  record.pipeline = "distill";
  record.config = cfg;
  record.metrics.columns = {"epoch", "kd_loss", "kl", "test_acc"};
  SeedLedger seeds(cfg.seed, record);

  ArchSpec spec = student_arch;
  spec.family = ArchFamily::conv_classifier;
  spec.image = teacher.arch().image;
  spec.num_classes = teacher.arch().num_classes;
  Model student = build_classifier(spec, seeds.stream("kd/init")());
  Adam opt(student.param_count(), {.lr = cfg.student_lr});
  const std::uint64_t t_digest = teacher.param_digest();
  record.digests["teacher"] = digest_to_hex(t_digest);

  std::optional<DatasetSpec> pool;
  Engine gen_rng = seeds.stream("kd/latent");
  if (source.generator && cfg.kd_pool_size > 0) {
    pool.emplace();
    pool->name = "generated_pool";
    pool->image = spec.image;
    pool->images = generate_images(*source.generator, cfg.kd_pool_size, gen_rng);
  }
  const DatasetSpec* data = pool ? &*pool : source.data;
  std::optional<BatchSampler> sampler;
  if (data) {
    if (data->images.sample_shape() != teacher.input_shape()) {
      throw ArgumentError("distill: source images do not match the teacher input shape");
    }
    sampler.emplace(data->size(), cfg.batch_size, seeds.stream("kd/batches"));
  }

  for (std::size_t epoch = 1; epoch <= cfg.kd_epochs; ++epoch) {
    EpochMeans means;
    for (std::size_t b = 0; b < cfg.batches_per_kd_epoch; ++b) {
      const Tensor x = data ? gather_rows(data->images, sampler->next())
                            : generate_images(*source.generator, cfg.batch_size, gen_rng);
      const Tensor t_logits = teacher.forward(x);
      Trace trace;
      const Tensor s_logits = student.forward_train(x, trace);
      const auto kd = kd_loss_grad(s_logits, t_logits, cfg.kd_temperature);
      require_finite(kd.loss, "distill");
      auto grad = student.zero_grad();
      student.backward(trace, kd.logits, grad);
      opt.step(student, grad);
      means.add("kd", kd.loss.value);
      means.add("kl", kd.loss.components.at("kl"));
    }
    if (teacher.param_digest() != t_digest) throw InvariantError("distill: teacher parameters changed");
    const double acc = accuracy(student, test_set);
    record.metrics.add_row({static_cast<double>(epoch), means.mean("kd"), means.mean("kl"), acc});
    report(progress, "distill epoch " + std::to_string(epoch) + " test_acc " + format_value(acc));
  }

  Model frozen = freeze(std::move(student));
  record.summary["test_acc"] = accuracy(frozen, test_set);
  record.summary["teacher_test_acc"] = accuracy(teacher, test_set);
  record.digests["student"] = frozen.digest_hex();
  record.wall_clock_seconds = seconds_since(start);
  return {std::move(frozen), std::move(record)};
}

// ---- class-incremental ----------------------------------------------------

std::string to_string(IncrementalMode mode) {
  switch (mode) {
    case IncrementalMode::finetune:
      return "finetune";
    case IncrementalMode::lwf_proxy:
      return "lwf_proxy";
    case IncrementalMode::degan:
      return "degan";
  }
  return "unknown";
}

IncrementalMode parse_incremental_mode(const std::string& text) {
  if (text == "finetune") return IncrementalMode::finetune;
  if (text == "lwf_proxy") return IncrementalMode::lwf_proxy;
  if (text == "degan") return IncrementalMode::degan;
  throw ConfigError("unknown incremental mode '" + text + "'");
}

IncrementalResult incremental_update(const Model& old_model, const DatasetSpec& new_data, IncrementalMode mode,
                                     const DatasetSpec& test_set, const ExperimentConfig& cfg,
                                     const Progress& progress) {
  validate(cfg);
  if (!old_model.frozen()) throw ContractError("incremental_update: old model must be frozen");
  validate(new_data);
  if (!new_data.labeled()) throw ArgumentError("incremental_update: new data must be labeled");
  const std::size_t k_old = old_model.arch().num_classes;
  const std::size_t k_total = new_data.num_classes;
  if (k_total <= k_old) throw ArgumentError("incremental_update: new data must widen the class space");
  for (std::size_t l : new_data.labels) {
    if (l < k_old) throw ArgumentError("incremental_update: new data overlaps old class " + std::to_string(l));
  }
  if (test_set.num_classes != k_total) throw ArgumentError("incremental_update: test set must cover all classes");
  const auto start = Clock::now();

  RunRecord record;
  record.pipeline = "incremental_" + to_string(mode);
  record.config = cfg;
  record.metrics.columns = {"epoch", "loss", "ce", "distill", "scale_reg", "acc_all", "acc_old", "acc_new"};
  SeedLedger seeds(cfg.seed, record);
  const std::uint64_t old_digest = old_model.param_digest();
  record.digests["old_model"] = digest_to_hex(old_digest);

  IncrementalResult result{expand_classifier_head(old_model, k_total, seeds.stream("incr/head_init")()), {}, {}};
  Model& model = result.model;
  if (mode == IncrementalMode::degan) {
    ExperimentConfig gan_cfg = cfg;
    gan_cfg.seed = seeds.stream("incr/gan")();
    auto gan = train_degan(old_model, new_data, gan_cfg, std::nullopt, progress);
    result.generator = std::move(gan.generator);
    record.digests["generator"] = result.generator->digest_hex();
    record.summary["gan_final_hist_entropy"] = gan.record.summary.at("final_hist_entropy");
  }

  Adam opt(model.param_count(), {.lr = cfg.student_lr});
  BatchSampler sampler(new_data.size(), cfg.batch_size, seeds.stream("incr/batches"));
  Engine gen_rng = seeds.stream("incr/latent");

  for (std::size_t epoch = 1; epoch <= cfg.incr_epochs; ++epoch) {
    EpochMeans means;
    for (std::size_t b = 0; b < cfg.incr_batches_per_epoch; ++b) {
      const auto idx = sampler.next();
      const Tensor x_new = batch_images(new_data, idx);
      Trace new_trace;
      const Tensor new_logits = model.forward_train(x_new, new_trace);
      const auto labels = batch_labels(new_data, idx);

      Trace distill_trace;
      Tensor frozen_old({0, k_old});
      Tensor student_old({0, k_old});
      if (mode != IncrementalMode::finetune) {
        const Tensor x_d = mode == IncrementalMode::degan ? generate_images(*result.generator, idx.size(), gen_rng) : x_new;
        frozen_old = old_model.forward(x_d);
        student_old = leading_columns(model.forward_train(x_d, distill_trace), k_old);
      }
      IncrementalLossGrad loss;
      if (mode == IncrementalMode::finetune) {
        // Plain fine-tuning: cross-entropy over the whole expanded head.
        auto ce = cross_entropy_grad(new_logits, labels);
        loss.loss = {ce.loss.value, {{"ce", ce.loss.value}, {"distill", 0.0}, {"scale_reg", 0.0}}};
        loss.new_logits = std::move(ce.logits);
      } else {
        const IncrementalInputs in{new_logits, labels, frozen_old, student_old, k_old};
        loss = incremental_loss_grad(in, cfg.incr_temperature, cfg.incr_reg_weight);
      }
      require_finite(loss.loss, "incremental_update");

      auto grad = model.zero_grad();
      model.backward(new_trace, loss.new_logits, grad);
      if (mode != IncrementalMode::finetune) {
        auto g2 = model.zero_grad();
        model.backward(distill_trace, pad_columns(loss.student_old_logits, k_total), g2);
        add_into(grad, g2);
      }
      opt.step(model, grad);
      means.add("loss", loss.loss.value);
      means.add("ce", loss.loss.components.at("ce"));
      means.add("distill", loss.loss.components.at("distill"));
      means.add("scale_reg", loss.loss.components.at("scale_reg"));
    }
    if (old_model.param_digest() != old_digest) throw InvariantError("incremental_update: old model changed");
    const double all = accuracy(model, test_set);
    const double old_acc = accuracy_in_range(model, test_set, 0, k_old);
    const double new_acc = accuracy_in_range(model, test_set, k_old, k_total);
    record.metrics.add_row({static_cast<double>(epoch), means.mean("loss"), means.mean("ce"), means.mean("distill"),
                            means.mean("scale_reg"), all, old_acc, new_acc});
    report(progress, record.pipeline + " epoch " + std::to_string(epoch) + " acc " + format_value(all));
  }

  model = freeze(std::move(model));
  record.summary["acc_all"] = record.metrics.last("acc_all");
  record.summary["acc_old"] = record.metrics.last("acc_old");
  record.summary["acc_new"] = record.metrics.last("acc_new");
  record.digests["model"] = model.digest_hex();
  record.wall_clock_seconds = seconds_since(start);
  result.record = std::move(record);
  return result;
}

}  // namespace degan
