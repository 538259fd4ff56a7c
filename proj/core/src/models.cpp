#include "degan/models.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "degan/errors.hpp"

namespace degan {

namespace {

using json = nlohmann::json;

struct BaseWidths {
  std::size_t first;
  std::size_t second;
};

BaseWidths base_widths(const ArchSpec& spec) {
  const bool desk = spec.scale == ArchScale::desk;
  switch (spec.family) {
    case ArchFamily::dcgan_generator:
      return desk ? BaseWidths{32, 16} : BaseWidths{256, 128};
    case ArchFamily::dcgan_discriminator:
      return desk ? BaseWidths{16, 32} : BaseWidths{64, 128};
    case ArchFamily::conv_classifier:
      return desk ? BaseWidths{16, 32} : BaseWidths{64, 128};
  }
  return {16, 32};
}

void check_square(const ImageShape& img) {
  if (img.height != img.width) throw ConfigError("only square images are supported");
  if (img.channels == 0) throw ConfigError("image needs at least one channel");
}

std::vector<LayerPtr> generator_layers(const ArchSpec& spec, std::size_t a, std::size_t b) {
  check_square(spec.image);
  if (spec.latent_dim == 0) throw ConfigError("generator needs latent_dim > 0");
  const std::size_t native = native_generator_size(spec.image.height);
  std::vector<LayerPtr> layers;
  layers.push_back(std::make_shared<Reshape>(Shape{1, 1, spec.latent_dim}));
  layers.push_back(std::make_shared<ConvTranspose2d>(spec.latent_dim, a, ConvGeometry{native / 4, 1, 0}));
  layers.push_back(std::make_shared<BatchNorm>(a));
  layers.push_back(std::make_shared<Relu>());
  layers.push_back(std::make_shared<ConvTranspose2d>(a, b, ConvGeometry{4, 2, 1}));
  layers.push_back(std::make_shared<BatchNorm>(b));
  layers.push_back(std::make_shared<Relu>());
  layers.push_back(std::make_shared<ConvTranspose2d>(b, spec.image.channels, ConvGeometry{4, 2, 1}));
  layers.push_back(std::make_shared<Tanh>());
  if (native != spec.image.height) layers.push_back(std::make_shared<CenterCrop>(spec.image.height, spec.image.width));
  return layers;
}

std::vector<LayerPtr> discriminator_layers(const ArchSpec& spec, std::size_t a, std::size_t b) {
  check_square(spec.image);
  const std::size_t h = spec.image.height;
  if (h < 8 || h % 4 != 0) throw ConfigError("discriminator needs a square image with side divisible by 4 and >= 8");
  std::vector<LayerPtr> layers;
  layers.push_back(std::make_shared<Conv2d>(spec.image.channels, a, ConvGeometry{4, 2, 1}, InitScheme::dcgan));
  layers.push_back(std::make_shared<LeakyRelu>(0.2));
  layers.push_back(std::make_shared<Conv2d>(a, b, ConvGeometry{4, 2, 1}, InitScheme::dcgan));
  layers.push_back(std::make_shared<BatchNorm>(b));
  layers.push_back(std::make_shared<LeakyRelu>(0.2));
  layers.push_back(std::make_shared<Conv2d>(b, 1, ConvGeometry{h / 4, 1, 0}, InitScheme::dcgan));
  layers.push_back(std::make_shared<Reshape>(Shape{1}));
  layers.push_back(std::make_shared<Sigmoid>());
  return layers;
}

std::vector<LayerPtr> classifier_layers(const ArchSpec& spec, std::size_t a, std::size_t b) {
  check_square(spec.image);
  if (spec.num_classes < 2) throw ConfigError("classifier needs at least two classes");
  const ConvGeometry geom{3, 2, 1};
  const std::size_t h1 = geom.conv_out(spec.image.height);
  const std::size_t h2 = geom.conv_out(h1);
  std::vector<LayerPtr> layers;
  layers.push_back(std::make_shared<Conv2d>(spec.image.channels, a, geom));
  layers.push_back(std::make_shared<Relu>());
  layers.push_back(std::make_shared<Conv2d>(a, b, geom));
  layers.push_back(std::make_shared<Relu>());
  layers.push_back(std::make_shared<Reshape>(Shape{h2 * h2 * b}));
  layers.push_back(std::make_shared<Dense>(h2 * h2 * b, spec.num_classes));
  return layers;
}

std::vector<LayerPtr> family_layers(const ArchSpec& spec, std::size_t a, std::size_t b) {
  switch (spec.family) {
    case ArchFamily::dcgan_generator:
      return generator_layers(spec, a, b);
    case ArchFamily::dcgan_discriminator:
      return discriminator_layers(spec, a, b);
    case ArchFamily::conv_classifier:
      return classifier_layers(spec, a, b);
  }
  throw ConfigError("unknown family");
}

Shape input_shape_for(const ArchSpec& spec) {
  if (spec.family == ArchFamily::dcgan_generator) return {spec.latent_dim};
  return spec.image.sample_shape();
}

std::size_t count_params(const std::vector<LayerPtr>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += l->param_count();
  return n;
}

// Picks channel widths whose parameter count best matches
// width_multiplier x (count at base widths). Widths keep the base ratio.
std::vector<std::size_t> resolve_widths(const ArchSpec& spec) {
  if (!spec.widths.empty()) {
    if (spec.widths.size() != 2 || spec.widths[0] == 0 || spec.widths[1] == 0) {
      throw ConfigError("arch widths must be two positive channel counts");
    }
    return spec.widths;
  }
  if (!(spec.width_multiplier > 0.0)) throw ConfigError("width_multiplier must be > 0");
  const BaseWidths base = base_widths(spec);
  if (spec.width_multiplier == 1.0) return {base.first, base.second};

  const double target = spec.width_multiplier * static_cast<double>(count_params(family_layers(spec, base.first, base.second)));
  const auto limit = static_cast<std::size_t>(std::ceil(static_cast<double>(base.second) * 2.0 *
                                                        std::max(1.0, std::sqrt(spec.width_multiplier))));
  std::vector<std::size_t> best{base.first, base.second};
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t b = 1; b <= limit; ++b) {
    const auto a = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(static_cast<double>(base.first * b) / static_cast<double>(base.second))));
    const double count = static_cast<double>(count_params(family_layers(spec, a, b)));
    const double err = std::abs(count - target);
    if (err < best_err) {
      best_err = err;
      best = {a, b};
    }
  }
  return best;
}

Model build_family(const ArchSpec& spec, ArchFamily expected, std::uint64_t init_seed) {
  if (spec.family != expected) {
    throw ConfigError("expected a " + to_string(expected) + " spec, got " + to_string(spec.family));
  }
  ArchSpec resolved = spec;
  resolved.widths = resolve_widths(spec);
  auto layers = family_layers(resolved, resolved.widths[0], resolved.widths[1]);
  Model model(resolved, input_shape_for(resolved), std::move(layers), init_seed);
  switch (expected) {
    case ArchFamily::dcgan_generator:
      model.metadata().input_range = {-INFINITY, INFINITY};
      model.metadata().native_size = native_generator_size(resolved.image.height);
      model.metadata().output_adapter = RangeAdapter::to_range(kClassifierInputRange);
      break;
    case ArchFamily::dcgan_discriminator:
      model.metadata().input_range = kGanRange;
      break;
    case ArchFamily::conv_classifier:
      model.metadata().input_range = kClassifierInputRange;
      break;
  }
  return model;
}

json arch_to_json(const ArchSpec& a) {
  return {{"family", to_string(a.family)},
          {"scale", to_string(a.scale)},
          {"width_multiplier", a.width_multiplier},
          {"image", {a.image.height, a.image.width, a.image.channels}},
          {"num_classes", a.num_classes},
          {"latent_dim", a.latent_dim},
          {"widths", a.widths}};
}

ArchSpec arch_from_json(const json& j) {
  ArchSpec a;
  a.family = parse_family(j.at("family").get<std::string>());
  a.scale = parse_scale(j.at("scale").get<std::string>());
  a.width_multiplier = j.at("width_multiplier").get<double>();
  const auto img = j.at("image").get<std::vector<std::size_t>>();
  if (img.size() != 3) throw ConfigError("arch image must be [H, W, C]");
  a.image = {img[0], img[1], img[2]};
  a.num_classes = j.at("num_classes").get<std::size_t>();
  a.latent_dim = j.at("latent_dim").get<std::size_t>();
  a.widths = j.at("widths").get<std::vector<std::size_t>>();
  return a;
}

void write_blob(const std::filesystem::path& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

std::vector<double> read_blob(const std::filesystem::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::vector<double> values(expected);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(expected * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(expected * sizeof(double)) || in.peek() != EOF) {
    throw ConfigError("blob " + path.string() + " does not match the architecture");
  }
  return values;
}

}  // namespace

std::size_t native_generator_size(std::size_t size) {
  for (std::size_t native : {8, 16, 32, 64}) {
    if (native >= size && (native - size) % 2 == 0) return native;
  }
  throw ConfigError("generator cannot produce " + std::to_string(size) + "x" + std::to_string(size) + " images");
}

Model build_generator(const ArchSpec& spec, std::uint64_t init_seed) {
  return build_family(spec, ArchFamily::dcgan_generator, init_seed);
}

Model build_discriminator(const ArchSpec& spec, std::uint64_t init_seed) {
  return build_family(spec, ArchFamily::dcgan_discriminator, init_seed);
}

Model build_classifier(const ArchSpec& spec, std::uint64_t init_seed) {
  return build_family(spec, ArchFamily::conv_classifier, init_seed);
}

Model build_model(const ArchSpec& spec, std::uint64_t init_seed) { return build_family(spec, spec.family, init_seed); }

std::size_t arch_param_count(const ArchSpec& spec) {
  const auto w = resolve_widths(spec);
  return count_params(family_layers(spec, w[0], w[1]));
}

ClassDistribution classify(const Model& classifier, const Tensor& images) {
  return softmax(classifier.forward(images));
}

Model expand_classifier_head(const Model& classifier, std::size_t total_classes, std::uint64_t seed) {
  const ArchSpec& old_spec = classifier.arch();
  if (old_spec.family != ArchFamily::conv_classifier) throw ArgumentError("expand_classifier_head: not a classifier");
  const std::size_t k_old = old_spec.num_classes;
  if (total_classes <= k_old) throw ArgumentError("expand_classifier_head: total classes must exceed old classes");

  ArchSpec spec = old_spec;
  spec.num_classes = total_classes;
  Model expanded = build_classifier(spec, seed);

  const auto& head = dynamic_cast<const Dense&>(*classifier.layers().back());
  const std::size_t in = head.in_features();
  const std::size_t body = classifier.param_count() - (in * k_old + k_old);

  auto dst = expanded.mutable_parameters();
  auto src = classifier.parameters();
  std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(body), dst.begin());
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t j = 0; j < k_old; ++j) dst[body + i * total_classes + j] = src[body + i * k_old + j];
  }
  for (std::size_t j = 0; j < k_old; ++j) dst[body + in * total_classes + j] = src[body + in * k_old + j];
  expanded.metadata() = classifier.metadata();
  return expanded;
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_blob(dir / "params.bin", model.parameters());
  write_blob(dir / "state.bin", model.state());
  json arch = arch_to_json(model.arch());
  arch["mode"] = model.frozen() ? "frozen" : "trainable";
  std::ofstream(dir / "arch.json") << arch.dump(2) << '\n';
  const auto& m = model.metadata();
  json adapter = {{"input_range", {m.input_range.lo, m.input_range.hi}},
                  {"output_adapter", {{"scale", m.output_adapter.scale}, {"shift", m.output_adapter.shift}}},
                  {"native_size", m.native_size}};
  std::ofstream(dir / "range_adapter.json") << adapter.dump(2) << '\n';
  std::ofstream(dir / "param_digest") << model.digest_hex() << '\n';
}

Model load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream arch_in(dir / "arch.json");
  if (!arch_in) throw ConfigError("no checkpoint at " + dir.string());
  const json arch = json::parse(arch_in);
  Model model = build_model(arch_from_json(arch), 0);
  const auto params = read_blob(dir / "params.bin", model.param_count());
  const auto state = read_blob(dir / "state.bin", model.state().size());
  model.load(params, state);

  std::ifstream adapter_in(dir / "range_adapter.json");
  if (adapter_in) {
    const json adapter = json::parse(adapter_in);
    auto& m = model.metadata();
    // JSON has no infinity; non-numeric bounds come back as null.
    const auto& range = adapter.at("input_range");
    m.input_range.lo = range.at(0).is_number() ? range.at(0).get<double>() : -INFINITY;
    m.input_range.hi = range.at(1).is_number() ? range.at(1).get<double>() : INFINITY;
    m.output_adapter.scale = adapter.at("output_adapter").at("scale").get<double>();
    m.output_adapter.shift = adapter.at("output_adapter").at("shift").get<double>();
    m.native_size = adapter.at("native_size").get<std::size_t>();
  }

  std::ifstream digest_in(dir / "param_digest");
  std::string digest;
  digest_in >> digest;
  if (digest != model.digest_hex()) {
    throw InvariantError("checkpoint " + dir.string() + " digest mismatch: recorded " + digest + ", loaded " +
                         model.digest_hex());
  }
  if (arch.value("mode", "trainable") == "frozen") model = freeze(std::move(model));
  return model;
}

}  // namespace degan
