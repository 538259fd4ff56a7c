#include "degan/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>

#include "degan/errors.hpp"

namespace degan {

namespace {

using json = nlohmann::json;

DatasetSpec empty_like(const DatasetSpec& ds, std::size_t count) {
  DatasetSpec out;
  out.name = ds.name;
  out.image = ds.image;
  out.num_classes = ds.num_classes;
  out.class_names = ds.class_names;
  Shape s = ds.images.shape;
  s[0] = count;
  out.images = Tensor(s);
  return out;
}

DatasetSpec select(const DatasetSpec& ds, const std::vector<std::size_t>& indices, const std::string& name) {
  DatasetSpec out = empty_like(ds, indices.size());
  out.name = name;
  out.images = gather_rows(ds.images, indices);
  if (ds.labeled()) {
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(ds.labels[i]);
  }
  return out;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Fills one HWC image with a grating at `theta` (radians).
void draw_grating(std::span<double> img, const ImageShape& shape, double theta, Engine& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  const double cycles = 3.0;
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  const double contrast = 0.25 + 0.2 * unit(rng);
  const double mean = 0.4 + 0.2 * unit(rng);
  std::vector<double> tint(shape.channels, 1.0);
  if (shape.channels > 1) {
    for (double& t : tint) t = 0.7 + 0.3 * unit(rng);
  }
  const double cx = (static_cast<double>(shape.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(shape.height) - 1.0) / 2.0;
  const double omega = 2.0 * std::numbers::pi * cycles / static_cast<double>(shape.width);
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  for (std::size_t y = 0; y < shape.height; ++y) {
    for (std::size_t x = 0; x < shape.width; ++x) {
      const double u = static_cast<double>(x) - cx;
      const double v = static_cast<double>(y) - cy;
      const double base = mean + contrast * std::sin(omega * (u * c + v * s) + phase);
      for (std::size_t ch = 0; ch < shape.channels; ++ch) {
        img[(y * shape.width + x) * shape.channels + ch] = clamp01(base * tint[ch] + noise(rng));
      }
    }
  }
}

// Bright Gaussian blob on a dark field, centred on a ring at `angle`.
void draw_blob(std::span<double> img, const ImageShape& shape, double angle, Engine& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.02);
  const double h = static_cast<double>(shape.height);
  const double radius = (0.25 + 0.1 * unit(rng)) * h;
  const double sigma = 0.08 * h;
  const double amp = 0.7 + 0.3 * unit(rng);
  const double bx = (h - 1.0) / 2.0 + radius * std::cos(angle);
  const double by = (h - 1.0) / 2.0 + radius * std::sin(angle);
  for (std::size_t y = 0; y < shape.height; ++y) {
    for (std::size_t x = 0; x < shape.width; ++x) {
      const double dx = static_cast<double>(x) - bx;
      const double dy = static_cast<double>(y) - by;
      const double blob = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      for (std::size_t ch = 0; ch < shape.channels; ++ch) {
        img[(y * shape.width + x) * shape.channels + ch] = clamp01(0.05 + blob + noise(rng));
      }
    }
  }
}

std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ConfigError("truncated IDX header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

}  // namespace

std::vector<std::size_t> DatasetSpec::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t l : labels) ++counts.at(l);
  return counts;
}

void validate(const DatasetSpec& ds) {
  if (ds.size() == 0) throw ArgumentError("dataset '" + ds.name + "' is empty");
  if (ds.images.sample_shape() != ds.image.sample_shape()) {
    throw ArgumentError("dataset '" + ds.name + "' images do not match declared shape");
  }
  if (ds.labeled()) {
    if (ds.labels.size() != ds.size()) throw ArgumentError("dataset '" + ds.name + "' label count mismatch");
    for (std::size_t l : ds.labels) {
      if (l >= ds.num_classes) throw ArgumentError("dataset '" + ds.name + "' label out of range");
    }
  } else if (ds.num_classes != 0) {
    throw ArgumentError("dataset '" + ds.name + "' declares classes but has no labels");
  }
  if (!ds.class_names.empty() && ds.class_names.size() != ds.num_classes) {
    throw ArgumentError("dataset '" + ds.name + "' class map size mismatch");
  }
}

DatasetSpec subset_classes(const DatasetSpec& source, const std::set<std::size_t>& keep) {
  if (keep.empty()) throw ArgumentError("subset_classes: keep set is empty");
  if (!source.labeled()) throw ArgumentError("subset_classes: source is unlabeled");
  std::map<std::size_t, std::size_t> remap;
  for (std::size_t id : keep) {
    if (id >= source.num_classes) throw ArgumentError("subset_classes: class id " + std::to_string(id) + " not in source");
    remap.emplace(id, remap.size());
  }
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (keep.count(source.labels[i])) indices.push_back(i);
  }
  DatasetSpec out = select(source, indices, source.name + "/subset" + std::to_string(keep.size()));
  out.num_classes = keep.size();
  for (auto& l : out.labels) l = remap.at(l);
  if (!source.class_names.empty()) {
    out.class_names.clear();
    for (std::size_t id : keep) out.class_names.push_back(source.class_names[id]);
  }
  return out;
}

DatasetSpec to_grayscale(const DatasetSpec& ds) {
  if (ds.image.channels != 3) throw ArgumentError("to_grayscale: expected three channels");
  DatasetSpec out = ds;
  out.name = ds.name + "/gray";
  out.image.channels = 1;
  const std::size_t pixels = ds.size() * ds.image.height * ds.image.width;
  out.images = Tensor({ds.size(), ds.image.height, ds.image.width, 1});
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* rgb = ds.images.data.data() + 3 * p;
    out.images[p] = rgb[1] + 0.299 * (rgb[0] - rgb[1]) + 0.114 * (rgb[2] - rgb[1]);
  }
  return out;
}

DatasetSpec make_noise_proxy(std::size_t count, const ImageShape& image, std::uint64_t seed) {
  if (count == 0) throw ArgumentError("make_noise_proxy: count must be positive");
  DatasetSpec out;
  out.name = "noise";
  out.image = image;
  out.images = Tensor({count, image.height, image.width, image.channels});
  Engine rng = RngStreams(seed).stream("noise_proxy");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double& v : out.images.data) v = unit(rng);
  return out;
}

std::string to_string(SyntheticStyle style) {
  switch (style) {
    case SyntheticStyle::true_style:
      return "true_style";
    case SyntheticStyle::related_style:
      return "related_style";
    case SyntheticStyle::unrelated_style:
      return "unrelated_style";
  }
  return "unknown";
}

SyntheticStyle parse_style(const std::string& text) {
  if (text == "true_style") return SyntheticStyle::true_style;
  if (text == "related_style") return SyntheticStyle::related_style;
  if (text == "unrelated_style") return SyntheticStyle::unrelated_style;
  throw ConfigError("unknown synthetic style '" + text + "'");
}

DatasetSpec make_synthetic(std::size_t num_classes, std::size_t per_class, const ImageShape& image,
                           SyntheticStyle style, std::uint64_t seed) {
  if (num_classes < 2) throw ArgumentError("make_synthetic: need at least two classes");
  if (per_class == 0) throw ArgumentError("make_synthetic: per_class must be positive");
  const std::size_t n = num_classes * per_class;
  DatasetSpec out;
  out.name = to_string(style);
  out.image = image;
  out.num_classes = num_classes;
  out.images = Tensor({n, image.height, image.width, image.channels});
  out.labels.resize(n);

  Engine rng = RngStreams(seed).stream("synthetic/" + to_string(style));
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double k = static_cast<double>(num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % num_classes;
    const double c = static_cast<double>(label);
    out.labels[i] = label;
    auto img = out.images.sample(i);
    switch (style) {
      case SyntheticStyle::true_style:
        draw_grating(img, image, std::numbers::pi * (c + 0.1 * jitter(rng)) / k, rng);
        break;
      case SyntheticStyle::related_style:
        draw_grating(img, image, std::numbers::pi * (c + 0.5 + 0.1 * jitter(rng)) / k, rng);
        break;
      case SyntheticStyle::unrelated_style:
        draw_blob(img, image, 2.0 * std::numbers::pi * (c + 0.1 * jitter(rng)) / k, rng);
        break;
    }
  }
  return out;
}

std::pair<DatasetSpec, DatasetSpec> split_train_val(const DatasetSpec& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ArgumentError("split_train_val: fraction must lie in (0,1)");
  const std::size_t groups = ds.labeled() ? ds.num_classes : 1;
  std::vector<std::vector<std::size_t>> by_class(groups);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labeled() ? ds.labels[i] : 0].push_back(i);

  Engine rng = RngStreams(seed).stream("split");
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  for (std::size_t c = 0; c < groups; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < 2) throw ArgumentError("split_train_val: class " + std::to_string(c) + " has fewer than two samples");
    std::shuffle(idx.begin(), idx.end(), rng);
    auto take = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
    take = std::clamp<std::size_t>(take, 1, idx.size() - 1);
    first.insert(first.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    second.insert(second.end(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {select(ds, first, ds.name + "/train"), select(ds, second, ds.name + "/val")};
}

DatasetSpec offset_labels(const DatasetSpec& ds, std::size_t offset, std::size_t total_classes) {
  if (!ds.labeled()) throw ArgumentError("offset_labels: dataset is unlabeled");
  if (ds.num_classes + offset > total_classes) throw ArgumentError("offset_labels: labels exceed total classes");
  DatasetSpec out = ds;
  for (auto& l : out.labels) l += offset;
  out.num_classes = total_classes;
  out.class_names.clear();
  return out;
}

DatasetSpec concat(const DatasetSpec& a, const DatasetSpec& b) {
  if (!(a.image == b.image) || a.num_classes != b.num_classes || a.labeled() != b.labeled()) {
    throw ArgumentError("concat: datasets are not compatible");
  }
  DatasetSpec out = empty_like(a, a.size() + b.size());
  out.name = a.name + "+" + b.name;
  std::copy(a.images.data.begin(), a.images.data.end(), out.images.data.begin());
  std::copy(b.images.data.begin(), b.images.data.end(),
            out.images.data.begin() + static_cast<std::ptrdiff_t>(a.images.size()));
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

Tensor to_gan_range(const Tensor& images) {
  Tensor out = images;
  for (double& v : out.data) v = 2.0 * v - 1.0;
  return out;
}

DatasetSpec build_proxy(const ProxyRecipe& recipe) {
  if (recipe.noise && recipe.source) throw ArgumentError("proxy recipe: noise and source are mutually exclusive");
  if (recipe.noise) {
    if (recipe.class_filter) throw ArgumentError("proxy recipe: class filter needs a labeled source");
    DatasetSpec ds = make_noise_proxy(recipe.noise->count, recipe.noise->image, recipe.seed);
    return recipe.grayscale ? to_grayscale(ds) : ds;
  }
  if (!recipe.source) throw ArgumentError("proxy recipe: needs a source or a noise description");
  DatasetSpec ds = *recipe.source;
  if (recipe.class_filter) ds = subset_classes(ds, *recipe.class_filter);
  if (recipe.grayscale) ds = to_grayscale(ds);
  return ds;
}

std::set<std::size_t> random_class_recipe(const std::set<std::size_t>& pool, std::size_t classes_per_sample,
                                          std::uint64_t seed, std::size_t sample_id) {
  if (classes_per_sample == 0 || classes_per_sample > pool.size()) {
    throw ArgumentError("random_class_recipe: cannot draw " + std::to_string(classes_per_sample) + " of " +
                        std::to_string(pool.size()) + " classes");
  }
  std::vector<std::size_t> ids(pool.begin(), pool.end());
  Engine rng = RngStreams(seed).stream("class_recipe/" + std::to_string(sample_id));
  std::shuffle(ids.begin(), ids.end(), rng);
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(classes_per_sample)};
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, Engine engine)
    : size_(dataset_size), batch_(std::min(batch_size, dataset_size)), engine_(std::move(engine)) {
  if (size_ == 0 || batch_size == 0) throw ArgumentError("BatchSampler: empty dataset or batch");
  order_.resize(size_);
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), engine_);
  cursor_ = 0;
}

std::size_t BatchSampler::batches_per_epoch() const { return (size_ + batch_ - 1) / batch_; }

std::vector<std::size_t> BatchSampler::next() {
  if (cursor_ >= size_) reshuffle();
  const std::size_t end = std::min(size_, cursor_ + batch_);
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return out;
}

std::vector<std::vector<std::size_t>> BatchSampler::epoch() {
  reshuffle();
  std::vector<std::vector<std::size_t>> out;
  while (cursor_ < size_) {
    // A trailing batch of one sample cannot feed batch statistics; fold it into the previous batch.
    if (size_ - cursor_ == 1 && !out.empty()) {
      out.back().push_back(order_[cursor_++]);
      break;
    }
    out.push_back(next());
  }
  return out;
}

std::uint64_t dataset_checksum(const DatasetSpec& ds) {
  std::uint64_t h = fnv1a64(shape_to_string(ds.images.shape));
  h = fnv1a64(std::string_view(reinterpret_cast<const char*>(ds.images.data.data()),
                               ds.images.data.size() * sizeof(double)),
              h);
  h = fnv1a64(std::string_view(reinterpret_cast<const char*>(ds.labels.data()),
                               ds.labels.size() * sizeof(std::size_t)),
              h);
  return h;
}

DatasetCache DatasetCache::from_env() {
  const char* root = std::getenv("DEGAN_DATA_ROOT");
  return DatasetCache(root && *root ? std::filesystem::path(root) : std::filesystem::path(".degan_cache"));
}

bool DatasetCache::contains(const std::string& name) const {
  return std::filesystem::exists(root_ / name / "manifest.json");
}

void DatasetCache::store(const DatasetSpec& ds) const {
  validate(ds);
  const auto dir = root_ / ds.name;
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "images.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(ds.images.data.data()),
              static_cast<std::streamsize>(ds.images.data.size() * sizeof(double)));
  }
  {
    std::ofstream out(dir / "labels.bin", std::ios::binary);
    std::vector<std::uint32_t> labels(ds.labels.begin(), ds.labels.end());
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size() * sizeof(std::uint32_t)));
  }
  json manifest = {{"name", ds.name},
                   {"count", ds.size()},
                   {"shape", {ds.image.height, ds.image.width, ds.image.channels}},
                   {"num_classes", ds.num_classes},
                   {"class_map", ds.class_names},
                   {"checksum", std::to_string(dataset_checksum(ds))}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

DatasetSpec DatasetCache::load(const std::string& name) const {
  const auto dir = root_ / name;
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw ConfigError("dataset '" + name + "' not found in cache " + root_.string());
  const json manifest = json::parse(mf);
  DatasetSpec ds;
  ds.name = manifest.at("name").get<std::string>();
  const auto shape = manifest.at("shape").get<std::vector<std::size_t>>();
  ds.image = {shape.at(0), shape.at(1), shape.at(2)};
  ds.num_classes = manifest.at("num_classes").get<std::size_t>();
  ds.class_names = manifest.at("class_map").get<std::vector<std::string>>();
  const auto count = manifest.at("count").get<std::size_t>();
  ds.images = Tensor({count, ds.image.height, ds.image.width, ds.image.channels});
  std::ifstream img(dir / "images.bin", std::ios::binary);
  img.read(reinterpret_cast<char*>(ds.images.data.data()),
           static_cast<std::streamsize>(ds.images.data.size() * sizeof(double)));
  if (!img) throw ConfigError("dataset '" + name + "' image blob truncated");
  if (ds.num_classes > 0) {
    std::vector<std::uint32_t> labels(count);
    std::ifstream lb(dir / "labels.bin", std::ios::binary);
    lb.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(count * sizeof(std::uint32_t)));
    if (!lb) throw ConfigError("dataset '" + name + "' label blob truncated");
    ds.labels.assign(labels.begin(), labels.end());
  }
  if (std::to_string(dataset_checksum(ds)) != manifest.at("checksum").get<std::string>()) {
    throw InvariantError("dataset '" + name + "' checksum mismatch");
  }
  return ds;
}

DatasetSpec read_cifar_binary(const std::vector<std::filesystem::path>& files, bool cifar100,
                              const std::string& name) {
  constexpr std::size_t kSide = 32;
  constexpr std::size_t kPixels = kSide * kSide;
  const std::size_t label_bytes = cifar100 ? 2 : 1;
  const std::size_t record = label_bytes + 3 * kPixels;
  std::vector<unsigned char> bytes;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw ConfigError("cannot read CIFAR file " + f.string());
    bytes.insert(bytes.end(), std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  if (bytes.empty() || bytes.size() % record != 0) throw ConfigError("CIFAR data has an unexpected size");
  const std::size_t n = bytes.size() / record;
  DatasetSpec ds;
  ds.name = name;
  ds.image = {kSide, kSide, 3};
  ds.num_classes = cifar100 ? 100 : 10;
  ds.images = Tensor({n, kSide, kSide, 3});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * record;
    ds.labels[i] = rec[label_bytes - 1];
    for (std::size_t p = 0; p < kPixels; ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        ds.images[(i * kPixels + p) * 3 + c] = rec[label_bytes + c * kPixels + p] / 255.0;
      }
    }
  }
  validate(ds);
  return ds;
}

DatasetSpec read_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                     const std::string& name) {
  std::ifstream img(images, std::ios::binary);
  std::ifstream lab(labels, std::ios::binary);
  if (!img || !lab) throw ConfigError("cannot read IDX files " + images.string() + ", " + labels.string());
  if (read_be32(img) != 0x803 || read_be32(lab) != 0x801) throw ConfigError("bad IDX magic number");
  const std::size_t n = read_be32(img);
  const std::size_t h = read_be32(img);
  const std::size_t w = read_be32(img);
  if (read_be32(lab) != n) throw ConfigError("IDX image and label counts differ");
  std::vector<unsigned char> pix(n * h * w);
  std::vector<unsigned char> lb(n);
  img.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
  lab.read(reinterpret_cast<char*>(lb.data()), static_cast<std::streamsize>(lb.size()));
  if (!img || !lab) throw ConfigError("truncated IDX payload");
  DatasetSpec ds;
  ds.name = name;
  ds.image = {h, w, 1};
  ds.num_classes = static_cast<std::size_t>(*std::max_element(lb.begin(), lb.end())) + 1;
  ds.images = Tensor({n, h, w, 1});
  for (std::size_t i = 0; i < pix.size(); ++i) ds.images[i] = pix[i] / 255.0;
  ds.labels.assign(lb.begin(), lb.end());
  validate(ds);
  return ds;
}

}  // namespace degan
