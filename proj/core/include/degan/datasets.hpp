#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "degan/arch.hpp"
#include "degan/rng.hpp"
#include "degan/tensor.hpp"

namespace degan {

// Image collection with pixel values in [0, 1]. Either every sample carries a
// label in [0, num_classes) or none does (num_classes == 0).
struct DatasetSpec {
  std::string name;
  ImageShape image;
  std::size_t num_classes = 0;
  Tensor images;                        // N x H x W x C
  std::vector<std::size_t> labels;      // empty for unlabeled data
  std::vector<std::string> class_names; // optional, num_classes entries when present

  std::size_t size() const { return images.batch(); }
  bool labeled() const { return !labels.empty(); }
  std::vector<std::size_t> class_counts() const;
};

// Throws ArgumentError if any invariant is violated.
void validate(const DatasetSpec& ds);

// Keeps samples whose label is in `keep`, re-indexing labels densely in
// ascending class-id order. Pixel data is copied bit-exactly.
DatasetSpec subset_classes(const DatasetSpec& source, const std::set<std::size_t>& keep);

// ITU-R 601 luma: 0.299 R + 0.587 G + 0.114 B. Requires three channels.
DatasetSpec to_grayscale(const DatasetSpec& ds);

// Unlabeled dataset of i.i.d. uniform [0, 1] pixels.
DatasetSpec make_noise_proxy(std::size_t count, const ImageShape& image, std::uint64_t seed);

enum class SyntheticStyle {
  true_style,       // oriented sinusoidal gratings, orientation k*pi/K
  related_style,    // same grating statistics, orientations offset by half a class step
  unrelated_style,  // sparse bright blobs on a dark field at class-specific ring positions
};

std::string to_string(SyntheticStyle style);
SyntheticStyle parse_style(const std::string& text);

// Procedural labeled dataset with per_class samples of each of K classes,
// interleaved by class. Throws ArgumentError for K < 2.
DatasetSpec make_synthetic(std::size_t num_classes, std::size_t per_class, const ImageShape& image,
                           SyntheticStyle style, std::uint64_t seed);

// Stratified split: per class, round(fraction * count) samples go to the first
// set. Unlabeled data is split as one class. Throws for fraction outside (0,1)
// or a class with fewer than two samples.
std::pair<DatasetSpec, DatasetSpec> split_train_val(const DatasetSpec& ds, double fraction, std::uint64_t seed);

// Adds `offset` to every label and widens num_classes to `total_classes`.
DatasetSpec offset_labels(const DatasetSpec& ds, std::size_t offset, std::size_t total_classes);

// Concatenates labeled datasets over the same class space.
DatasetSpec concat(const DatasetSpec& a, const DatasetSpec& b);

// Dataset images mapped from [0, 1] to the GAN's [-1, 1] range.
Tensor to_gan_range(const Tensor& images);

// Recipe describing how a proxy dataset is derived.
struct ProxyRecipe {
  std::optional<DatasetSpec> source;
  std::optional<std::set<std::size_t>> class_filter;
  bool grayscale = false;
  struct Noise {
    std::size_t count = 0;
    ImageShape image;
  };
  std::optional<Noise> noise;
  std::uint64_t seed = 0;
};

DatasetSpec build_proxy(const ProxyRecipe& recipe);

// Draws `classes_per_sample` class ids out of `pool` for proxy sample `sample_id`;
// the draw is a pure function of (pool, classes_per_sample, seed, sample_id).
std::set<std::size_t> random_class_recipe(const std::set<std::size_t>& pool, std::size_t classes_per_sample,
                                          std::uint64_t seed, std::size_t sample_id);

// Shuffled mini-batch index order, reshuffled each epoch from one engine.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, Engine engine);
  // Indices of the next batch; wraps into a freshly shuffled epoch when exhausted.
  std::vector<std::size_t> next();
  std::size_t batches_per_epoch() const;
  std::vector<std::vector<std::size_t>> epoch();

 private:
  void reshuffle();
  std::size_t size_;
  std::size_t batch_;
  Engine engine_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Content checksum over pixels, labels and shape.
std::uint64_t dataset_checksum(const DatasetSpec& ds);

// On-disk dataset cache: <root>/<name>/{images.bin, labels.bin, manifest.json}.
// The manifest records name, shape, class map and checksum.
class DatasetCache {
 public:
  explicit DatasetCache(std::filesystem::path root) : root_(std::move(root)) {}
  // Root from $DEGAN_DATA_ROOT, else ./.degan_cache.
  static DatasetCache from_env();

  const std::filesystem::path& root() const { return root_; }
  bool contains(const std::string& name) const;
  void store(const DatasetSpec& ds) const;
  DatasetSpec load(const std::string& name) const;  // verifies the checksum

 private:
  std::filesystem::path root_;
};

// Readers for the public benchmark formats, from files already present on disk.
// CIFAR binary batches: one label byte (two for CIFAR-100: coarse, fine) + 3072 CHW bytes.
DatasetSpec read_cifar_binary(const std::vector<std::filesystem::path>& files, bool cifar100, const std::string& name);
// IDX (MNIST / Fashion-MNIST) image and label files.
DatasetSpec read_idx(const std::filesystem::path& images, const std::filesystem::path& labels, const std::string& name);

}  // namespace degan
