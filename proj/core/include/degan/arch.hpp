#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "degan/tensor.hpp"

namespace degan {

enum class ArchFamily { dcgan_generator, dcgan_discriminator, conv_classifier };
enum class ArchScale { desk, full };

std::string to_string(ArchFamily family);
std::string to_string(ArchScale scale);
ArchFamily parse_family(const std::string& text);
ArchScale parse_scale(const std::string& text);

struct ImageShape {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;

  Shape sample_shape() const { return {height, width, channels}; }
  std::size_t size() const { return height * width * channels; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

// Architecture record. width_multiplier is a capacity multiplier: the built
// model's parameter count is as close as the channel grid allows to
// width_multiplier times the multiplier-1.0 model.
struct ArchSpec {
  ArchFamily family = ArchFamily::conv_classifier;
  double width_multiplier = 1.0;
  ImageShape image;
  std::size_t num_classes = 0;  // classifiers only
  std::size_t latent_dim = 0;   // generators only
  ArchScale scale = ArchScale::desk;
  // Resolved channel widths. Empty means "derive from width_multiplier";
  // built models always carry the resolved values.
  std::vector<std::size_t> widths;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

// Closed interval of pixel values a model consumes or produces.
struct ValueRange {
  double lo = -1.0;
  double hi = 1.0;
  friend bool operator==(const ValueRange&, const ValueRange&) = default;
};

// Affine map from the generator's [-1, 1] output range to a target range.
struct RangeAdapter {
  double scale = 1.0;
  double shift = 0.0;

  static RangeAdapter to_range(const ValueRange& target);

  double apply(double x) const { return scale * x + shift; }
  double invert(double y) const { return (y - shift) / scale; }
  Tensor apply(const Tensor& batch) const;
  Tensor invert(const Tensor& batch) const;

  friend bool operator==(const RangeAdapter&, const RangeAdapter&) = default;
};

// Maps a batch in [-1, 1] to the classifier's declared input range.
Tensor range_adapter(const Tensor& generated, const ValueRange& target);

}  // namespace degan
