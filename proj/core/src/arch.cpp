#include "degan/arch.hpp"

#include "degan/errors.hpp"

namespace degan {

std::string to_string(ArchFamily family) {
  switch (family) {
    case ArchFamily::dcgan_generator:
      return "dcgan_generator";
    case ArchFamily::dcgan_discriminator:
      return "dcgan_discriminator";
    case ArchFamily::conv_classifier:
      return "conv_classifier";
  }
  return "unknown";
}

std::string to_string(ArchScale scale) { return scale == ArchScale::desk ? "desk" : "full"; }

ArchFamily parse_family(const std::string& text) {
  if (text == "dcgan_generator") return ArchFamily::dcgan_generator;
  if (text == "dcgan_discriminator") return ArchFamily::dcgan_discriminator;
  if (text == "conv_classifier") return ArchFamily::conv_classifier;
  throw ConfigError("unknown architecture family '" + text + "'");
}

ArchScale parse_scale(const std::string& text) {
  if (text == "desk") return ArchScale::desk;
  if (text == "full") return ArchScale::full;
  throw ConfigError("unknown architecture scale '" + text + "'");
}

RangeAdapter RangeAdapter::to_range(const ValueRange& target) {
  if (!(target.hi > target.lo)) throw ConfigError("value range must have hi > lo");
  const double scale = (target.hi - target.lo) / 2.0;
  return {scale, target.lo + scale};
}

Tensor RangeAdapter::apply(const Tensor& batch) const {
  Tensor out = batch;
  for (double& v : out.data) v = apply(v);
  return out;
}

Tensor RangeAdapter::invert(const Tensor& batch) const {
  Tensor out = batch;
  for (double& v : out.data) v = invert(v);
  return out;
}

Tensor range_adapter(const Tensor& generated, const ValueRange& target) {
  return RangeAdapter::to_range(target).apply(generated);
}

}  // namespace degan
