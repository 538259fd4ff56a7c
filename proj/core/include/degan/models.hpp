#pragma once

#include <cstdint>
#include <filesystem>

#include "degan/arch.hpp"
#include "degan/distribution.hpp"
#include "degan/model.hpp"

namespace degan {

// Classifiers consume images in the datasets' native [0, 1] range; the
// generator and discriminator work in [-1, 1].
inline constexpr ValueRange kClassifierInputRange{0.0, 1.0};
inline constexpr ValueRange kGanRange{-1.0, 1.0};

// Spatial size the generator's upsampling stack produces for a target size:
// the smallest of 8/16/32/64 that is >= size and leaves an even crop margin.
// Throws ConfigError when no such size exists.
std::size_t native_generator_size(std::size_t size);

// latent -> image in [-1, 1]: three transposed-conv blocks (BN + ReLU between),
// tanh output, centre crop when the target is not a native size.
Model build_generator(const ArchSpec& spec, std::uint64_t init_seed);

// image -> probability in (0, 1): strided convs with leaky ReLU, BN on the
// inner block, sigmoid output.
Model build_discriminator(const ArchSpec& spec, std::uint64_t init_seed);

// image in [0, 1] -> K logits: two strided convs with ReLU and one dense layer.
Model build_classifier(const ArchSpec& spec, std::uint64_t init_seed);

Model build_model(const ArchSpec& spec, std::uint64_t init_seed);

// Parameter count of the model `spec` would build, without allocating it.
std::size_t arch_param_count(const ArchSpec& spec);

// Softmax adapter over classifier logits.
ClassDistribution classify(const Model& classifier, const Tensor& images);

// Copy of a classifier with its output layer widened to total_classes. Old
// class weights are copied; new columns are freshly initialized from seed.
Model expand_classifier_head(const Model& classifier, std::size_t total_classes, std::uint64_t seed);

// Checkpoint directory: params.bin, state.bin, arch.json, range_adapter.json, param_digest.
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace degan
