#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "degan/tensor.hpp"

namespace degan {

using Engine = std::mt19937_64;

// One root seed fanning out to independent named child streams. The child
// seed depends only on (root, name), so adding a stream never perturbs another.
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t root_seed) : root_(root_seed) {}

  std::uint64_t root() const { return root_; }
  std::uint64_t child_seed(std::string_view name) const;
  Engine stream(std::string_view name) const { return Engine(child_seed(name)); }
  RngStreams fork(std::string_view name) const { return RngStreams(child_seed(name)); }

 private:
  std::uint64_t root_;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);

// Serialized engine state, restorable with restore_engine.
std::string engine_state(const Engine& engine);
Engine restore_engine(const std::string& state);

struct LatentSpec {
  std::size_t dim = 100;  // coordinates are i.i.d. standard normal
};

struct LatentBatch {
  Tensor values;           // n x dim
  std::string seed_trace;  // engine state before the draw
};

// Draws an n x dim batch of standard-normal latents. Throws ArgumentError for n == 0.
LatentBatch sample_latent(const LatentSpec& spec, std::size_t n, Engine& rng);

// Re-draws the batch recorded by `seed_trace`.
LatentBatch replay_latent(const LatentSpec& spec, std::size_t n, const std::string& seed_trace);

}  // namespace degan
