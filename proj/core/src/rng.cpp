#include "degan/rng.hpp"

#include <sstream>

#include "degan/errors.hpp"

namespace degan {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t RngStreams::child_seed(std::string_view name) const {
  return splitmix64(root_ ^ fnv1a64(name));
}

std::string engine_state(const Engine& engine) {
  std::ostringstream os;
  os << engine;
  return os.str();
}

Engine restore_engine(const std::string& state) {
  Engine e;
  std::istringstream is(state);
  is >> e;
  if (!is) throw ArgumentError("malformed engine state");
  return e;
}

LatentBatch sample_latent(const LatentSpec& spec, std::size_t n, Engine& rng) {
  if (n == 0) throw ArgumentError("sample_latent: n must be positive");
  if (spec.dim == 0) throw ArgumentError("sample_latent: latent dim must be positive");
  LatentBatch batch;
  batch.seed_trace = engine_state(rng);
  batch.values = Tensor({n, spec.dim});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : batch.values.data) v = normal(rng);
  return batch;
}

LatentBatch replay_latent(const LatentSpec& spec, std::size_t n, const std::string& seed_trace) {
  Engine e = restore_engine(seed_trace);
  return sample_latent(spec, n, e);
}

}  // namespace degan
