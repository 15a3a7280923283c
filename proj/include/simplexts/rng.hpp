#pragma once

#include <cstdint>
#include <random>

namespace simplexts {

/// Derives the seed of an independent stream from (master seed, index).
/// Used wherever replicates run concurrently: results depend only on the
/// master seed and the replicate index, never on scheduling.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Deterministic random source. The variate algorithms are fixed here
/// (rather than delegated to implementation-defined std distributions) so
/// that outputs are reproducible for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// Uniform draw strictly inside (0, 1).
  double uniform() { return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (one variate per pair of uniforms).
  double normal();

  /// Gamma(shape, 1) via the Marsaglia-Tsang squeeze, with the standard
  /// U^(1/shape) boost for shape < 1.
  double gamma(double shape);

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace simplexts
