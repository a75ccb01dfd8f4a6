#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace seuforge {

/// Seeded generator with library-independent derived distributions.
/// std::mt19937_64's output sequence is fixed by the standard; the
/// distributions on top of it are implemented here so that identical seeds
/// give identical streams on every standard library.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal (Box-Muller, one value per call).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// `count` distinct values from [0, range), ascending (Floyd's algorithm).
std::vector<std::uint64_t> sample_distinct(Rng& rng, std::uint64_t range, std::uint64_t count);

}  // namespace seuforge
