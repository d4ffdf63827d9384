#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace sabre {

/// Seeded random source with platform-independent variates.
///
/// std::mt19937_64 output is fully specified by the standard, but the
/// <random> distributions are not, so every variate used by the simulator is
/// derived here from raw engine output. Identical seeds give identical
/// streams on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal (Box-Muller, second value cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Unbiased integer in [0, n).
  std::size_t below(std::size_t n);

  /// log of a Gamma(shape, 1) variate; stays finite for tiny shapes.
  double log_gamma_variate(double shape);

  /// Symmetric Dirichlet(alpha, ..., alpha) sample of length k.
  std::vector<double> dirichlet(std::size_t k, double alpha);

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  /// Seeded permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

/// Mixes a base seed with tags (round, client, purpose...) into an
/// independent stream seed.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

}  // namespace sabre
