#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ccm {

/// Seeded random source. Streams derived from the same seed are independent
/// of each other and of how much the parent has been consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  Rng derive(std::uint64_t stream) const;

  double uniform(double lo = 0.0, double hi = 1.0);
  double normal();
  std::size_t index(std::size_t n);
  /// k distinct values from [0, population), in random order.
  std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t k);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace ccm
