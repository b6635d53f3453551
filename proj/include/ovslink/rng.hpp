#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ovslink {

// Seeded generator with named child streams, so every stochastic draw can be
// traced back to (seed, name, index) regardless of the order streams are used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  Rng split(std::string_view name, std::uint64_t index = 0) const;

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p);
  std::uint32_t poisson(double mean);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace ovslink
