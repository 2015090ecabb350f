#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace cormult {

// Seeded generator. Named substreams let every stage (data, init, sampling)
// draw from its own reproducible sequence derived from one run seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  static Rng substream(std::uint64_t seed, std::string_view name);

  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal(double mean = 0.0, double stddev = 1.0);
  std::size_t index(std::size_t n);       // uniform in [0, n)
  bool bernoulli(double p);
  std::uint64_t next_u64();

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cormult
