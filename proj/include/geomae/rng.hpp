// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>

namespace geomae {

// One SplitMix64 step.
std::uint64_t splitmix64(std::uint64_t& state);

// Derives an independent stream seed from a base seed plus up to three
// indices (sample, variant, epoch, ...). Stable across platforms.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

// Deterministic random stream. All conversions from raw 64-bit output are
// done explicitly so draws never depend on standard-library distribution
// internals; the normal draw is plain Box-Muller without a cached spare so
// the full state is the mt19937_64 state.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : gen_(seed) {}

  double uniform();                           // [0, 1)
  double uniform(double lo, double hi);       // [lo, hi)
  double normal(double mean = 0.0, double stddev = 1.0);
  std::uint64_t integer(std::uint64_t bound); // [0, bound), unbiased
  bool bernoulli(double p);

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  std::mt19937_64 gen_;
};

}  // namespace geomae
