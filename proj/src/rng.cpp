// SPDX-License-Identifier: Apache-2.0
#include "geomae/rng.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "geomae/error.hpp"

namespace geomae {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
  std::uint64_t s = base;
  std::uint64_t h = splitmix64(s);
  s ^= a + 0x9e3779b97f4a7c15ULL;
  h ^= splitmix64(s);
  s ^= b + 0xd1b54a32d192ed03ULL;
  h ^= splitmix64(s);
  s ^= c + 0x8cb92ba72f3d8dd7ULL;
  h ^= splitmix64(s);
  return h;
}

double RandomStream::uniform() {
  // 53 mantissa bits -> [0, 1)
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RandomStream::normal(double mean, double stddev) {
  // u1 in (0, 1] keeps the log finite.
  double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::uint64_t RandomStream::integer(std::uint64_t bound) {
  if (bound == 0) throw ContractError("RandomStream::integer: bound must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  for (;;) {
    std::uint64_t v = gen_();
    if (v < limit) return v % bound;
  }
}

bool RandomStream::bernoulli(double p) { return uniform() < p; }

void RandomStream::save(std::ostream& os) const { os << gen_; }

void RandomStream::load(std::istream& is) { is >> gen_; }

}  // namespace geomae
