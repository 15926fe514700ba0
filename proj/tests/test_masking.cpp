// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "geomae/masking.hpp"
#include "geomae/rng.hpp"

using namespace geomae;

namespace {

bool feature_slices_constant(const Tensor& m) {
  const auto& s = m.shape();
  for (std::int64_t n = 0; n < s[0]; ++n) {
    for (std::int64_t t = 0; t < s[1]; ++t) {
      const double first = m.values()[(n * s[1] + t) * s[2]];
      for (std::int64_t f = 1; f < s[2]; ++f) {
        if (m.values()[(n * s[1] + t) * s[2] + f] != first) return false;
      }
    }
  }
  return true;
}

bool time_slices_constant(const Tensor& m) {
  const auto& s = m.shape();
  for (std::int64_t n = 0; n < s[0]; ++n) {
    for (std::int64_t f = 0; f < s[2]; ++f) {
      const double first = m.values()[(n * s[1] + 0) * s[2] + f];
      for (std::int64_t t = 1; t < s[1]; ++t) {
        if (m.values()[(n * s[1] + t) * s[2] + f] != first) return false;
      }
    }
  }
  return true;
}

// Every maximal masked run per node is at least min_len long or touches a
// window edge; features of a node-time are all-or-nothing.
bool block_structure_ok(const Tensor& m, int min_len) {
  const auto& s = m.shape();
  if (!feature_slices_constant(m)) return false;
  for (std::int64_t n = 0; n < s[0]; ++n) {
    std::int64_t run_start = -1;
    for (std::int64_t t = 0; t <= s[1]; ++t) {
      const bool on = t < s[1] && m.values()[(n * s[1] + t) * s[2]] == 1.0;
      if (on && run_start < 0) run_start = t;
      if (!on && run_start >= 0) {
        const std::int64_t len = t - run_start;
        const bool at_edge = run_start == 0 || t == s[1];
        if (len < min_len && !at_edge) return false;
        run_start = -1;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("gen_point boundary rates") {
  RandomStream rng(1);
  Tensor zero = gen_point({4, 6, 3}, 0.0, rng);
  for (double v : zero.values()) CHECK(v == 0.0);
  Tensor one = gen_point({4, 6, 3}, 1.0, rng);
  for (double v : one.values()) CHECK(v == 1.0);
}

TEST_CASE("gen_point concentration at 1e5 entries") {
  RandomStream rng(77);
  Tensor m = gen_point({100, 100, 10}, 0.5, rng);
  const double frac = missing_fraction(m);
  CHECK(frac > 0.49);
  CHECK(frac < 0.51);
}

TEST_CASE("gen_point rejects out-of-range rates") {
  RandomStream rng(1);
  CHECK_THROWS_AS(gen_point({2, 2, 2}, -0.1, rng), ContractError);
  CHECK_THROWS_AS(gen_point({2, 2, 2}, 1.1, rng), ContractError);
}

TEST_CASE("gen_row structure and calibration") {
  RandomStream rng(31);
  Tensor all = gen_row({3, 4, 5}, 1.0, rng);
  for (double v : all.values()) CHECK(v == 1.0);

  Tensor m = gen_row({100, 100, 4}, 0.3, rng);
  CHECK(feature_slices_constant(m));
  // pair-level fraction over 10^4 (node, time) pairs
  double pairs_on = 0.0;
  for (std::int64_t n = 0; n < 100; ++n)
    for (std::int64_t t = 0; t < 100; ++t) pairs_on += m.values()[(n * 100 + t) * 4];
  const double frac = pairs_on / 1e4;
  CHECK(frac > 0.27);
  CHECK(frac < 0.33);
  CHECK(missing_fraction(m) == doctest::Approx(frac));
}

TEST_CASE("gen_column structure and calibration") {
  RandomStream rng(32);
  Tensor zero = gen_column({3, 4, 5}, 0.0, rng);
  for (double v : zero.values()) CHECK(v == 0.0);

  Tensor m = gen_column({100, 24, 100}, 0.3, rng);
  CHECK(time_slices_constant(m));
  double pairs_on = 0.0;
  for (std::int64_t n = 0; n < 100; ++n)
    for (std::int64_t f = 0; f < 100; ++f) pairs_on += m.values()[(n * 24 + 0) * 100 + f];
  const double frac = pairs_on / 1e4;
  CHECK(frac > 0.27);
  CHECK(frac < 0.33);
}

TEST_CASE("gen_block structure, calibration, overshoot bound") {
  RandomStream rng(33);
  Tensor zero = gen_block({5, 12, 3}, 0.0, rng);
  for (double v : zero.values()) CHECK(v == 0.0);

  const int min_len = 2;
  const std::int64_t nodes = 50, steps = 12;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor m = gen_block({nodes, steps, 3}, 0.4, rng, min_len, 0);
    CHECK(block_structure_ok(m, min_len));
    const double frac = missing_fraction(m);
    CHECK(frac >= 0.4);
    CHECK(frac <= 0.4 + static_cast<double>(steps) / static_cast<double>(steps * nodes) + 0.01);
  }
}

TEST_CASE("gen_block validates length bounds") {
  RandomStream rng(2);
  CHECK_THROWS_AS(gen_block({2, 4, 1}, 0.5, rng, 0, 2), ContractError);
  CHECK_THROWS_AS(gen_block({2, 4, 1}, 0.5, rng, 3, 2), ContractError);
  CHECK_THROWS_AS(gen_block({2, 4, 1}, 0.5, rng, 2, 9), ContractError);
}

TEST_CASE("compose is elementwise OR") {
  RandomStream rng(4);
  Tensor base = gen_point({4, 5, 2}, 0.4, rng);
  Tensor zeros = Tensor::zeros({4, 5, 2});
  Tensor ones = Tensor::full({4, 5, 2}, 1.0);
  CHECK(compose(base, zeros).values() == base.values());
  CHECK(compose(base, ones).values() == ones.values());

  Tensor extra = gen_point({4, 5, 2}, 0.4, rng);
  Tensor both = compose(base, extra);
  CHECK(missing_fraction(both) >= missing_fraction(base));
  CHECK(missing_fraction(both) >= missing_fraction(extra));
  for (std::int64_t i = 0; i < both.size(); ++i) {
    CHECK(both.values()[i] == std::max(base.values()[i], extra.values()[i]));
  }
}

TEST_CASE("make_augmented keeps the organic mask as a subset") {
  RandomStream data_rng(5);
  Tensor x = Tensor::randn({4, 12, 3}, data_rng, 1.0);
  Tensor base_m = gen_point({4, 12, 3}, 0.3, data_rng);
  ReadingWindow base{x, base_m};

  MaskSpec spec = MaskSpec::training_default(0);
  RandomStream rng(10);
  AugmentedSet set = make_augmented(base, 4, spec, 0.2, rng);
  CHECK(set.variants.size() == 4);
  for (const auto& v : set.variants) {
    for (std::int64_t i = 0; i < base_m.size(); ++i) {
      CHECK(v.m.values()[i] >= base_m.values()[i]);
    }
  }
}

TEST_CASE("make_augmented with zero extra rate reproduces the base mask") {
  RandomStream data_rng(6);
  Tensor x = Tensor::randn({3, 8, 2}, data_rng, 1.0);
  Tensor base_m = gen_point({3, 8, 2}, 0.4, data_rng);

  MaskSpec spec;
  spec.pattern = MaskPattern::kPoint;
  spec.rate = 0.0;
  RandomStream rng(11);
  AugmentedSet set = make_augmented(ReadingWindow{x, base_m}, 1, spec, 0.2, rng);
  CHECK(set.variants[0].m.values() == base_m.values());
  // observed entries unchanged even though fills were re-drawn
  for (std::int64_t i = 0; i < x.size(); ++i) {
    if (base_m.values()[i] == 0.0) {
      CHECK(set.variants[0].x_hat.values()[i] == x.values()[i]);
    }
  }
}

TEST_CASE("make_augmented is deterministic given the seed") {
  RandomStream data_rng(7);
  Tensor x = Tensor::randn({3, 8, 2}, data_rng, 1.0);
  Tensor base_m = gen_point({3, 8, 2}, 0.2, data_rng);
  MaskSpec spec = MaskSpec::training_default(0);

  RandomStream r1(21), r2(21);
  AugmentedSet s1 = make_augmented(ReadingWindow{x, base_m}, 3, spec, 0.2, r1);
  AugmentedSet s2 = make_augmented(ReadingWindow{x, base_m}, 3, spec, 0.2, r2);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(s1.variants[i].m.values() == s2.variants[i].m.values());
    CHECK(s1.variants[i].x_hat.values() == s2.variants[i].x_hat.values());
    CHECK(s1.variants[i].hint.h.values() == s2.variants[i].hint.h.values());
  }
}

TEST_CASE("make_augmented rejects k < 1") {
  Tensor x({1, 1, 1}, {0.0});
  Tensor m({1, 1, 1}, {0.0});
  MaskSpec spec = MaskSpec::training_default(0);
  RandomStream rng(1);
  CHECK_THROWS_AS(make_augmented(ReadingWindow{x, m}, 0, spec, 0.2, rng), ContractError);
}

TEST_CASE("MaskSpec validation") {
  MaskSpec spec;
  spec.pattern = MaskPattern::kPoint;
  CHECK_THROWS_AS(spec.validate(), ContractError);  // neither rate nor range
  spec.rate = 0.5;
  spec.rate_range = {{0.1, 0.2}};
  CHECK_THROWS_AS(spec.validate(), ContractError);  // both set
  spec.rate_range.reset();
  CHECK_NOTHROW(spec.validate());

  MaskSpec mixed = MaskSpec::training_default(0);
  mixed.mix_weights = {1.0, 1.0};
  CHECK_THROWS_AS(mixed.validate(), ContractError);
}

TEST_CASE("mask file round trip and error paths") {
  RandomStream rng(12);
  Tensor m = gen_point({6, 12, 4}, 0.35, rng);
  const std::string path = "test_mask_roundtrip.bin";
  write_mask_file(path, m);
  Tensor back = read_mask_file(path);
  CHECK(back.shape() == m.shape());
  CHECK(back.values() == m.values());
  std::remove(path.c_str());

  // not a mask file
  const std::string bogus = "test_mask_bogus.bin";
  {
    FILE* f = std::fopen(bogus.c_str(), "wb");
    std::fputs("not a mask at all, just text", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_mask_file(bogus), ParseError);
  std::remove(bogus.c_str());

  CHECK_THROWS_AS(read_mask_file("does_not_exist.bin"), IoError);
}
