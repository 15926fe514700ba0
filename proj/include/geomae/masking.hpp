// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "geomae/preprocess.hpp"
#include "geomae/rng.hpp"
#include "geomae/tensor.hpp"

namespace geomae {

enum class MaskPattern { kPoint, kRow, kColumn, kBlock, kMixed };

const char* pattern_name(MaskPattern p);
MaskPattern pattern_from_name(const std::string& name);

// Declarative description of a missing-pattern scenario. Exactly one of
// `rate` / `rate_range` is set. For kMixed, `mix_weights` are normalized
// weights over {point, row, column, block}.
struct MaskSpec {
  MaskPattern pattern = MaskPattern::kMixed;
  std::optional<double> rate;
  std::optional<std::pair<double, double>> rate_range;
  std::vector<double> mix_weights;
  std::uint64_t seed = 0;
  int block_min_len = 2;
  int block_max_len = 0;  // 0 -> window length

  // Mixed point/row/column with equal weights, extra rate drawn uniformly
  // from [0.25, 0.90] per sample.
  static MaskSpec training_default(std::uint64_t seed);

  void validate() const;
  double draw_rate(RandomStream& rng) const;
  MaskPattern draw_pattern(RandomStream& rng) const;
};

// All generators emit binary tensors shaped [N_l, N_in, D_in] with 1 =
// missing; `rate` is the target entry-level missing fraction.
Tensor gen_point(const Shape& shape, double rate, RandomStream& rng);
// Masks all features of Bernoulli-selected (node, time) pairs.
Tensor gen_row(const Shape& shape, double rate, RandomStream& rng);
// Masks the full time window of Bernoulli-selected (node, feature) pairs.
Tensor gen_column(const Shape& shape, double rate, RandomStream& rng);
// Draws (node, start, len ~ U[min_len, max_len]) spans, clipped at the
// window end, across all features, until the realized fraction reaches
// `rate`; overshoot is bounded by one block.
Tensor gen_block(const Shape& shape, double rate, RandomStream& rng, int min_len = 2,
                 int max_len = 0);
// Dispatch on a concrete (non-mixed) pattern.
Tensor gen_mask(MaskPattern pattern, const Shape& shape, double rate, RandomStream& rng,
                int block_min_len = 2, int block_max_len = 0);

// Elementwise OR of two binary masks.
Tensor compose(const Tensor& base, const Tensor& extra);

double missing_fraction(const Tensor& m);

// One extra-masked rendering of a base sample.
struct AugmentedVariant {
  Tensor x_hat;
  HintTensor hint;
  Tensor m;
};

// k variants of one base sample; every variant's missing set contains the
// base missing set.
struct AugmentedSet {
  std::vector<AugmentedVariant> variants;
};

// For each of the k variants: draw a pattern and an extra rate from `spec`,
// OR the extra mask onto the organic one, re-impute and re-hint.
AugmentedSet make_augmented(const ReadingWindow& base, int k, const MaskSpec& spec,
                            double sigma, RandomStream& rng);

// Flat binary mask files: 16-byte header (magic "GMSK", u32 version,
// u32 N_l, u16 N_in, u16 D_in, little endian) followed by one 0/1 byte per
// entry in row-major [N_l, N_in, D_in] order.
void write_mask_file(const std::string& path, const Tensor& m);
Tensor read_mask_file(const std::string& path);

}  // namespace geomae
