// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "geomae/rng.hpp"
#include "geomae/tensor.hpp"

namespace geomae {

// Per-feature mean/std frozen from the training split (missing entries
// ignored). Features whose std falls below 1e-8 are flagged constant and
// standardize to exactly 0.
struct StandardizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::uint8_t> constant;

  int features() const { return static_cast<int>(mean.size()); }
  double standardize_value(int feature, double raw) const;
  double raw_value(int feature, double standardized) const;
};

// Streaming accumulator for StandardizationStats; add() observed values only.
class StatsAccumulator {
 public:
  explicit StatsAccumulator(int n_features);
  void add(int feature, double value);
  StandardizationStats finalize() const;

 private:
  std::vector<double> sum_;
  std::vector<double> sum_sq_;
  std::vector<std::int64_t> count_;
};

// Observed input window: x holds readings [N_l, N_in, D_in] (standardized
// for model consumption), m is the aligned missing indicator with 1 =
// missing. Entries of x at missing positions are placeholders until
// imputation.
struct ReadingWindow {
  Tensor x;
  Tensor m;
};

// Standardized balanced mask fed to the model next to the imputed readings.
// Mean 0 / population std 1 over the window whenever both classes are
// present; all zeros for fully observed or fully missing windows.
struct HintTensor {
  Tensor h;
};

// (raw - mean) / std along the last (feature) axis. When `missing` is
// provided, entries marked missing pass through unchanged.
Tensor standardize(const Tensor& raw, const StandardizationStats& stats);
Tensor standardize(const Tensor& raw, const StandardizationStats& stats,
                   const Tensor& missing);

// Copies observed entries bit-exactly and fills missing ones with
// i.i.d. Normal(0, sigma^2) draws. sigma = 0 recovers zero fill.
Tensor impute_random(const ReadingWindow& w, double sigma, RandomStream& rng);

// m_sym = +1 observed / -1 missing, then standardized over the whole window
// by its mean and population std. Degenerate windows (variance < 1e-12)
// produce an all-zero hint.
HintTensor build_hint(const Tensor& m);

struct PreprocessedInput {
  Tensor x_hat;
  HintTensor hint;
};

// impute_random followed by build_hint; deterministic given the stream.
PreprocessedInput preprocess_sample(const ReadingWindow& w, double sigma,
                                    RandomStream& rng);

}  // namespace geomae
