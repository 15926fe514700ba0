// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "geomae/tensor.hpp"

namespace geomae {

// Masked regression metrics in target units. SMAPE uses the factor-2
// symmetric form, bounded by [0, 2].
struct MetricReport {
  double mae = 0.0;
  double rmse = 0.0;
  double smape = 0.0;
  std::int64_t count = 0;

  std::string to_text() const;
};

// Streaming accumulation over (prediction, truth) pairs; entries whose
// missing flag is 1 never contribute.
class MetricAccumulator {
 public:
  void add(const Tensor& y_hat, const Tensor& y, const Tensor& missing);
  void add_value(double y_hat, double y);
  // Throws ContractError when nothing was scored.
  MetricReport report() const;

 private:
  double abs_sum_ = 0.0;
  double sq_sum_ = 0.0;
  double smape_sum_ = 0.0;
  std::int64_t count_ = 0;
};

// One-shot evaluation of a single prediction tensor.
MetricReport evaluate(const Tensor& y_hat, const Tensor& y, const Tensor& missing);

}  // namespace geomae
