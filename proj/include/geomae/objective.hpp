// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "geomae/stafn.hpp"
#include "geomae/tensor.hpp"

namespace geomae {

enum class RegressionNorm { kL1, kL2 };

struct LossConfig {
  double phi = 0.25;
  double lambda = 0.75;
  int k = 4;
  RegressionNorm norm = RegressionNorm::kL1;

  void validate() const;
};

// Mean absolute (L1) or mean squared (L2) error over all elements.
Tensor regression_loss(Tape& tape, const Tensor& y_hat, const Tensor& y,
                       RegressionNorm norm);
// Same, restricted to entries with scored weight 1; weight 0 entries are
// excluded from both the sum and the divisor. At least one entry must score.
Tensor regression_loss(Tape& tape, const Tensor& y_hat, const Tensor& y,
                       const Tensor& scored, RegressionNorm norm);

// (1/k) * sum_i [ MSE(h_i, [h_base]) + phi * MSE(h_base, [h_i]) ] with [.]
// the stop-gradient. Both terms sit inside the 1/k sum so the magnitude is
// independent of k.
Tensor mae_aux_loss(Tape& tape, const Tensor& h_base, std::span<const Tensor> h_variants,
                    double phi);

// l_reg + lambda * l_mae.
Tensor total_loss(Tape& tape, const Tensor& l_reg, const Tensor& l_mae, double lambda);

// One model-ready training sample: the base input, its augmented variants,
// and the time-major target with scoring weights.
struct PreparedSample {
  ModelInput base;
  std::vector<ModelInput> variants;
  Tensor target;  // [n_out, N, d_out]
  Tensor scored;  // [n_out, N, d_out], 1 = contributes to the loss
};

struct ObjectiveResult {
  double total = 0.0;
  double reg = 0.0;
  double mae_aux = 0.0;
  Gradients grads;
};

// Forward the base sample for prediction + representation, forward each
// variant for its representation only, assemble the multi-task loss over the
// batch, and run backward. With lambda == 0 the variants are skipped
// entirely.
ObjectiveResult training_objective(std::span<const PreparedSample> batch,
                                   const StafnModel& model, const LossConfig& cfg);

}  // namespace geomae
