// SPDX-License-Identifier: Apache-2.0
#include "geomae/objective.hpp"

#include "geomae/error.hpp"

namespace geomae {

void LossConfig::validate() const {
  if (phi < 0.0 || lambda < 0.0) {
    throw ContractError("LossConfig: phi and lambda must be non-negative");
  }
  if (k < 1) throw ContractError("LossConfig: k must be >= 1");
}

namespace {

Tensor mse(Tape& tape, const Tensor& a, const Tensor& b) {
  Tensor d = sub(tape, a, b);
  return mean(tape, mul(tape, d, d));
}

}  // namespace

Tensor regression_loss(Tape& tape, const Tensor& y_hat, const Tensor& y,
                       RegressionNorm norm) {
  Tensor d = sub(tape, y_hat, y);
  if (norm == RegressionNorm::kL1) return mean(tape, abs(tape, d));
  return mean(tape, mul(tape, d, d));
}

Tensor regression_loss(Tape& tape, const Tensor& y_hat, const Tensor& y,
                       const Tensor& scored, RegressionNorm norm) {
  if (scored.shape() != y.shape()) {
    throw ShapeError("regression_loss: scored weights " + shape_str(scored.shape()) +
                     " do not match targets " + shape_str(y.shape()));
  }
  double count = 0.0;
  for (double v : scored.values()) {
    if (v != 0.0 && v != 1.0) {
      throw ContractError("regression_loss: scored weights must be 0 or 1");
    }
    count += v;
  }
  if (count == 0.0) throw ContractError("regression_loss: no scored entries");
  Tensor d = sub(tape, y_hat, y);
  Tensor per_entry =
      norm == RegressionNorm::kL1 ? abs(tape, d) : mul(tape, d, d);
  return scale(tape, sum(tape, mul(tape, per_entry, scored)), 1.0 / count);
}

Tensor mae_aux_loss(Tape& tape, const Tensor& h_base, std::span<const Tensor> h_variants,
                    double phi) {
  if (h_variants.empty()) throw ContractError("mae_aux_loss: no variant representations");
  if (phi < 0.0) throw ContractError("mae_aux_loss: phi must be non-negative");
  Tensor acc;
  for (const Tensor& h_i : h_variants) {
    if (h_i.shape() != h_base.shape()) {
      throw ShapeError("mae_aux_loss: representation shapes disagree, " +
                       shape_str(h_i.shape()) + " vs " + shape_str(h_base.shape()));
    }
    Tensor pull_variant = mse(tape, h_i, stop_gradient(h_base));
    Tensor term = phi == 0.0
                      ? pull_variant
                      : add(tape, pull_variant,
                            scale(tape, mse(tape, h_base, stop_gradient(h_i)), phi));
    acc = acc.defined() ? add(tape, acc, term) : term;
  }
  return scale(tape, acc, 1.0 / static_cast<double>(h_variants.size()));
}

Tensor total_loss(Tape& tape, const Tensor& l_reg, const Tensor& l_mae, double lambda) {
  if (lambda < 0.0) throw ContractError("total_loss: lambda must be non-negative");
  return add(tape, l_reg, scale(tape, l_mae, lambda));
}

ObjectiveResult training_objective(std::span<const PreparedSample> batch,
                                   const StafnModel& model, const LossConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw ContractError("training_objective: empty batch");
  Tape tape;
  Tensor reg_acc;
  Tensor mae_acc;
  for (const PreparedSample& sample : batch) {
    ForwardResult base = forward_with_representation(tape, sample.base, model);
    Tensor l_reg = regression_loss(tape, base.prediction, sample.target, sample.scored,
                                   cfg.norm);
    reg_acc = reg_acc.defined() ? add(tape, reg_acc, l_reg) : l_reg;
    if (cfg.lambda > 0.0) {
      std::vector<Tensor> reps;
      reps.reserve(sample.variants.size());
      for (const ModelInput& variant : sample.variants) {
        reps.push_back(forward_with_representation(tape, variant, model).representation);
      }
      Tensor l_mae = mae_aux_loss(tape, base.representation, reps, cfg.phi);
      mae_acc = mae_acc.defined() ? add(tape, mae_acc, l_mae) : l_mae;
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Tensor l_reg = scale(tape, reg_acc, inv_b);
  ObjectiveResult result;
  if (mae_acc.defined()) {
    Tensor l_mae = scale(tape, mae_acc, inv_b);
    Tensor total = total_loss(tape, l_reg, l_mae, cfg.lambda);
    result.total = total.item();
    result.reg = l_reg.item();
    result.mae_aux = l_mae.item();
    result.grads = backward(total, tape);
  } else {
    result.total = l_reg.item();
    result.reg = l_reg.item();
    result.mae_aux = 0.0;
    result.grads = backward(l_reg, tape);
  }
  return result;
}

}  // namespace geomae
