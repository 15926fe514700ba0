// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "geomae/objective.hpp"
#include "geomae/rng.hpp"
#include "testutil.hpp"

using namespace geomae;

namespace {

std::vector<CivilTime> hourly(CivilTime start, int n) {
  std::vector<CivilTime> out;
  for (int i = 0; i < n; ++i) out.push_back(add_minutes(start, 60 * i));
  return out;
}

ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.n_nodes = 4;
  cfg.n_blocks = 1;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_in = 2;
  cfg.d_out = 1;
  cfg.n_in = 3;
  cfg.n_out = 2;
  cfg.mlp_hidden = 12;
  return cfg;
}

ModelInput random_input(const ModelConfig& cfg, RandomStream& rng) {
  ModelInput in;
  in.x_hat = Tensor::randn({cfg.n_nodes, cfg.n_in, cfg.d_in}, rng, 1.0);
  in.hint = Tensor::randn({cfg.n_nodes, cfg.n_in, cfg.d_in}, rng, 1.0);
  in.ts.history = hourly({2016, 3, 5, 8, 0}, cfg.n_in);
  in.ts.horizon = hourly(add_minutes({2016, 3, 5, 8, 0}, 60 * cfg.n_in), cfg.n_out);
  return in;
}

PreparedSample random_sample(const ModelConfig& cfg, RandomStream& rng, int k) {
  PreparedSample s;
  s.base = random_input(cfg, rng);
  for (int i = 0; i < k; ++i) s.variants.push_back(random_input(cfg, rng));
  s.target = Tensor::randn({cfg.n_out, cfg.n_nodes, cfg.d_out}, rng, 1.0);
  s.scored = Tensor::full({cfg.n_out, cfg.n_nodes, cfg.d_out}, 1.0);
  return s;
}

}  // namespace

TEST_CASE("regression loss worked values") {
  Tape t = Tape::inference();
  Tensor y({2}, {1, 4});
  Tensor same({2}, {1, 4});
  CHECK(regression_loss(t, same, y, RegressionNorm::kL1).item() == 0.0);
  CHECK(regression_loss(t, same, y, RegressionNorm::kL2).item() == 0.0);

  Tensor y_hat({2}, {1, 2});
  CHECK(regression_loss(t, y_hat, y, RegressionNorm::kL1).item() == doctest::Approx(1.0));
  CHECK(regression_loss(t, y_hat, y, RegressionNorm::kL2).item() == doctest::Approx(2.0));
}

TEST_CASE("masked regression loss ignores unscored entries") {
  Tape t = Tape::inference();
  Tensor y({3}, {1, 2, 3});
  Tensor y_hat({3}, {1, 4, 100});
  Tensor scored({3}, {1, 1, 0});
  const double loss = regression_loss(t, y_hat, y, scored, RegressionNorm::kL1).item();
  CHECK(loss == doctest::Approx(1.0));  // (0 + 2) / 2

  Tensor y2({3}, {1, 2, -555.0});  // perturb only the unscored slot
  CHECK(regression_loss(t, y_hat, y2, scored, RegressionNorm::kL1).item() ==
        doctest::Approx(loss));

  Tensor none({3}, {0, 0, 0});
  CHECK_THROWS_AS(regression_loss(t, y_hat, y, none, RegressionNorm::kL1), ContractError);
}

TEST_CASE("mae_aux_loss values") {
  RandomStream rng(1);
  Tensor h = Tensor::randn({2, 3, 4}, rng, 1.0);

  SUBCASE("identical variants give zero") {
    Tape t = Tape::inference();
    std::vector<Tensor> vars{Tensor(h.shape(), h.values()), Tensor(h.shape(), h.values())};
    CHECK(mae_aux_loss(t, h, vars, 0.25).item() == 0.0);
  }

  SUBCASE("k=1 offset variant gives (1+phi) * MSE(delta)") {
    Tape t = Tape::inference();
    Tensor delta = Tensor::randn(h.shape(), rng, 0.3);
    Tape tc = Tape::inference();
    Tensor h1 = add(tc, h, delta);
    double mse_delta = 0.0;
    for (double v : delta.values()) mse_delta += v * v;
    mse_delta /= static_cast<double>(delta.size());
    const double phi = 0.25;
    std::vector<Tensor> vars{h1};
    CHECK(mae_aux_loss(t, h, vars, phi).item() ==
          doctest::Approx((1.0 + phi) * mse_delta).epsilon(1e-12));
  }

  SUBCASE("invariant under variant permutation") {
    Tape t = Tape::inference();
    std::vector<Tensor> vars;
    for (int i = 0; i < 3; ++i) vars.push_back(Tensor::randn(h.shape(), rng, 1.0));
    const double a = mae_aux_loss(t, h, vars, 0.4).item();
    std::swap(vars[0], vars[2]);
    CHECK(mae_aux_loss(t, h, vars, 0.4).item() == doctest::Approx(a).epsilon(1e-15));
  }

  SUBCASE("empty variant list is rejected") {
    Tape t = Tape::inference();
    std::vector<Tensor> vars;
    CHECK_THROWS_AS(mae_aux_loss(t, h, vars, 0.25), ContractError);
  }
}

TEST_CASE("stop-gradient placement in the auxiliary loss") {
  ModelConfig cfg = desk_config();
  StafnModel model = StafnModel::init(cfg, 5);
  RandomStream rng(6);
  ModelInput input = random_input(cfg, rng);

  // variant representations frozen as constants
  std::vector<Tensor> frozen;
  {
    Tape t = Tape::inference();
    for (int i = 0; i < 2; ++i) {
      ModelInput v = random_input(cfg, rng);
      frozen.push_back(forward_with_representation(t, v, model).representation);
    }
  }

  SUBCASE("phi = 0: no gradient reaches any parameter") {
    Tape tape;
    Tensor h_base = forward_with_representation(tape, input, model).representation;
    Tensor loss = mae_aux_loss(tape, h_base, frozen, 0.0);
    Gradients grads = backward(loss, tape);
    for (const auto& p : model.parameters()) {
      CAPTURE(p.name);
      CHECK_FALSE(grads.has(p.tensor));  // exactly zero, not approximately
    }
  }

  SUBCASE("phi > 0: the phi branch carries gradient and matches finite differences") {
    const double phi = 0.4;
    Tape tape;
    Tensor h_base = forward_with_representation(tape, input, model).representation;
    Tensor loss = mae_aux_loss(tape, h_base, frozen, phi);
    Gradients grads = backward(loss, tape);

    // A plain finite difference of the loss value would differentiate
    // through the stop-gradient (it is an identity on values). The reference
    // therefore keeps only the live phi branch; the stopped branch is a
    // constant at the evaluation point.
    auto loss_fn = [&]() {
      Tape t = Tape::inference();
      Tensor hb = forward_with_representation(t, input, model).representation;
      Tensor acc;
      for (const Tensor& h_i : frozen) {
        Tensor d = sub(t, hb, h_i);
        Tensor term = scale(t, mean(t, mul(t, d, d)), phi);
        acc = acc.defined() ? add(t, acc, term) : term;
      }
      return scale(t, acc, 1.0 / static_cast<double>(frozen.size())).item();
    };
    std::vector<Tensor> leaves;
    for (const auto& p : model.parameters()) leaves.push_back(p.tensor);
    CHECK(testutil::max_rel_grad_error(leaves, grads, loss_fn) < 1e-4);
  }
}

TEST_CASE("total loss composition") {
  Tape t = Tape::inference();
  Tensor reg = Tensor::scalar(1.0);
  Tensor aux = Tensor::scalar(2.0);
  CHECK(total_loss(t, reg, aux, 0.0).item() == 1.0);
  CHECK(total_loss(t, reg, aux, 0.75).item() == doctest::Approx(2.5));
  // doubling lambda doubles the auxiliary contribution exactly
  const double l1 = total_loss(t, reg, aux, 0.6).item();
  const double l2 = total_loss(t, reg, aux, 1.2).item();
  CHECK(l2 - 1.0 == doctest::Approx(2.0 * (l1 - 1.0)).epsilon(1e-15));
}

TEST_CASE("training objective with lambda zero equals the pure forecaster") {
  ModelConfig cfg = desk_config();
  StafnModel model = StafnModel::init(cfg, 9);
  RandomStream rng(10);
  PreparedSample sample = random_sample(cfg, rng, 2);

  LossConfig lc;
  lc.lambda = 0.0;
  lc.k = 2;
  ObjectiveResult with_variants = training_objective({&sample, 1}, model, lc);

  // hand-rolled regression-only pass
  Tape tape;
  ForwardResult fr = forward_with_representation(tape, sample.base, model);
  Tensor l = regression_loss(tape, fr.prediction, sample.target, sample.scored, lc.norm);
  Gradients ref = backward(l, tape);

  CHECK(with_variants.total == l.item());
  CHECK(with_variants.mae_aux == 0.0);
  for (const auto& p : model.parameters()) {
    CHECK(with_variants.grads.grad(p.tensor).values() == ref.grad(p.tensor).values());
  }
}

TEST_CASE("training objective at paper defaults touches every parameter") {
  ModelConfig cfg = desk_config();
  StafnModel model = StafnModel::init(cfg, 11);
  RandomStream rng(12);
  PreparedSample sample = random_sample(cfg, rng, 4);
  LossConfig lc;  // phi 0.25, lambda 0.75, k 4
  ObjectiveResult res = training_objective({&sample, 1}, model, lc);
  CHECK(std::isfinite(res.total));
  CHECK(res.total >= 0.0);
  CHECK(res.mae_aux > 0.0);
  for (const auto& p : model.parameters()) {
    CAPTURE(p.name);
    CHECK(res.grads.has(p.tensor));
  }
}

TEST_CASE("full objective gradient agrees with finite differences") {
  ModelConfig cfg = desk_config();
  StafnModel model = StafnModel::init(cfg, 13);
  RandomStream rng(14);
  PreparedSample sample = random_sample(cfg, rng, 2);
  LossConfig lc;
  lc.k = 2;

  ObjectiveResult res = training_objective({&sample, 1}, model, lc);

  // Freeze the stop-gradient branches at the evaluation point so finite
  // differences see the same function the backward pass differentiates.
  Tensor h_base0;
  std::vector<Tensor> h_vars0;
  {
    Tape t = Tape::inference();
    h_base0 = forward_with_representation(t, sample.base, model).representation;
    for (const auto& v : sample.variants) {
      h_vars0.push_back(forward_with_representation(t, v, model).representation);
    }
  }
  auto loss_fn = [&]() {
    Tape t = Tape::inference();
    ForwardResult base = forward_with_representation(t, sample.base, model);
    Tensor l_reg = regression_loss(t, base.prediction, sample.target, sample.scored, lc.norm);
    Tensor acc;
    for (std::size_t i = 0; i < sample.variants.size(); ++i) {
      Tensor h_i = forward_with_representation(t, sample.variants[i], model).representation;
      Tensor d_pull = sub(t, h_i, h_base0);
      Tensor term = mean(t, mul(t, d_pull, d_pull));
      Tensor d_phi = sub(t, base.representation, h_vars0[i]);
      term = add(t, term, scale(t, mean(t, mul(t, d_phi, d_phi)), lc.phi));
      acc = acc.defined() ? add(t, acc, term) : term;
    }
    Tensor l_mae = scale(t, acc, 1.0 / static_cast<double>(sample.variants.size()));
    return total_loss(t, l_reg, l_mae, lc.lambda).item();
  };
  // probe a subset of parameters here; the acceptance suite sweeps them all
  std::vector<Tensor> leaves;
  for (const auto& p : model.parameters()) {
    if (p.name == "node_embedding" || p.name == "input_proj.w" || p.name == "head.b" ||
        p.name == "enc0.temporal.h0.wq" || p.name == "dec0.forecast.h1.wv" ||
        p.name == "enc0.ln_fusion.gain") {
      leaves.push_back(p.tensor);
    }
  }
  REQUIRE(leaves.size() == 6);
  CHECK(testutil::max_rel_grad_error(leaves, res.grads, loss_fn) < 1e-4);
}
