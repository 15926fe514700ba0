// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "geomae/metrics.hpp"
#include "geomae/rng.hpp"

using namespace geomae;

TEST_CASE("perfect predictions score zero everywhere") {
  RandomStream rng(1);
  Tensor y = Tensor::randn({4, 5}, rng, 2.0);
  Tensor mask = Tensor::zeros({4, 5});
  MetricReport r = evaluate(y, y, mask);
  CHECK(r.mae == 0.0);
  CHECK(r.rmse == 0.0);
  CHECK(r.smape == 0.0);
  CHECK(r.count == 20);
}

TEST_CASE("worked example") {
  Tensor y({2}, {1, 2});
  Tensor y_hat({2}, {1, 4});
  Tensor mask = Tensor::zeros({2});
  MetricReport r = evaluate(y_hat, y, mask);
  CHECK(r.mae == doctest::Approx(1.0));
  CHECK(r.rmse == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  // smape entries: 0 and 2*2/(2+4) = 2/3 -> mean 1/3
  CHECK(r.smape == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("zero-over-zero SMAPE is guarded, not NaN") {
  Tensor y({1}, {0.0});
  MetricReport r = evaluate(y, y, Tensor::zeros({1}));
  CHECK(r.smape == 0.0);
}

TEST_CASE("masked entries never influence the report") {
  RandomStream rng(7);
  Tensor y = Tensor::randn({6, 3}, rng, 1.0);
  Tensor y_hat = Tensor::randn({6, 3}, rng, 1.0);
  std::vector<double> mv(18, 0.0);
  for (std::size_t i = 0; i < mv.size(); i += 3) mv[i] = 1.0;
  Tensor mask({6, 3}, mv);
  MetricReport before = evaluate(y_hat, y, mask);

  // adversarial garbage at masked positions
  Tensor y2(y.shape(), y.values());
  Tensor y_hat2(y_hat.shape(), y_hat.values());
  for (std::size_t i = 0; i < mv.size(); ++i) {
    if (mv[i] == 1.0) {
      y2.values_mut()[i] = 1e12;
      y_hat2.values_mut()[i] = -1e12;
    }
  }
  MetricReport after = evaluate(y_hat2, y2, mask);
  CHECK(before.mae == after.mae);
  CHECK(before.rmse == after.rmse);
  CHECK(before.smape == after.smape);
  CHECK(before.count == after.count);
}

TEST_CASE("rmse dominates mae and joint scaling behaves") {
  RandomStream rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor y = Tensor::randn({8, 4}, rng, 3.0);
    Tensor y_hat = Tensor::randn({8, 4}, rng, 3.0);
    Tensor mask = Tensor::zeros({8, 4});
    MetricReport r = evaluate(y_hat, y, mask);
    CHECK(r.rmse >= r.mae);

    const double c = 7.5;
    Tensor yc(y.shape(), y.values());
    Tensor yhc(y_hat.shape(), y_hat.values());
    for (auto& v : yc.values_mut()) v *= c;
    for (auto& v : yhc.values_mut()) v *= c;
    MetricReport rc = evaluate(yhc, yc, mask);
    CHECK(rc.mae == doctest::Approx(c * r.mae).epsilon(1e-9));
    CHECK(rc.rmse == doctest::Approx(c * r.rmse).epsilon(1e-9));
    CHECK(rc.smape == doctest::Approx(r.smape).epsilon(1e-6));
  }
}

TEST_CASE("empty evaluations are explicit errors") {
  Tensor y({2}, {1, 2});
  Tensor all_missing = Tensor::full({2}, 1.0);
  CHECK_THROWS_AS(evaluate(y, y, all_missing), ContractError);
  MetricAccumulator acc;
  CHECK_THROWS_AS(acc.report(), ContractError);
}

TEST_CASE("shape mismatches are rejected") {
  Tensor y({2}, {1, 2});
  Tensor y3({3}, {1, 2, 3});
  CHECK_THROWS_AS(evaluate(y3, y, Tensor::zeros({2})), ShapeError);
  CHECK_THROWS_AS(evaluate(y, y, Tensor::zeros({3})), ShapeError);
}
