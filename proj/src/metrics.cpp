// SPDX-License-Identifier: Apache-2.0
#include "geomae/metrics.hpp"

#include <cmath>
#include <sstream>

#include "geomae/error.hpp"

namespace geomae {

namespace {
constexpr double kSmapeEps = 1e-8;
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os << "mae=" << mae << " rmse=" << rmse << " smape=" << smape << " count=" << count;
  return os.str();
}

void MetricAccumulator::add(const Tensor& y_hat, const Tensor& y, const Tensor& missing) {
  if (y_hat.shape() != y.shape() || missing.shape() != y.shape()) {
    throw ShapeError("metrics: prediction " + shape_str(y_hat.shape()) + ", truth " +
                     shape_str(y.shape()) + " and mask " + shape_str(missing.shape()) +
                     " must agree");
  }
  for (std::int64_t i = 0; i < y.size(); ++i) {
    const double flag = missing.values()[i];
    if (flag != 0.0 && flag != 1.0) {
      throw ContractError("metrics: missing flags must be 0 or 1");
    }
    if (flag == 0.0) add_value(y_hat.values()[i], y.values()[i]);
  }
}

void MetricAccumulator::add_value(double y_hat, double y) {
  const double e = y_hat - y;
  abs_sum_ += std::fabs(e);
  sq_sum_ += e * e;
  smape_sum_ += 2.0 * std::fabs(e) / (std::fabs(y) + std::fabs(y_hat) + kSmapeEps);
  count_ += 1;
}

MetricReport MetricAccumulator::report() const {
  if (count_ == 0) throw ContractError("metrics: nothing was scored");
  MetricReport r;
  const double n = static_cast<double>(count_);
  r.mae = abs_sum_ / n;
  r.rmse = std::sqrt(sq_sum_ / n);
  r.smape = smape_sum_ / n;
  r.count = count_;
  return r;
}

MetricReport evaluate(const Tensor& y_hat, const Tensor& y, const Tensor& missing) {
  MetricAccumulator acc;
  acc.add(y_hat, y, missing);
  return acc.report();
}

}  // namespace geomae
