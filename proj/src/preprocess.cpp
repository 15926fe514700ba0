// SPDX-License-Identifier: Apache-2.0
#include "geomae/preprocess.hpp"

#include <cmath>

#include "geomae/error.hpp"

namespace geomae {

namespace {

constexpr double kConstantFeatureStd = 1e-8;
constexpr double kDegenerateHintVar = 1e-12;

void require_binary(const char* op, const Tensor& m) {
  for (double v : m.values()) {
    if (v != 0.0 && v != 1.0) {
      throw ContractError(std::string(op) + ": mask entries must be exactly 0 or 1");
    }
  }
}

}  // namespace

double StandardizationStats::standardize_value(int feature, double raw) const {
  if (constant[feature]) return 0.0;
  return (raw - mean[feature]) / stddev[feature];
}

double StandardizationStats::raw_value(int feature, double standardized) const {
  if (constant[feature]) return mean[feature];
  return standardized * stddev[feature] + mean[feature];
}

StatsAccumulator::StatsAccumulator(int n_features)
    : sum_(n_features, 0.0), sum_sq_(n_features, 0.0), count_(n_features, 0) {
  if (n_features <= 0) throw ContractError("StatsAccumulator: need at least one feature");
}

void StatsAccumulator::add(int feature, double value) {
  sum_[feature] += value;
  sum_sq_[feature] += value * value;
  count_[feature] += 1;
}

StandardizationStats StatsAccumulator::finalize() const {
  StandardizationStats stats;
  const auto n = sum_.size();
  stats.mean.resize(n);
  stats.stddev.resize(n);
  stats.constant.resize(n);
  for (std::size_t f = 0; f < n; ++f) {
    if (count_[f] == 0) {
      stats.mean[f] = 0.0;
      stats.stddev[f] = 0.0;
      stats.constant[f] = 1;
      continue;
    }
    const double m = sum_[f] / static_cast<double>(count_[f]);
    double var = sum_sq_[f] / static_cast<double>(count_[f]) - m * m;
    if (var < 0.0) var = 0.0;
    stats.mean[f] = m;
    stats.stddev[f] = std::sqrt(var);
    stats.constant[f] = stats.stddev[f] < kConstantFeatureStd ? 1 : 0;
  }
  return stats;
}

Tensor standardize(const Tensor& raw, const StandardizationStats& stats) {
  const std::int64_t d = raw.shape().back();
  if (d != stats.features()) {
    throw ShapeError("standardize: tensor has " + std::to_string(d) +
                     " features, stats describe " + std::to_string(stats.features()));
  }
  std::vector<double> out(raw.values());
  const std::int64_t outer = raw.size() / d;
  for (std::int64_t r = 0; r < outer; ++r) {
    for (std::int64_t f = 0; f < d; ++f) {
      out[r * d + f] = stats.standardize_value(static_cast<int>(f), out[r * d + f]);
    }
  }
  return Tensor(raw.shape(), std::move(out));
}

Tensor standardize(const Tensor& raw, const StandardizationStats& stats,
                   const Tensor& missing) {
  if (missing.shape() != raw.shape()) {
    throw ShapeError("standardize: mask shape " + shape_str(missing.shape()) +
                     " does not match " + shape_str(raw.shape()));
  }
  require_binary("standardize", missing);
  const std::int64_t d = raw.shape().back();
  if (d != stats.features()) {
    throw ShapeError("standardize: tensor has " + std::to_string(d) +
                     " features, stats describe " + std::to_string(stats.features()));
  }
  std::vector<double> out(raw.values());
  const auto& mv = missing.values();
  const std::int64_t outer = raw.size() / d;
  for (std::int64_t r = 0; r < outer; ++r) {
    for (std::int64_t f = 0; f < d; ++f) {
      const std::int64_t i = r * d + f;
      if (mv[i] == 0.0) out[i] = stats.standardize_value(static_cast<int>(f), out[i]);
    }
  }
  return Tensor(raw.shape(), std::move(out));
}

Tensor impute_random(const ReadingWindow& w, double sigma, RandomStream& rng) {
  if (sigma < 0.0) throw ContractError("impute_random: sigma must be non-negative");
  if (w.m.shape() != w.x.shape()) {
    throw ShapeError("impute_random: mask shape " + shape_str(w.m.shape()) +
                     " does not match readings " + shape_str(w.x.shape()));
  }
  require_binary("impute_random", w.m);
  std::vector<double> out(w.x.values());
  const auto& mv = w.m.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double fill = rng.normal(0.0, sigma);
    if (mv[i] == 1.0) out[i] = fill;
  }
  return Tensor(w.x.shape(), std::move(out));
}

HintTensor build_hint(const Tensor& m) {
  require_binary("build_hint", m);
  const auto& mv = m.values();
  const double n = static_cast<double>(m.size());
  double sum = 0.0;
  for (double v : mv) sum += v == 0.0 ? 1.0 : -1.0;
  const double mean = sum / n;
  double var = 0.0;
  for (double v : mv) {
    const double c = (v == 0.0 ? 1.0 : -1.0) - mean;
    var += c * c;
  }
  var /= n;
  std::vector<double> out(mv.size(), 0.0);
  if (var >= kDegenerateHintVar) {
    const double inv_std = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < mv.size(); ++i) {
      out[i] = ((mv[i] == 0.0 ? 1.0 : -1.0) - mean) * inv_std;
    }
  }
  return HintTensor{Tensor(m.shape(), std::move(out))};
}

PreprocessedInput preprocess_sample(const ReadingWindow& w, double sigma,
                                    RandomStream& rng) {
  Tensor x_hat = impute_random(w, sigma, rng);
  return PreprocessedInput{std::move(x_hat), build_hint(w.m)};
}

}  // namespace geomae
