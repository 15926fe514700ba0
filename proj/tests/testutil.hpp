// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "geomae/rng.hpp"
#include "geomae/tensor.hpp"

namespace testutil {

// Central finite difference of `loss_fn` w.r.t. one stored value. The loss
// function must recompute from current tensor contents (run it on a
// non-recording tape).
inline double central_diff(std::vector<double>& slot, std::size_t idx, double step,
                           const std::function<double()>& loss_fn) {
  const double saved = slot[idx];
  slot[idx] = saved + step;
  const double up = loss_fn();
  slot[idx] = saved - step;
  const double down = loss_fn();
  slot[idx] = saved;
  return (up - down) / (2.0 * step);
}

// Max relative error between autodiff gradients and central finite
// differences over every element of every leaf.
inline double max_rel_grad_error(const std::vector<geomae::Tensor>& leaves,
                                 const geomae::Gradients& grads,
                                 const std::function<double()>& loss_fn,
                                 double step = 1e-4) {
  double worst = 0.0;
  for (auto leaf : leaves) {
    const geomae::Tensor g = grads.grad(leaf);
    auto& slot = leaf.values_mut();
    for (std::size_t i = 0; i < slot.size(); ++i) {
      const double fd = central_diff(slot, i, step, loss_fn);
      const double ad = g.values()[i];
      const double denom = std::max({std::fabs(ad), std::fabs(fd), 1e-5});
      worst = std::max(worst, std::fabs(ad - fd) / denom);
    }
  }
  return worst;
}

inline geomae::Tensor random_tensor(geomae::Shape shape, geomae::RandomStream& rng,
                                    bool requires_grad = true, double stddev = 1.0) {
  return geomae::Tensor::randn(std::move(shape), rng, stddev, requires_grad);
}

}  // namespace testutil
