// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "geomae/error.hpp"

namespace geomae {

class RandomStream;

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::uint64_t id = 0;
};
}  // namespace detail

// Dense row-major tensor of 64-bit reals. A Tensor is a shared handle: copies
// alias the same storage. Values are immutable through ops; values_mut() is
// reserved for optimizer updates between passes and for test setup.
// Construction rejects NaN/Inf and shape/value count mismatches.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor zeros_like(const Tensor& other);
  // i.i.d. Normal(0, stddev^2) entries.
  static Tensor randn(Shape shape, RandomStream& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  int rank() const { return static_cast<int>(data_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_->values.size()); }
  const std::vector<double>& values() const { return data_->values; }
  std::vector<double>& values_mut() { return data_->values; }
  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool rg) { data_->requires_grad = rg; }
  std::uint64_t id() const { return data_->id; }

  double item() const;  // value of a one-element tensor

 private:
  std::shared_ptr<detail::TensorData> data_;
};

// Gradient store produced by backward(). Leaves that were never touched by a
// recorded op are simply absent, i.e. exactly zero.
class Gradients {
 public:
  bool has(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  // Gradient of `leaf`; zeros of the same shape when untouched.
  Tensor grad(const Tensor& leaf) const;
  // Accumulation buffer for tensor `id`, zero-initialized to n entries.
  std::vector<double>& buffer(std::uint64_t id, std::int64_t n);
  const std::vector<double>* raw(std::uint64_t id) const;

 private:
  std::unordered_map<std::uint64_t, std::vector<double>> grads_;
};

// Ordered record of the differentiable ops executed during one forward pass.
// backward() replays it in reverse. A tape and the pass it records are
// confined to a single thread; independent passes may run concurrently on
// separate tapes. A non-recording tape runs the same ops without building
// the record (inference / finite-difference probes).
class Tape {
 public:
  Tape() = default;
  static Tape inference();

  bool recording() const { return recording_; }
  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  using PullFn = std::function<void(const std::vector<double>& out_grad, Gradients&)>;
  // Called by ops; a no-op unless recording and grad_flows.
  void push(bool grad_flows, const Tensor& output, PullFn pull);

 private:
  struct Record {
    std::uint64_t out_id;
    std::int64_t out_size;
    PullFn pull;
  };
  std::vector<Record> records_;
  bool recording_ = true;

  friend Gradients backward(const Tensor& loss, Tape& tape);
};

// Reverse-mode sweep from a scalar loss recorded on `tape`. Returns a
// gradient for every requires_grad leaf reachable from the loss.
Gradients backward(const Tensor& loss, Tape& tape);

// --- elementwise / reduction ---
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double s);
Tensor sum(Tape& tape, const Tensor& x);   // rank-0 result
Tensor mean(Tape& tape, const Tensor& x);  // rank-0 result
Tensor sqrt(Tape& tape, const Tensor& x);  // requires x > 0
Tensor abs(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
Tensor gelu(Tape& tape, const Tensor& x);  // exact erf form

// --- shape / structure ---
// Matrix product over the trailing two axes. Leading batch axes must match
// exactly, or either operand may be rank-2 and is then shared across the
// other's batch. No other broadcasting.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose_last_two(Tape& tape, const Tensor& x);
// Swap the two leading axes (rank >= 2).
Tensor transpose_01(Tape& tape, const Tensor& x);
Tensor concat_last(Tape& tape, std::span<const Tensor> parts);
std::vector<Tensor> split_last(Tape& tape, const Tensor& x,
                               std::span<const std::int64_t> sizes);
// Insert a broadcast axis: [d0, d1, ...] -> [n, d0, d1, ...].
Tensor expand_front(Tape& tape, const Tensor& x, std::int64_t n);
// Insert a broadcast axis after the first: [d0, d1, ...] -> [d0, n, d1, ...].
Tensor expand_mid(Tape& tape, const Tensor& x, std::int64_t n);
// x[..., d] + b[d].
Tensor add_feature_bias(Tape& tape, const Tensor& x, const Tensor& b);

// --- normalization / attention pieces ---
// Row softmax over the last axis, max-stabilized. Rows sum to 1.
Tensor softmax_last(Tape& tape, const Tensor& x);
// Per-position normalization over the last axis with learnable gain/bias.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, double eps = 1e-5);

// Identity on values; blocks all gradient flow through the result.
Tensor stop_gradient(const Tensor& x);

}  // namespace geomae
