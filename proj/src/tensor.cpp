// SPDX-License-Identifier: Apache-2.0
#include "geomae/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <utility>

#include "geomae/rng.hpp"

namespace geomae {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::uint64_t next_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw ContractError(std::string(op) + ": non-finite value produced");
    }
  }
}

Tensor make_result(const char* op, Shape shape, std::vector<double> values, bool rg) {
  check_finite(op, values);
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(rg);
  return t;
}

bool flows(const Tape& tape, const Tensor& a) { return tape.recording() && a.requires_grad(); }

bool flows(const Tape& tape, const Tensor& a, const Tensor& b) {
  return tape.recording() && (a.requires_grad() || b.requires_grad());
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("Tensor: non-positive extent in " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("Tensor: shape " + shape_str(shape) + " expects " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw ContractError("Tensor: non-finite value at construction");
  }
  data_ = std::make_shared<detail::TensorData>();
  data_->shape = std::move(shape);
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
  data_->id = next_id();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value),
                requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::zeros_like(const Tensor& other) { return zeros(other.shape()); }

Tensor Tensor::randn(Shape shape, RandomStream& rng, double stddev, bool requires_grad) {
  auto n = shape_numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("Tensor::item: tensor has " + std::to_string(size()) +
                        " elements, expected 1");
  }
  return values()[0];
}

Tensor Gradients::grad(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) return Tensor::zeros_like(leaf);
  return Tensor(leaf.shape(), it->second);
}

std::vector<double>& Gradients::buffer(std::uint64_t id, std::int64_t n) {
  auto& buf = grads_[id];
  if (buf.empty()) buf.assign(static_cast<std::size_t>(n), 0.0);
  return buf;
}

const std::vector<double>* Gradients::raw(std::uint64_t id) const {
  auto it = grads_.find(id);
  return it == grads_.end() ? nullptr : &it->second;
}

Tape Tape::inference() {
  Tape t;
  t.recording_ = false;
  return t;
}

void Tape::push(bool grad_flows, const Tensor& output, PullFn pull) {
  if (!recording_ || !grad_flows) return;
  records_.push_back(Record{output.id(), output.size(), std::move(pull)});
}

Gradients backward(const Tensor& loss, Tape& tape) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  Gradients grads;
  grads.buffer(loss.id(), 1)[0] = 1.0;
  for (auto it = tape.records_.rbegin(); it != tape.records_.rend(); ++it) {
    const auto* g = grads.raw(it->out_id);
    if (g == nullptr) continue;
    it->pull(*g, grads);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// elementwise / reduction
// ---------------------------------------------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Tensor r = make_result("add", a.shape(), std::move(out), flows(tape, a, b));
  tape.push(r.requires_grad(), r, [a, b](const std::vector<double>& g, Gradients& gs) {
    if (a.requires_grad()) {
      auto& ga = gs.buffer(a.id(), a.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = gs.buffer(b.id(), b.size());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return r;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Tensor r = make_result("sub", a.shape(), std::move(out), flows(tape, a, b));
  tape.push(r.requires_grad(), r, [a, b](const std::vector<double>& g, Gradients& gs) {
    if (a.requires_grad()) {
      auto& ga = gs.buffer(a.id(), a.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = gs.buffer(b.id(), b.size());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return r;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tensor r = make_result("mul", a.shape(), std::move(out), flows(tape, a, b));
  tape.push(r.requires_grad(), r, [a, b](const std::vector<double>& g, Gradients& gs) {
    if (a.requires_grad()) {
      auto& ga = gs.buffer(a.id(), a.size());
      const auto& bv = b.values();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto& gb = gs.buffer(b.id(), b.size());
      const auto& av = a.values();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
  return r;
}

Tensor scale(Tape& tape, const Tensor& x, double s) {
  if (!std::isfinite(s)) throw ContractError("scale: non-finite factor");
  std::vector<double> out(x.values());
  for (auto& v : out) v *= s;
  Tensor r = make_result("scale", x.shape(), std::move(out), flows(tape, x));
  tape.push(r.requires_grad(), r, [x, s](const std::vector<double>& g, Gradients& gs) {
    auto& gx = gs.buffer(x.id(), x.size());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
  });
  return r;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor r = make_result("sum", Shape{}, {acc}, flows(tape, x));
  tape.push(r.requires_grad(), r, [x](const std::vector<double>& g, Gradients& gs) {
    auto& gx = gs.buffer(x.id(), x.size());
    for (auto& v : gx) v += g[0];
  });
  return r;
}

Tensor mean(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor r = make_result("mean", Shape{}, {acc * inv}, flows(tape, x));
  tape.push(r.requires_grad(), r, [x, inv](const std::vector<double>& g, Gradients& gs) {
    auto& gx = gs.buffer(x.id(), x.size());
    for (auto& v : gx) v += g[0] * inv;
  });
  return r;
}

Tensor sqrt(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.values());
  for (auto& v : out) {
    if (v <= 0.0) throw ContractError("sqrt: input must be strictly positive");
    v = std::sqrt(v);
  }
  Tensor r = make_result("sqrt", x.shape(), std::move(out), flows(tape, x));
  tape.push(r.requires_grad(), r, [x, r](const std::vector<double>& g, Gradients& gs) {
    auto& gx = gs.buffer(x.id(), x.size());
    const auto& rv = r.values();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * 0.5 / rv[i];
  });
  return r;
}

Tensor abs(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.values());
  for (auto& v : out) v = std::fabs(v);
  Tensor r = make_result("abs", x.shape(), std::move(out), flows(tape, x));
  // subgradient 0 at the kink
  tape.push(r.requires_grad(), r, [x](const std::vector<double>& g, Gradients& gs) {
    auto& gx = gs.buffer(x.id(), x.size());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] * (xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0));
    }
  });
  return r;
}

Tensor relu(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.values());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  Tensor r = make_result("relu", x.shape(), std::move(out), flows(tape, x));
  tape.push(r.requires_grad(), r, [x](const std::vector<double>& g, Gradients& gs) {
    auto& gx = gs.buffer(x.id(), x.size());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0.0 ? g[i] : 0.0;
  });
  return r;
}

Tensor gelu(Tape& tape, const Tensor& x) {
  static const double kInvSqrt2 = 0.70710678118654752440;
  static const double kInvSqrt2Pi = 0.39894228040143267794;
  std::vector<double> out(x.values());
  for (auto& v : out) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  Tensor r = make_result("gelu", x.shape(), std::move(out), flows(tape, x));
  tape.push(r.requires_grad(), r, [x](const std::vector<double>& g, Gradients& gs) {
    auto& gx = gs.buffer(x.id(), x.size());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
  return r;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace {

struct MatmulDims {
  std::int64_t batch;  // flattened leading extents of the result
  std::int64_t m, k, n;
  bool a_shared;  // rank-2 lhs reused across batches
  bool b_shared;  // rank-2 rhs reused across batches
  Shape out_shape;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const auto& as = a.shape();
  const auto& bs = b.shape();
  MatmulDims d{};
  d.m = as[as.size() - 2];
  d.k = as[as.size() - 1];
  const std::int64_t bk = bs[bs.size() - 2];
  d.n = bs[bs.size() - 1];
  if (d.k != bk) {
    throw ShapeError("matmul: inner extents disagree, " + shape_str(as) + " x " +
                     shape_str(bs));
  }
  Shape abatch(as.begin(), as.end() - 2);
  Shape bbatch(bs.begin(), bs.end() - 2);
  d.a_shared = abatch.empty() && !bbatch.empty();
  d.b_shared = bbatch.empty() && !abatch.empty();
  if (!abatch.empty() && !bbatch.empty() && abatch != bbatch) {
    throw ShapeError("matmul: batch extents disagree, " + shape_str(as) + " x " +
                     shape_str(bs));
  }
  const Shape& batch = abatch.empty() ? bbatch : abatch;
  d.batch = shape_numel(batch);
  d.out_shape = batch;
  d.out_shape.push_back(d.m);
  d.out_shape.push_back(d.n);
  return d;
}

// C[b] += A[b] * B[b] for row-major blocks.
void gemm_acc(const double* a, const double* b, double* c, std::int64_t m,
              std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[b] += A[b] * B[b]^T
void gemm_bt_acc(const double* a, const double* b, double* c, std::int64_t m,
                 std::int64_t k, std::int64_t n) {
  // a: m x k, b: n x k, c: m x n
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* arow = a + i * k;
      const double* brow = b + j * k;
      for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[b] += A[b]^T * B[b]
void gemm_at_acc(const double* a, const double* b, double* c, std::int64_t m,
                 std::int64_t k, std::int64_t n) {
  // a: k x m, b: k x n, c: m x n
  for (std::int64_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  const MatmulDims d = matmul_dims(a, b);
  std::vector<double> out(static_cast<std::size_t>(d.batch * d.m * d.n), 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::int64_t t = 0; t < d.batch; ++t) {
    const double* ab = av + (d.a_shared ? 0 : t * d.m * d.k);
    const double* bb = bv + (d.b_shared ? 0 : t * d.k * d.n);
    gemm_acc(ab, bb, out.data() + t * d.m * d.n, d.m, d.k, d.n);
  }
  Tensor r = make_result("matmul", d.out_shape, std::move(out), flows(tape, a, b));
  tape.push(r.requires_grad(), r, [a, b, d](const std::vector<double>& g, Gradients& gs) {
    // dA = g * B^T, dB = A^T * g; shared rank-2 operands accumulate over batch
    if (a.requires_grad()) {
      auto& ga = gs.buffer(a.id(), a.size());
      const double* bv = b.values().data();
      for (std::int64_t t = 0; t < d.batch; ++t) {
        const double* gb = g.data() + t * d.m * d.n;
        const double* bb = bv + (d.b_shared ? 0 : t * d.k * d.n);
        double* gab = ga.data() + (d.a_shared ? 0 : t * d.m * d.k);
        gemm_bt_acc(gb, bb, gab, d.m, d.n, d.k);
      }
    }
    if (b.requires_grad()) {
      auto& gbuf = gs.buffer(b.id(), b.size());
      const double* av = a.values().data();
      for (std::int64_t t = 0; t < d.batch; ++t) {
        const double* gb = g.data() + t * d.m * d.n;
        const double* ab = av + (d.a_shared ? 0 : t * d.m * d.k);
        double* gbb = gbuf.data() + (d.b_shared ? 0 : t * d.k * d.n);
        gemm_at_acc(ab, gb, gbb, d.k, d.m, d.n);
      }
    }
  });
  return r;
}

Tensor transpose_last_two(Tape& tape, const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last_two: rank must be >= 2");
  const auto& s = x.shape();
  const std::int64_t m = s[s.size() - 2];
  const std::int64_t n = s[s.size() - 1];
  const std::int64_t batch = x.size() / (m * n);
  Shape os(s);
  std::swap(os[os.size() - 2], os[os.size() - 1]);
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  const auto& xv = x.values();
  for (std::int64_t t = 0; t < batch; ++t) {
    const double* src = xv.data() + t * m * n;
    double* dst = out.data() + t * m * n;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  Tensor r = make_result("transpose_last_two", os, std::move(out), flows(tape, x));
  tape.push(r.requires_grad(), r, [x, m, n, batch](const std::vector<double>& g, Gradients& gs) {
    auto& gx = gs.buffer(x.id(), x.size());
    for (std::int64_t t = 0; t < batch; ++t) {
      const double* src = g.data() + t * m * n;
      double* dst = gx.data() + t * m * n;
      for (std::int64_t j = 0; j < n; ++j)
        for (std::int64_t i = 0; i < m; ++i) dst[i * n + j] += src[j * m + i];
    }
  });
  return r;
}

Tensor transpose_01(Tape& tape, const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_01: rank must be >= 2");
  const auto& s = x.shape();
  const std::int64_t a = s[0];
  const std::int64_t b = s[1];
  const std::int64_t inner = x.size() / (a * b);
  Shape os(s);
  std::swap(os[0], os[1]);
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  const auto& xv = x.values();
  for (std::int64_t i = 0; i < a; ++i)
    for (std::int64_t j = 0; j < b; ++j)
      std::memcpy(out.data() + (j * a + i) * inner, xv.data() + (i * b + j) * inner,
                  static_cast<std::size_t>(inner) * sizeof(double));
  Tensor r = make_result("transpose_01", os, std::move(out), flows(tape, x));
  tape.push(r.requires_grad(), r, [x, a, b, inner](const std::vector<double>& g, Gradients& gs) {
    auto& gx = gs.buffer(x.id(), x.size());
    for (std::int64_t i = 0; i < a; ++i)
      for (std::int64_t j = 0; j < b; ++j) {
        const double* src = g.data() + (j * a + i) * inner;
        double* dst = gx.data() + (i * b + j) * inner;
        for (std::int64_t t = 0; t < inner; ++t) dst[t] += src[t];
      }
  });
  return r;
}

Tensor concat_last(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_last: no operands");
  if (parts[0].rank() < 1) throw ShapeError("concat_last: rank must be >= 1");
  const auto& first = parts[0].shape();
  Shape lead(first.begin(), first.end() - 1);
  std::int64_t total_last = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(first.size()) ||
        Shape(p.shape().begin(), p.shape().end() - 1) != lead) {
      throw ShapeError("concat_last: incompatible shapes " + shape_str(first) + " vs " +
                       shape_str(p.shape()));
    }
    total_last += p.shape().back();
    rg = rg || p.requires_grad();
  }
  const std::int64_t outer = shape_numel(lead);
  Shape os(lead);
  os.push_back(total_last);
  std::vector<double> out(static_cast<std::size_t>(outer * total_last));
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.shape().back();
    const auto& pv = p.values();
    for (std::int64_t r = 0; r < outer; ++r)
      std::memcpy(out.data() + r * total_last + off, pv.data() + r * w,
                  static_cast<std::size_t>(w) * sizeof(double));
    off += w;
  }
  Tensor r = make_result("concat_last", os, std::move(out), tape.recording() && rg);
  std::vector<Tensor> held(parts.begin(), parts.end());
  tape.push(r.requires_grad(), r,
            [held = std::move(held), outer, total_last](const std::vector<double>& g,
                                                        Gradients& gs) {
              std::int64_t off = 0;
              for (const auto& p : held) {
                const std::int64_t w = p.shape().back();
                if (p.requires_grad()) {
                  auto& gp = gs.buffer(p.id(), p.size());
                  for (std::int64_t r = 0; r < outer; ++r)
                    for (std::int64_t j = 0; j < w; ++j)
                      gp[r * w + j] += g[r * total_last + off + j];
                }
                off += w;
              }
            });
  return r;
}

std::vector<Tensor> split_last(Tape& tape, const Tensor& x,
                               std::span<const std::int64_t> sizes) {
  if (sizes.empty()) throw ContractError("split_last: no piece sizes");
  if (x.rank() < 1) throw ShapeError("split_last: rank must be >= 1");
  std::int64_t total = 0;
  for (auto s : sizes) {
    if (s <= 0) throw ContractError("split_last: piece sizes must be positive");
    total += s;
  }
  if (total != x.shape().back()) {
    throw ShapeError("split_last: sizes sum to " + std::to_string(total) +
                     ", last extent is " + std::to_string(x.shape().back()));
  }
  const std::int64_t last = x.shape().back();
  const std::int64_t outer = x.size() / last;
  Shape lead(x.shape().begin(), x.shape().end() - 1);
  std::vector<Tensor> pieces;
  pieces.reserve(sizes.size());
  std::int64_t off = 0;
  for (auto w : sizes) {
    Shape os(lead);
    os.push_back(w);
    std::vector<double> out(static_cast<std::size_t>(outer * w));
    const auto& xv = x.values();
    for (std::int64_t r = 0; r < outer; ++r)
      std::memcpy(out.data() + r * w, xv.data() + r * last + off,
                  static_cast<std::size_t>(w) * sizeof(double));
    Tensor piece = make_result("split_last", os, std::move(out), flows(tape, x));
    const std::int64_t piece_off = off;
    tape.push(piece.requires_grad(), piece,
              [x, outer, last, w, piece_off](const std::vector<double>& g, Gradients& gs) {
                auto& gx = gs.buffer(x.id(), x.size());
                for (std::int64_t r = 0; r < outer; ++r)
                  for (std::int64_t j = 0; j < w; ++j)
                    gx[r * last + piece_off + j] += g[r * w + j];
              });
    pieces.push_back(std::move(piece));
    off += w;
  }
  return pieces;
}

Tensor expand_front(Tape& tape, const Tensor& x, std::int64_t n) {
  if (n <= 0) throw ContractError("expand_front: extent must be positive");
  Shape os;
  os.push_back(n);
  for (auto d : x.shape()) os.push_back(d);
  const std::int64_t block = x.size();
  std::vector<double> out(static_cast<std::size_t>(n * block));
  for (std::int64_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * block, x.values().data(),
                static_cast<std::size_t>(block) * sizeof(double));
  Tensor r = make_result("expand_front", os, std::move(out), flows(tape, x));
  tape.push(r.requires_grad(), r, [x, n, block](const std::vector<double>& g, Gradients& gs) {
    auto& gx = gs.buffer(x.id(), x.size());
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < block; ++j) gx[j] += g[i * block + j];
  });
  return r;
}

Tensor expand_mid(Tape& tape, const Tensor& x, std::int64_t n) {
  if (n <= 0) throw ContractError("expand_mid: extent must be positive");
  if (x.rank() < 1) throw ShapeError("expand_mid: rank must be >= 1");
  const std::int64_t d0 = x.shape()[0];
  const std::int64_t inner = x.size() / d0;
  Shape os;
  os.push_back(d0);
  os.push_back(n);
  for (std::size_t i = 1; i < x.shape().size(); ++i) os.push_back(x.shape()[i]);
  std::vector<double> out(static_cast<std::size_t>(d0 * n * inner));
  for (std::int64_t i = 0; i < d0; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      std::memcpy(out.data() + (i * n + j) * inner, x.values().data() + i * inner,
                  static_cast<std::size_t>(inner) * sizeof(double));
  Tensor r = make_result("expand_mid", os, std::move(out), flows(tape, x));
  tape.push(r.requires_grad(), r,
            [x, d0, n, inner](const std::vector<double>& g, Gradients& gs) {
              auto& gx = gs.buffer(x.id(), x.size());
              for (std::int64_t i = 0; i < d0; ++i)
                for (std::int64_t j = 0; j < n; ++j)
                  for (std::int64_t t = 0; t < inner; ++t)
                    gx[i * inner + t] += g[(i * n + j) * inner + t];
            });
  return r;
}

Tensor add_feature_bias(Tape& tape, const Tensor& x, const Tensor& b) {
  if (x.rank() < 1) throw ShapeError("add_feature_bias: rank must be >= 1");
  if (b.rank() != 1 || b.shape()[0] != x.shape().back()) {
    throw ShapeError("add_feature_bias: bias " + shape_str(b.shape()) +
                     " does not match last extent of " + shape_str(x.shape()));
  }
  const std::int64_t d = b.shape()[0];
  const std::int64_t outer = x.size() / d;
  std::vector<double> out(x.values());
  const auto& bv = b.values();
  for (std::int64_t r = 0; r < outer; ++r)
    for (std::int64_t j = 0; j < d; ++j) out[r * d + j] += bv[j];
  Tensor r = make_result("add_feature_bias", x.shape(), std::move(out), flows(tape, x, b));
  tape.push(r.requires_grad(), r, [x, b, outer, d](const std::vector<double>& g, Gradients& gs) {
    if (x.requires_grad()) {
      auto& gx = gs.buffer(x.id(), x.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = gs.buffer(b.id(), b.size());
      for (std::int64_t r = 0; r < outer; ++r)
        for (std::int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
    }
  });
  return r;
}

Tensor softmax_last(Tape& tape, const Tensor& x) {
  if (x.rank() < 1 || x.shape().back() < 1) {
    throw ShapeError("softmax_last: empty last extent in " + shape_str(x.shape()));
  }
  const std::int64_t n = x.shape().back();
  const std::int64_t rows = x.size() / n;
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  const auto& xv = x.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * n;
    double* dst = out.data() + r * n;
    double mx = src[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, src[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      dst[j] = std::exp(src[j] - mx);
      denom += dst[j];
    }
    for (std::int64_t j = 0; j < n; ++j) dst[j] /= denom;
  }
  Tensor r = make_result("softmax_last", x.shape(), std::move(out), flows(tape, x));
  tape.push(r.requires_grad(), r, [x, r, n, rows](const std::vector<double>& g, Gradients& gs) {
    auto& gx = gs.buffer(x.id(), x.size());
    const auto& y = r.values();
    for (std::int64_t row = 0; row < rows; ++row) {
      const double* yr = y.data() + row * n;
      const double* gr = g.data() + row * n;
      double dot = 0.0;
      for (std::int64_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
      double* gxr = gx.data() + row * n;
      for (std::int64_t j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dot);
    }
  });
  return r;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
  const std::int64_t d = x.shape().back();
  if (gain.rank() != 1 || gain.shape()[0] != d || bias.rank() != 1 || bias.shape()[0] != d) {
    throw ShapeError("layer_norm: gain/bias must be rank-1 of extent " + std::to_string(d));
  }
  const std::int64_t rows = x.size() / d;
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  std::vector<double> xhat(static_cast<std::size_t>(x.size()));
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * d;
    double mu = 0.0;
    for (std::int64_t j = 0; j < d; ++j) mu += src[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double c = src[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (std::int64_t j = 0; j < d; ++j) {
      const double h = (src[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Tensor result =
      make_result("layer_norm", x.shape(), std::move(out), flows(tape, x, gain) || flows(tape, bias));
  tape.push(result.requires_grad(), result,
            [x, gain, bias, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                const std::vector<double>& g, Gradients& gs) {
              const auto& gv = gain.values();
              if (gain.requires_grad()) {
                auto& gg = gs.buffer(gain.id(), gain.size());
                for (std::int64_t r = 0; r < rows; ++r)
                  for (std::int64_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
              }
              if (bias.requires_grad()) {
                auto& gb = gs.buffer(bias.id(), bias.size());
                for (std::int64_t r = 0; r < rows; ++r)
                  for (std::int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
              }
              if (x.requires_grad()) {
                auto& gx = gs.buffer(x.id(), x.size());
                for (std::int64_t r = 0; r < rows; ++r) {
                  const double is = inv_std[static_cast<std::size_t>(r)];
                  // dxhat = g * gain; dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                  double m1 = 0.0, m2 = 0.0;
                  for (std::int64_t j = 0; j < d; ++j) {
                    const double dh = g[r * d + j] * gv[j];
                    m1 += dh;
                    m2 += dh * xhat[r * d + j];
                  }
                  m1 /= static_cast<double>(d);
                  m2 /= static_cast<double>(d);
                  for (std::int64_t j = 0; j < d; ++j) {
                    const double dh = g[r * d + j] * gv[j];
                    gx[r * d + j] += is * (dh - m1 - xhat[r * d + j] * m2);
                  }
                }
              }
            });
  return result;
}

Tensor stop_gradient(const Tensor& x) {
  // Fresh identity on values with no tape record: nothing can flow back.
  return Tensor(x.shape(), x.values());
}

}  // namespace geomae
