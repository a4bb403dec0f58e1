// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "fashionmt/error.hpp"

namespace fashionmt::ad {

namespace {

thread_local bool g_grad_enabled = true;

void check(bool ok, ErrorKind kind, const std::string& msg) {
  if (!ok) fail(kind, msg);
}

void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorKind::kShapeMismatch, std::string(op) + ": shape mismatch " +
                                      shape_str(a) + " vs " + shape_str(b));
}

// Builds the output tensor and, when required, records its backward closure.
Tensor finish(Shape shape, std::vector<double> data,
              std::vector<Tensor> inputs, BackwardFn fn) {
  auto out = std::make_shared<TensorImpl>();
  out->shape = std::move(shape);
  out->data = std::move(data);
  bool record = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs)
      if (t.requires_grad()) record = true;
  }
  if (record) {
    out->requires_grad = true;
    out->is_leaf = false;
    std::vector<std::shared_ptr<TensorImpl>> ins;
    ins.reserve(inputs.size());
    for (auto& t : inputs) ins.push_back(t.shared());
    Tape::active().record(std::move(ins), out, std::move(fn));
  }
  return Tensor(out);
}

// Accumulation target for an input, or nullptr when it takes no gradient.
double* grad_of(TensorImpl* t) {
  if (!t->requires_grad) return nullptr;
  return t->grad_buffer().data();
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// C[M,N] += A[M,K] * B[K,N], all row-major and contiguous.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  MutMap(c, m, n).noalias() += ConstMap(a, m, k) * ConstMap(b, k, n);
}

// C[M,N] += A[M,K] * B^T where B is stored (N,K).
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  MutMap(c, m, n).noalias() += ConstMap(a, m, k) * ConstMap(b, n, k).transpose();
}

// C[K,N] += A^T * B where A is stored (M,K) and B is (M,N).
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  MutMap(c, k, n).noalias() += ConstMap(a, m, k).transpose() * ConstMap(b, m, n);
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void check_axis(const char* op, const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    fail(ErrorKind::kInvalidAxis, std::string(op) + ": invalid axis " +
                                      std::to_string(axis) + " for shape " +
                                      shape_str(a.shape()));
  }
}

enum class Bcast { kSame, kRhsSuffix, kLhsSuffix };

Bcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Bcast::kSame;
  auto is_suffix = [](const Shape& big, const Shape& small) {
    if (small.size() > big.size()) return false;
    const std::size_t off = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i)
      if (big[off + i] != small[i]) return false;
    return true;
  };
  if (numel(b) == 1 || is_suffix(a, b)) {
    if (numel(b) <= numel(a)) return Bcast::kRhsSuffix;
  }
  if (numel(a) == 1 || is_suffix(b, a)) return Bcast::kLhsSuffix;
  shape_error(op, a, b);
  return Bcast::kSame;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::span<double> TensorImpl::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (ad::numel(shape) != data.size()) {
    fail(ErrorKind::kShapeMismatch,
         "Tensor::from: shape " + shape_str(shape) + " holds " +
             std::to_string(ad::numel(shape)) + " values, got " +
             std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

double Tensor::item() const {
  check(numel() == 1, ErrorKind::kShapeMismatch,
        "item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return p_->data[0];
}

void Tensor::set_requires_grad(bool on) {
  p_->requires_grad = on;
  if (!on) p_->grad.clear();
}

std::vector<double> Tensor::grad() const {
  if (p_->grad.empty()) return std::vector<double>(p_->data.size(), 0.0);
  return p_->grad;
}

void Tensor::zero_grad() {
  if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), 0.0);
}

void Tensor::clear_grad() { std::vector<double>().swap(p_->grad); }

std::optional<std::int64_t> Tensor::tape_id() const {
  if (p_->tape_id < 0) return std::nullopt;
  return p_->tape_id;
}

Tensor Tensor::detach() const {
  return from(p_->shape, p_->data, false);
}

// ---- Tape ---------------------------------------------------------------

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::vector<std::shared_ptr<TensorImpl>> inputs,
                  const std::shared_ptr<TensorImpl>& output, BackwardFn fn) {
  if (consumed_) reset();
  output->tape_id = static_cast<std::int64_t>(entries_.size());
  output->tape_epoch = epoch_;
  entries_.push_back({std::move(inputs), output, std::move(fn)});
}

void Tape::reset() {
  entries_.clear();
  ++epoch_;
  consumed_ = false;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Tensor& loss) {
  check(loss.numel() == 1, ErrorKind::kShapeMismatch,
        "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  Tape& tape = Tape::active();
  TensorImpl* root = loss.impl();
  if (root->is_leaf) {
    if (root->requires_grad) root->grad_buffer()[0] += 1.0;
    return;
  }
  if (tape.consumed_ || root->tape_epoch != tape.epoch_ || root->tape_id < 0 ||
      static_cast<std::size_t>(root->tape_id) >= tape.entries_.size()) {
    fail(ErrorKind::kTapeState,
         "backward: loss is not on the active tape (already consumed?)");
  }
  root->grad_buffer()[0] += 1.0;
  for (std::int64_t i = root->tape_id; i >= 0; --i) {
    Tape::Entry& e = tape.entries_[static_cast<std::size_t>(i)];
    if (e.output->grad.empty()) continue;  // unreachable from loss
    e.backward(*e.output);
  }
  tape.entries_.clear();
  tape.consumed_ = true;
}

// ---- primitives ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
  const std::size_t k = a.shape().back();
  if (b.rank() == 2) {
    if (b.dim(0) != k) shape_error("matmul", a.shape(), b.shape());
    const std::size_t n = b.dim(1);
    const std::size_t m = a.numel() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    return finish(std::move(out_shape), std::move(out), {a, b},
                  [ai, bi, m, k, n](TensorImpl& o) {
                    if (double* ga = grad_of(ai))
                      gemm_nt(o.grad.data(), bi->data.data(), ga, m, n, k);
                    if (double* gb = grad_of(bi))
                      gemm_tn(ai->data.data(), o.grad.data(), gb, m, k, n);
                  });
  }
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || b.dim(1) != k)
    shape_error("matmul", a.shape(), b.shape());
  const std::size_t batch = a.dim(0), m = a.dim(1), n = b.dim(2);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t s = 0; s < batch; ++s)
    gemm_nn(a.data().data() + s * m * k, b.data().data() + s * k * n,
            out.data() + s * m * n, m, k, n);
  TensorImpl* ai = a.impl();
  TensorImpl* bi = b.impl();
  return finish({batch, m, n}, std::move(out), {a, b},
                [ai, bi, batch, m, k, n](TensorImpl& o) {
                  double* ga = grad_of(ai);
                  double* gb = grad_of(bi);
                  for (std::size_t s = 0; s < batch; ++s) {
                    const double* go = o.grad.data() + s * m * n;
                    if (ga)
                      gemm_nt(go, bi->data.data() + s * k * n, ga + s * m * k,
                              m, n, k);
                    if (gb)
                      gemm_tn(ai->data.data() + s * m * k, go, gb + s * k * n,
                              m, k, n);
                  }
                });
}

namespace {

enum class BinOp { kAdd, kSub, kMul };

// Applies f(i_big, i_small) over a suffix broadcast: the small operand
// repeats every `ns` elements of the big one.
template <typename F>
void for_broadcast(std::size_t n, std::size_t ns, F f) {
  for (std::size_t off = 0; off < n; off += ns)
    for (std::size_t j = 0; j < ns; ++j) f(off + j, j);
}

Tensor binary(const char* name, BinOp op, const Tensor& a, const Tensor& b) {
  const Bcast kind = broadcast_kind(name, a.shape(), b.shape());
  const Tensor& big = kind == Bcast::kLhsSuffix ? b : a;
  const std::size_t n = big.numel();
  const std::size_t na = a.numel(), nb = b.numel();
  const bool a_big = na == n;
  const std::size_t ns = a_big ? nb : na;
  std::vector<double> out(n);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* o = out.data();
  // x = a value, y = b value at broadcast position (ib, is).
  auto run = [&](auto fn) {
    if (a_big)
      for_broadcast(n, ns, [&](std::size_t i, std::size_t j) { o[i] = fn(ad[i], bd[j]); });
    else
      for_broadcast(n, ns, [&](std::size_t i, std::size_t j) { o[i] = fn(ad[j], bd[i]); });
  };
  switch (op) {
    case BinOp::kAdd: run([](double x, double y) { return x + y; }); break;
    case BinOp::kSub: run([](double x, double y) { return x - y; }); break;
    case BinOp::kMul: run([](double x, double y) { return x * y; }); break;
  }
  TensorImpl* ai = a.impl();
  TensorImpl* bi = b.impl();
  return finish(big.shape(), std::move(out), {a, b},
                [ai, bi, op, n, ns, a_big](TensorImpl& o) {
                  const double* g = o.grad.data();
                  const double sign_b = op == BinOp::kSub ? -1.0 : 1.0;
                  const double* adat = ai->data.data();
                  const double* bdat = bi->data.data();
                  if (double* ga = grad_of(ai)) {
                    if (op == BinOp::kMul) {
                      if (a_big)
                        for_broadcast(n, ns, [&](std::size_t i, std::size_t j) { ga[i] += g[i] * bdat[j]; });
                      else
                        for_broadcast(n, ns, [&](std::size_t i, std::size_t j) { ga[j] += g[i] * bdat[i]; });
                    } else {
                      if (a_big)
                        for_broadcast(n, ns, [&](std::size_t i, std::size_t) { ga[i] += g[i]; });
                      else
                        for_broadcast(n, ns, [&](std::size_t i, std::size_t j) { ga[j] += g[i]; });
                    }
                  }
                  if (double* gb = grad_of(bi)) {
                    if (op == BinOp::kMul) {
                      if (a_big)
                        for_broadcast(n, ns, [&](std::size_t i, std::size_t j) { gb[j] += g[i] * adat[i]; });
                      else
                        for_broadcast(n, ns, [&](std::size_t i, std::size_t j) { gb[i] += g[i] * adat[j]; });
                    } else {
                      if (a_big)
                        for_broadcast(n, ns, [&](std::size_t i, std::size_t j) { gb[j] += sign_b * g[i]; });
                      else
                        for_broadcast(n, ns, [&](std::size_t i, std::size_t) { gb[i] += sign_b * g[i]; });
                    }
                  }
                });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", BinOp::kAdd, a, b);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", BinOp::kSub, a, b);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", BinOp::kMul, a, b);
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= c;
  TensorImpl* ai = a.impl();
  return finish(a.shape(), std::move(out), {a}, [ai, c](TensorImpl& o) {
    double* ga = grad_of(ai);
    for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += c * o.grad[i];
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
  TensorImpl* ai = a.impl();
  return finish(a.shape(), std::move(out), {a}, [ai](TensorImpl& o) {
    double* ga = grad_of(ai);
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      ga[i] += o.grad[i] * o.data[i];
  });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(a[i] > 0.0)) fail(ErrorKind::kInvalidArgument, "log: non-positive input");
    out[i] = std::log(a[i]);
  }
  TensorImpl* ai = a.impl();
  return finish(a.shape(), std::move(out), {a}, [ai](TensorImpl& o) {
    double* ga = grad_of(ai);
    for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] / ai->data[i];
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) {
    fail(ErrorKind::kInvalidAxis,
         "transpose: needs rank >= 2, got " + shape_str(a.shape()));
  }
  std::vector<std::size_t> perm(a.rank());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[a.rank() - 1], perm[a.rank() - 2]);
  return permute(a, perm);
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  const std::size_t r = a.rank();
  if (perm.size() != r) {
    fail(ErrorKind::kInvalidAxis, "permute: perm length " +
                                      std::to_string(perm.size()) +
                                      " for shape " + shape_str(a.shape()));
  }
  std::vector<bool> seen(r, false);
  for (std::size_t p : perm) {
    if (p >= r || seen[p])
      fail(ErrorKind::kInvalidAxis, "permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.dim(perm[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.dim(i);
  // src index for each output element, reused by backward
  const std::size_t n = a.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[perm[i]];
    (*src)[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[(*src)[i]];
  TensorImpl* ai = a.impl();
  return finish(std::move(out_shape), std::move(out), {a},
                [ai, src](TensorImpl& o) {
                  double* ga = grad_of(ai);
                  for (std::size_t i = 0; i < o.grad.size(); ++i)
                    ga[(*src)[i]] += o.grad[i];
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  std::vector<double> out(a.data().begin(), a.data().end());
  TensorImpl* ai = a.impl();
  return finish(std::move(shape), std::move(out), {a}, [ai](TensorImpl& o) {
    double* ga = grad_of(ai);
    for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty())
    fail(ErrorKind::kInvalidArgument, "concat: no inputs");
  check_axis("concat", parts[0], axis);
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) shape_error("concat", parts[0].shape(), p.shape());
    for (std::size_t i = 0; i < p.rank(); ++i)
      if (i != axis && p.dim(i) != parts[0].dim(i))
        shape_error("concat", parts[0].shape(), p.shape());
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit os = split_axis(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis) * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(p.data().data() + o * len, len,
                  out.data() + o * os.n * os.inner + off * os.inner);
    off += p.dim(axis);
  }
  std::vector<TensorImpl*> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return finish(std::move(out_shape), std::move(out), parts,
                [impls, offsets, os, axis](TensorImpl& o) {
                  for (std::size_t t = 0; t < impls.size(); ++t) {
                    double* g = grad_of(impls[t]);
                    if (!g) continue;
                    const std::size_t len = impls[t]->shape[axis] * os.inner;
                    for (std::size_t r = 0; r < os.outer; ++r) {
                      const double* src = o.grad.data() + r * os.n * os.inner +
                                          offsets[t] * os.inner;
                      for (std::size_t i = 0; i < len; ++i) g[r * len + i] += src[i];
                    }
                  }
                });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin,
             std::size_t end) {
  check_axis("slice", a, axis);
  if (begin > end || end > a.dim(axis)) {
    fail(ErrorKind::kInvalidArgument,
         "slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
             ") out of bounds for shape " + shape_str(a.shape()));
  }
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t len = (end - begin) * s.inner;
  std::vector<double> out(s.outer * len);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(a.data().data() + o * s.n * s.inner + begin * s.inner, len,
                out.data() + o * len);
  TensorImpl* ai = a.impl();
  return finish(std::move(out_shape), std::move(out), {a},
                [ai, s, begin, len](TensorImpl& o) {
                  double* g = grad_of(ai);
                  for (std::size_t r = 0; r < s.outer; ++r)
                    for (std::size_t i = 0; i < len; ++i)
                      g[r * s.n * s.inner + begin * s.inner + i] +=
                          o.grad[r * len + i];
                });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  check_axis("sum", a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += a[(o * s.n + j) * s.inner + i];
  TensorImpl* ai = a.impl();
  return finish(std::move(out_shape), std::move(out), {a},
                [ai, s](TensorImpl& o) {
                  double* g = grad_of(ai);
                  for (std::size_t r = 0; r < s.outer; ++r)
                    for (std::size_t j = 0; j < s.n; ++j)
                      for (std::size_t i = 0; i < s.inner; ++i)
                        g[(r * s.n + j) * s.inner + i] += o.grad[r * s.inner + i];
                });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  check_axis("mean", a, axis);
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  TensorImpl* ai = a.impl();
  return finish({}, {s}, {a}, [ai](TensorImpl& o) {
    double* g = grad_of(ai);
    const double go = o.grad[0];
    for (std::size_t i = 0; i < ai->data.size(); ++i) g[i] += go;
  });
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  check_axis("softmax", a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  std::vector<double> out(a.numel());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, a[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(a[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= z;
    }
  TensorImpl* ai = a.impl();
  return finish(a.shape(), std::move(out), {a}, [ai, s](TensorImpl& o) {
    double* g = grad_of(ai);
    for (std::size_t r = 0; r < s.outer; ++r)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = r * s.n * s.inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j)
          dot += o.grad[base + j * s.inner] * o.data[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = base + j * s.inner;
          g[k] += o.data[k] * (o.grad[k] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  check_axis("log_softmax", a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  std::vector<double> out(a.numel());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, a[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) z += std::exp(a[base + j * s.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::size_t j = 0; j < s.n; ++j)
        out[base + j * s.inner] = a[base + j * s.inner] - lz;
    }
  TensorImpl* ai = a.impl();
  return finish(a.shape(), std::move(out), {a}, [ai, s](TensorImpl& o) {
    double* g = grad_of(ai);
    for (std::size_t r = 0; r < s.outer; ++r)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = r * s.n * s.inner + i;
        double gs = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) gs += o.grad[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = base + j * s.inner;
          g[k] += o.grad[k] - std::exp(o.data[k]) * gs;
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() < 1) shape_error("layer_norm", x.shape(), gain.shape());
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d)
    shape_error("layer_norm", x.shape(), gain.shape());
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  // normalized values and inverse std, saved for backward
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gain[j] + bias[j];
    }
  }
  TensorImpl* xi = x.impl();
  TensorImpl* gi = gain.impl();
  TensorImpl* bi = bias.impl();
  return finish(x.shape(), std::move(out), {x, gain, bias},
                [xi, gi, bi, xhat, inv_std, rows, d](TensorImpl& o) {
                  double* gx = grad_of(xi);
                  double* gg = grad_of(gi);
                  double* gb = grad_of(bi);
                  const double dn = static_cast<double>(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* go = o.grad.data() + r * d;
                    const double* h = xhat->data() + r * d;
                    if (gg)
                      for (std::size_t j = 0; j < d; ++j) gg[j] += go[j] * h[j];
                    if (gb)
                      for (std::size_t j = 0; j < d; ++j) gb[j] += go[j];
                    if (gx) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double gh = go[j] * gi->data[j];
                        s1 += gh;
                        s2 += gh * h[j];
                      }
                      const double is = (*inv_std)[r];
                      for (std::size_t j = 0; j < d; ++j) {
                        const double gh = go[j] * gi->data[j];
                        gx[r * d + j] += is * (gh - s1 / dn - h[j] * s2 / dn);
                      }
                    }
                  }
                });
}

Tensor quick_gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = v / (1.0 + std::exp(-kQuickGeluAlpha * v));
  }
  TensorImpl* xi = x.impl();
  return finish(x.shape(), std::move(out), {x}, [xi](TensorImpl& o) {
    double* g = grad_of(xi);
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const double v = xi->data[i];
      const double sg = 1.0 / (1.0 + std::exp(-kQuickGeluAlpha * v));
      g[i] += o.grad[i] * (sg + v * kQuickGeluAlpha * sg * (1.0 - sg));
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2)
    shape_error("embedding", table.shape(), {ids.size()});
  const std::size_t v = table.dim(0), d = table.dim(1);
  auto rows = std::make_shared<std::vector<std::size_t>>(ids.begin(), ids.end());
  std::vector<double> out(rows->size() * d);
  for (std::size_t r = 0; r < rows->size(); ++r) {
    const std::size_t id = (*rows)[r];
    if (id >= v) {
      fail(ErrorKind::kInvalidArgument, "embedding: id " + std::to_string(id) +
                                            " out of range for table of " +
                                            std::to_string(v) + " rows");
    }
    std::copy_n(table.data().data() + id * d, d, out.data() + r * d);
  }
  TensorImpl* ti = table.impl();
  return finish({rows->size(), d}, std::move(out), {table},
                [ti, rows, d](TensorImpl& o) {
                  double* g = grad_of(ti);
                  for (std::size_t r = 0; r < rows->size(); ++r)
                    for (std::size_t j = 0; j < d; ++j)
                      g[(*rows)[r] * d + j] += o.grad[r * d + j];
                });
}

Tensor masked_fill(const Tensor& logits, std::span<const double> mask) {
  if (mask.size() != logits.numel())
    shape_error("masked_fill", logits.shape(), {mask.size()});
  std::vector<double> out(logits.data().begin(), logits.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += mask[i];
  TensorImpl* li = logits.impl();
  return finish(logits.shape(), std::move(out), {logits}, [li](TensorImpl& o) {
    double* g = grad_of(li);
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> idx) {
  if (a.rank() != 2 || idx.size() != a.dim(0))
    shape_error("pick", a.shape(), {idx.size()});
  const std::size_t c = a.dim(1);
  auto cols = std::make_shared<std::vector<std::size_t>>(idx.begin(), idx.end());
  std::vector<double> out(cols->size());
  for (std::size_t r = 0; r < cols->size(); ++r) {
    if ((*cols)[r] >= c) {
      fail(ErrorKind::kInvalidArgument,
           "pick: index " + std::to_string((*cols)[r]) + " out of range " +
               std::to_string(c));
    }
    out[r] = a[r * c + (*cols)[r]];
  }
  TensorImpl* ai = a.impl();
  return finish({cols->size()}, std::move(out), {a},
                [ai, cols, c](TensorImpl& o) {
                  double* g = grad_of(ai);
                  for (std::size_t r = 0; r < cols->size(); ++r)
                    g[r * c + (*cols)[r]] += o.grad[r];
                });
}

Tensor l2_normalize(const Tensor& x) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[r * d + j] * x[r * d + j];
    const double n = std::sqrt(s);
    if (!(n > 0.0))
      fail(ErrorKind::kNonFinite, "l2_normalize: zero or non-finite norm");
    (*norms)[r] = n;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] / n;
  }
  TensorImpl* xi = x.impl();
  return finish(x.shape(), std::move(out), {x},
                [xi, norms, rows, d](TensorImpl& o) {
                  double* g = grad_of(xi);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* y = o.data.data() + r * d;
                    const double* go = o.grad.data() + r * d;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < d; ++j) dot += go[j] * y[j];
                    const double n = (*norms)[r];
                    for (std::size_t j = 0; j < d; ++j)
                      g[r * d + j] += (go[j] - y[j] * dot) / n;
                  }
                });
}

// ---- gradient checking --------------------------------------------------

double grad_check_params(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double h) {
  std::vector<Tensor> ps = params;
  std::vector<bool> prev;
  for (auto& p : ps) {
    prev.push_back(p.requires_grad());
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tape::active().reset();
  const Tensor y = f();
  if (!std::isfinite(y.item()))
    fail(ErrorKind::kNonFinite, "grad_check: f(x) is not finite");
  backward(y);
  double worst = 0.0;
  for (auto& p : ps) {
    const std::vector<double> analytic = p.grad();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      double& xi = p.mutable_data()[i];
      const double orig = xi;
      double fp, fm;
      {
        NoGradGuard ng;
        xi = orig + h;
        fp = f().item();
        xi = orig - h;
        fm = f().item();
      }
      xi = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err =
          std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ps[i].zero_grad();
    ps[i].set_requires_grad(prev[i]);
  }
  return worst;
}

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
  return grad_check_params([&] { return f(x); }, {x}, h);
}

}  // namespace fashionmt::ad
