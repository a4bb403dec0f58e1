// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal reverse-mode automatic differentiation over dense float64 tensors.
//
// Every differentiable primitive records itself on the calling thread's tape
// when at least one input requires a gradient and grad mode is enabled.
// backward() walks the tape in reverse once and then consumes it; the next
// recorded op starts a fresh tape. Leaf gradients accumulate until
// zero_grad() is called.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fashionmt::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // lazily sized to data
  bool requires_grad = false;
  bool is_leaf = true;
  std::int64_t tape_id = -1;
  std::uint64_t tape_epoch = 0;
  std::string name;

  std::span<double> grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : p_(std::move(impl)) {}

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const { return p_->shape; }
  std::size_t rank() const { return p_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return p_->shape.at(axis); }
  std::size_t numel() const { return p_->data.size(); }

  std::span<const double> data() const { return p_->data; }
  // Writable view. Only legal on tensors that are not yet consumed by an op
  // on a live tape (parameters between steps, inputs before the forward).
  std::span<double> mutable_data() { return p_->data; }
  double item() const;
  double operator[](std::size_t i) const { return p_->data[i]; }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !p_->grad.empty(); }
  // Gradient; all zeros when nothing has been accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad() { return p_->grad_buffer(); }
  void zero_grad();
  // Drops the gradient buffer; has_grad() is false until the next backward
  // reaches this tensor.
  void clear_grad();

  std::optional<std::int64_t> tape_id() const;
  const std::string& name() const { return p_->name; }
  void set_name(std::string name) { p_->name = std::move(name); }

  // Deep copy of values, never attached to any tape.
  Tensor detach() const;

  TensorImpl* impl() const { return p_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const { return p_; }

 private:
  std::shared_ptr<TensorImpl> p_;
};

// Backward closure: reads out.grad and accumulates into its inputs.
using BackwardFn = std::function<void(TensorImpl& out)>;

class Tape {
 public:
  struct Entry {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };

  static Tape& active();

  void record(std::vector<std::shared_ptr<TensorImpl>> inputs,
              const std::shared_ptr<TensorImpl>& output, BackwardFn fn);
  void reset();
  std::size_t size() const { return entries_.size(); }
  std::uint64_t epoch() const { return epoch_; }
  bool consumed() const { return consumed_; }

 private:
  friend void backward(const Tensor& loss);

  std::vector<Entry> entries_;
  std::uint64_t epoch_ = 1;
  bool consumed_ = false;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Populates .grad on every requires_grad leaf reachable from the scalar loss
// and consumes the tape.
void backward(const Tensor& loss);

// ---- primitives ---------------------------------------------------------

// (..., M, K) x (K, N) or batched (B, M, K) x (B, K, N).
Tensor matmul(const Tensor& a, const Tensor& b);
// Elementwise with suffix broadcasting: the smaller operand's shape must equal
// the trailing dims of the larger one (a scalar broadcasts everywhere).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin,
             std::size_t end);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
// Normalizes over the last axis; zero-variance rows map to zeros before the
// affine gain/bias.
inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);
// x * sigmoid(1.702 x)
inline constexpr double kQuickGeluAlpha = 1.702;
Tensor quick_gelu(const Tensor& x);
// Row gather from a (V, D) table; output shape (ids.size(), D).
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);
// Adds a constant additive mask (same shape as logits). Masked entries carry
// kMaskValue, which underflows to an exact zero after softmax.
inline constexpr double kMaskValue = -1e30;
Tensor masked_fill(const Tensor& logits, std::span<const double> mask);
// Selects a[r, idx[r]] for each row of a 2-D tensor.
Tensor pick(const Tensor& a, std::span<const std::size_t> idx);
// Divides every last-axis vector by its L2 norm.
Tensor l2_normalize(const Tensor& x);

// ---- gradient checking --------------------------------------------------

using ScalarFn = std::function<Tensor(const Tensor&)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

// Same measure over several parameters at once; f closes over them.
double grad_check_params(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double h = 1e-5);

}  // namespace fashionmt::ad
