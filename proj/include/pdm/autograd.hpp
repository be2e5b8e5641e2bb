#pragma once

// Tape-free reverse-mode autodiff over Tensor values. Each op allocates a
// Node holding its value, its parents and a closure that pushes the node's
// gradient into the parents. backward() walks the graph in reverse
// topological order. Leaf gradients accumulate across backward() calls,
// which is what gradient accumulation relies on.

#include <functional>
#include <memory>
#include <vector>

#include "pdm/tensor.hpp"

namespace pdm {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var leaf(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Gradient accumulated by backward(); zeros if nothing flowed here yet.
  const Tensor& grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// Seeds d(root)/d(root) = 1 (root must hold one element) and propagates.
void backward(const Var& root);

bool grad_enabled();

/// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace ag {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

// b broadcasts against a: same rank, every b dim is 1 or equal to a's.
Var add_bcast(const Var& a, const Var& b);
Var mul_bcast(const Var& a, const Var& b);
Var div_bcast(const Var& a, const Var& b);

Var silu(const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);
Var elu_plus_one(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);

/// x (N,Cin,H,W), w (Cout,Cin,k,k), optional bias (Cout). Same padding.
Var conv2d(const Var& x, const Var& w, const Var& bias);
/// Group-normalizes x (N,C,...) without affine terms.
Var group_norm(const Var& x, std::int64_t groups, double eps);
Var avg_pool2(const Var& x);
Var upsample2(const Var& x);

/// Batched product of 3-D operands; a leading dim of 1 broadcasts.
Var bmm(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
/// 2-D matrix product.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
Var softmax_last(const Var& a);

/// w / sigma with sigma = u^T W v (u, v treated as constants); w viewed as
/// a (u.size() x v.size()) matrix.
Var spectral_divide(const Var& w, const Tensor& u, const Tensor& v, double eps);

}  // namespace ag
}  // namespace pdm
