#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "stdn/tensor.hpp"

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// Every op records its parents and a closure that pushes the node's gradient
// into the parents. Nodes that do not depend on a trainable leaf carry no
// closure and no parents, so evaluation-only graphs cost nothing extra.
namespace stdn::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node>& node() const { return node_; }

  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Tensor value) { return Var(std::move(value), false); }
inline Var parameter(Tensor value) { return Var(std::move(value), true); }

/// While alive, new ops record no parents or closures (evaluation mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op result. The closure receives the result node; parents are
/// reachable through node.parents in the order given here.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Back-propagates from a scalar root, accumulating into every reachable
/// grad buffer.
void backward(const Var& root);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double c);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var log_eps(const Var& x, double eps);

// Broadcast over trailing dimensions: s.shape() must be a prefix of x.shape().
Var mul_prefix(const Var& x, const Var& s);
Var div_prefix(const Var& x, const Var& s);

Var sum(const Var& x);
Var mean(const Var& x);
Var sum_axis(const Var& x, int axis);
Var mean_axis(const Var& x, int axis);
Var softmax(const Var& x, int axis);

Var reshape(const Var& x, Shape shape);
Var concat(std::span<const Var> parts, int axis);
Var index_select(const Var& x, int axis, std::span<const int> indices);

/// x[M,K] * w[K,N] + b[N]; b may be undefined.
Var linear(const Var& x, const Var& w, const Var& b);
/// Batched product: a[B,M,K] * b[B,K,N], or a[B,K,M]^T * b[B,K,N] when transpose_a.
Var bmm(const Var& a, const Var& b, bool transpose_a);
/// NHWC convolution with zero padding. w is [kh,kw,Cin,Cout], b is [Cout] or undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
/// Group normalisation over (H, W, C/groups) per sample; gamma/beta are [C].
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps);
/// Euclidean distances between points[F,P,D] and centers[F,K,D], shape [F,P,K].
Var pairwise_distance(const Var& points, const Var& centers);
/// Mean softmax cross-entropy of logits[M,C] against integer labels.
Var cross_entropy(const Var& logits, std::span<const int> labels);

}  // namespace stdn::ag
