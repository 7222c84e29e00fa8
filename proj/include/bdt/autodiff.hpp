#pragma once

#include "bdt/common.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

// Reverse-mode automatic differentiation over dense matrices (rank <= 2;
// vectors are n x 1, scalars 1 x 1). The graph is rebuilt on every forward
// pass: each op allocates a node holding its value, its parents and a
// closure that routes gradients to those parents. backward() seeds a 1 x 1
// loss with 1 and replays the recorded graph once in reverse topological
// order, accumulating (+=) into node gradients. Leaf gradients persist until
// zero_grad(), so a second backward() accumulates twice; interior gradients
// are per-pass scratch.
namespace bdt::ad {

struct Node {
  Mat value;
  Mat grad;  // empty until first accumulation; Node::grad_ref() materializes
  bool requires_grad = false;
  std::uint64_t id = 0;  // creation order; parents always precede children
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node& self)> backprop;

  Mat& grad_ref() {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  // Leaf node. requires_grad=true marks a trainable parameter.
  explicit Tensor(const Mat& value, bool requires_grad = false);
  Tensor(Eigen::Index rows, Eigen::Index cols, double fill,
         bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Mat& value() const { return node_->value; }
  Mat& value_mut() { return node_->value; }  // optimizer in-place updates
  const Mat& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  std::uint64_t id() const { return node_->id; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Eigen::Index size() const { return node_->value.size(); }
  double item() const;  // value of a 1 x 1 tensor

  void zero_grad() { node_->grad = Mat::Zero(rows(), cols()); }
  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// While a guard is alive, new ops record no parents and no closures; the
// forward values are still computed. Used for evaluation rollouts.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};
bool grad_enabled();

Tensor constant(const Mat& value);
Tensor scalar(double v);

// Matrix product. operator* follows the Eigen convention (matmul);
// elementwise products are spelled cwise_mul.
Tensor matmul(const Tensor& a, const Tensor& b);
inline Tensor operator*(const Tensor& a, const Tensor& b) { return matmul(a, b); }

Tensor add(const Tensor& a, const Tensor& b);  // equal shapes only
Tensor sub(const Tensor& a, const Tensor& b);
Tensor cwise_mul(const Tensor& a, const Tensor& b);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
// True division (not multiplication by the reciprocal): rounding must match
// scalar code that divides, e.g. the closed-form cost functions.
Tensor div_scalar(const Tensor& a, double c);
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator-(double c, const Tensor& a) {
  return add_scalar(mul_scalar(a, -1.0), c);
}
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator/(const Tensor& a, double c) { return mul_scalar(a, 1.0 / c); }
inline Tensor operator-(const Tensor& a) { return mul_scalar(a, -1.0); }

// x [n x d] plus a [1 x d] row vector added to every row. Broadcasting is
// otherwise restricted to scalars and equal shapes, so the one broadcast the
// models need (bias add) is its own op.
Tensor add_rowwise(const Tensor& x, const Tensor& row);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// max(x, c) elementwise; subgradient 0 where x == c.
Tensor max_with_scalar(const Tensor& x, double c);

// axis=1: each row sums to one; axis=0: each column. Max-subtracted.
Tensor softmax(const Tensor& x, int axis);

Tensor sum(const Tensor& x);   // 1 x 1
Tensor mean(const Tensor& x);  // 1 x 1

Tensor transpose(const Tensor& x);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor rows(const Tensor& x, Eigen::Index start, Eigen::Index n);
Tensor cols(const Tensor& x, Eigen::Index start, Eigen::Index n);
inline Tensor row(const Tensor& x, Eigen::Index i) { return rows(x, i, 1); }

// Row-wise layer normalization with learnable gain/bias [1 x d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Inverted dropout. Identity when !training or rate == 0 (consumes no rng
// draws); otherwise consumes one draw per element in row-major order.
Tensor dropout(const Tensor& x, double rate, RngStream& rng, bool training);

// Straight-through Bernoulli: forward samples b_ij ~ Bernoulli(q_ij) in
// {0,1} (one draw per element, row-major order); backward passes gradients
// through unchanged, as if the op were the identity.
Tensor bernoulli_straight_through(const Tensor& q, RngStream& rng);

// Seeds a 1 x 1 loss with gradient 1 and accumulates gradients into every
// reachable node with requires_grad. Visits each node exactly once.
void backward(const Tensor& loss);

// Reverse-topological visit order used by backward(); exposed for graph
// invariant tests.
std::vector<std::uint64_t> backward_order_ids(const Tensor& root);

}  // namespace bdt::ad
