#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "osdsr/tensor.hpp"

// Tape-free reverse-mode differentiation over Tensor values. Each op records
// its parents and a backward closure; backward() walks the graph in reverse
// topological order. Nodes that do not require gradients are never visited.
namespace osdsr::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Lazily allocates grad with the value's shape.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  // Direct mutation is for optimizers and parameter loading on leaves only.
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() {
    if (node_) node_->grad = Tensor();
  }
  const Shape& shape() const { return node_->value.shape(); }
  double item() const { return node_->value[0]; }

  const std::shared_ptr<Node>& node() const noexcept { return node_; }
  bool same_node(const Var& other) const noexcept { return node_ == other.node_; }

 private:
  friend Var make_result(Tensor, std::vector<Var>, std::function<void(Node&)>);
  std::shared_ptr<Node> node_;
};

// Builds an op result whose requires_grad is the OR of its inputs'.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

inline Var constant(Tensor value) { return Var(std::move(value), false); }
inline Var detach(const Var& v) { return Var(v.value(), false); }

// Seeds d(root)/d(root) = 1 for a single-element root and accumulates into leaves.
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var affine(const Var& a, double mul, double shift);
Var square(const Var& a);
Var sqrt(const Var& a);  // x >= 0; derivative taken as 0 at exactly 0
Var reciprocal(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
// Clamp to [0,1]; gradient passes where the input lies inside the interval.
Var clamp01(const Var& a);

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);

// ---- shape ----
Var reshape(const Var& a, Shape shape);
Var concat_channels(const Var& a, const Var& b);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);  // (M,K) x (K,N)
// x: (B, in), weight: (out, in), bias: (out) or undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);

// ---- image ops (rank-4, NCHW) ----
// weight: (out, in*k*k); bias: (out) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int kernel, int stride, int pad);
Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
Var global_avg_pool(const Var& x);                 // -> (B, C)
Var add_channel_bias(const Var& x, const Var& v);  // v: (B, C)
// Half-pixel-centre bilinear resampling, edge-clamped.
Var bilinear_resize(const Var& x, int out_h, int out_w);
// Unit L2 norm across channels at each pixel: x / sqrt(sum_c x^2 + eps).
Var normalize_channels(const Var& x, double eps);

// ---- row ops ----
Var softmax_rows(const Var& x);                  // (B, N)
Var cosine_rows(const Var& a, const Var& b);     // (B, D) x (B, D) -> (B)
Var scale_rows(const Var& x, const Var& s);      // x: (B, ...), s: (B)

// Forward value is `hard`; the backward pass hands the incoming gradient to
// `soft` unchanged. Shapes must agree.
Var straight_through(Tensor hard, const Var& soft);

}  // namespace osdsr::ag
