#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "mdeh/tensor.hpp"

namespace mdeh {

enum class EwKind { Add, Sub, Mul, Div, Tanh, Sigmoid, Clip, Square, Abs, Reciprocal, Sqrt };
enum class ReduceKind { Sum, Mean, Max };

/// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape for one forward/backward pass. Nodes are recorded in
/// topological (creation) order; backward() sweeps them once in reverse.
/// Leaf gradients accumulate across backward() calls; intermediate gradients
/// are reset per sweep. A tape is single-threaded by contract.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding external data. requires_grad leaves receive gradients.
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant_scalar(float v) { return leaf(Tensor::scalar(v), false); }

  const Tensor& value(Var v) const;
  /// Gradient of a node after backward(); zero tensor if untouched.
  const Tensor& grad(Var v);
  bool requires_grad(Var v) const;

  // --- elementwise ---------------------------------------------------------
  /// Binary kinds need b; unary kinds must omit it. Shapes must match or one
  /// operand must be a one-element scalar.
  Var elementwise(EwKind kind, Var a, std::optional<Var> b = std::nullopt);
  Var add(Var a, Var b) { return elementwise(EwKind::Add, a, b); }
  Var sub(Var a, Var b) { return elementwise(EwKind::Sub, a, b); }
  Var mul(Var a, Var b) { return elementwise(EwKind::Mul, a, b); }
  Var div(Var a, Var b) { return elementwise(EwKind::Div, a, b); }
  Var tanh(Var a) { return elementwise(EwKind::Tanh, a); }
  Var sigmoid(Var a) { return elementwise(EwKind::Sigmoid, a); }
  Var square(Var a) { return elementwise(EwKind::Square, a); }
  Var abs(Var a) { return elementwise(EwKind::Abs, a); }
  Var reciprocal(Var a) { return elementwise(EwKind::Reciprocal, a); }
  Var sqrt(Var a) { return elementwise(EwKind::Sqrt, a); }
  /// Backward passes gradient only strictly inside (lo, hi).
  Var clip(Var a, float lo, float hi);
  Var add_scalar(Var a, float s) { return add(a, constant_scalar(s)); }
  Var mul_scalar(Var a, float s) { return mul(a, constant_scalar(s)); }
  /// leaky_relu(x) = max(x, slope*x), composed from primitive kinds.
  Var leaky_relu(Var a, float slope = 0.01f);

  // --- structure / convolution --------------------------------------------
  Var conv2d(Var input, Var weights, std::optional<Var> bias, int stride, int pad);
  /// grid: (N,2,Ho,Wo) of (u,v) pixel coordinates; border-clamped bilinear.
  Var grid_sample_bilinear(Var image, Var grid);
  Var reduce(ReduceKind kind, Var a, std::vector<int> axes);
  Var reduce_all(ReduceKind kind, Var a);
  Var sum(Var a) { return reduce_all(ReduceKind::Sum, a); }
  Var mean(Var a) { return reduce_all(ReduceKind::Mean, a); }
  Var upsample2x(Var a);
  Var concat_ch(Var a, Var b);
  Var box3x3(Var a);
  Var linear(Var x, Var w, std::optional<Var> bias);

  /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
  /// calls; call zero_grad() to reset them.
  void backward(Var loss);
  void zero_grad();

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;          // materialized on demand
    bool grad_live = false;
    bool needs_grad = false;
    bool is_leaf = false;
    std::function<void(Tape&)> back;  // empty for leaves
  };

  Var push(Tensor value, bool needs_grad, bool is_leaf, std::function<void(Tape&)> back);
  Tensor& grad_buf(int id);
  void accumulate(int id, const Tensor& g);

  std::vector<Node> nodes_;
  Tensor zero_scalar_ = Tensor::scalar(0.0f);

  friend struct TapeAccess;
};

/// Finite-difference gradient of loss_fn w.r.t. x (central differences).
/// loss_fn must be a pure function of the tensor contents.
Tensor finite_difference(const std::function<double(const Tensor&)>& loss_fn, Tensor x,
                         double eps = 1e-3);

}  // namespace mdeh
