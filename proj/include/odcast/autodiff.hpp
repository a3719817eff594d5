#pragma once

#include <functional>
#include <string>
#include <vector>

#include "odcast/tensor.hpp"

namespace odcast {

/// Elementwise nonlinearity applied by activation(). The relu subgradient
/// at 0 is defined as 0.
enum class Activation { kRelu, kTanh, kSigmoid, kLinear };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation kind);

/// Handle to a node on a Tape. Valid only for the tape that produced it.
struct Var {
  size_t id = static_cast<size_t>(-1);
};

/// Reverse-mode differentiation tape. Operations append nodes in
/// topological order; backward() walks them in reverse, so every ancestor
/// is visited exactly once per call. Gradients of a node shared by several
/// consumers are summed, and repeated backward() calls without zero_grad()
/// accumulate further.
///
/// A tape is confined to a single thread and normally lives for one
/// forward/backward step. Tensors read out of it are plain values and may
/// outlive the tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers an input tensor. Only leaves created with
  /// requires_grad=true (and nodes computed from them) receive gradients.
  Var leaf(Tensor value, bool requires_grad = false);

  /// Matrix product [m x k] * [k x n] -> [m x n].
  Var matmul(Var a, Var b);

  /// Per-batch matrix product [B x p x q] * [B x q x r] -> [B x p x r].
  /// Either operand (not both) may be unbatched and is then shared across
  /// the batch: a as [p x q] or b as [q x r].
  Var batch_dot(Var a, Var b);

  /// Row-major relayout to a new shape with the same element count.
  Var reshape(Var a, std::vector<size_t> new_shape);

  /// Axis permutation; perm[i] names the input axis placed at output
  /// axis i.
  Var transpose(Var a, std::vector<size_t> perm);

  Var activation(Activation kind, Var x);

  /// x*W + b where x is [.. x F], W is [F x O], b is [O]; b broadcasts
  /// over all leading axes.
  Var affine(Var x, Var w, Var b);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);

  /// Sum of all elements -> scalar (shape {1}).
  Var sum(Var a);

  /// Concatenation along the last axis; all other dimensions must agree.
  Var concat_last(Var a, Var b);

  /// Contiguous range [start, start+len) of the last axis.
  Var slice_last(Var a, size_t start, size_t len);

  /// Time-step selection: [B x T x F] -> [B x F] at step t.
  Var step(Var x, size_t t);

  /// Accumulates d(loss)/d(node) for every ancestor of loss. loss must be
  /// scalar. Each call adds one full gradient; zero_grad() resets.
  void backward(Var loss);

  void zero_grad();

  const Tensor& value(Var v) const;
  /// Accumulated gradient; a zero tensor if backward has not reached v.
  const Tensor& grad(Var v);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily
    bool requires_grad = false;
    // propagates pass_grad[self] into pass_grad[parents]
    std::function<void(size_t, std::vector<Tensor>&)> backprop;
  };

  Var push(Tensor value, bool requires_grad,
           std::function<void(size_t, std::vector<Tensor>&)> backprop);
  const Node& node(Var v) const;
  bool needs_grad(Var v) const { return node(v).requires_grad; }

  std::vector<Node> nodes_;
};

/// Max relative error between the analytic gradient of f at x and central
/// finite differences with step h. f receives a fresh tape and the leaf
/// for x and must return a scalar variable. The error denominator is
/// max(|analytic|, |numeric|, 1e-6) per component; the floor absorbs
/// finite-difference roundoff on near-zero gradient entries.
double gradient_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                      double h = 1e-5);

/// Evaluates f at x without gradients and returns the scalar value.
double eval_scalar(const std::function<Var(Tape&, Var)>& f, const Tensor& x);

}  // namespace odcast
