#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hybridflow/tensor.hpp"

namespace hybridflow::grad {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Gradients produced by one backward pass, keyed by node id.
class GradientMap {
 public:
  GradientMap() = default;
  GradientMap(std::vector<Tensor> grads, std::vector<bool> present,
              std::unordered_map<const Tensor*, std::size_t> bound, std::vector<Shape> shapes);

  bool has(Var v) const { return v.id < present_.size() && present_[v.id]; }
  // Gradient of the node, or zeros of the node's shape when it was unreachable.
  Tensor of(Var v) const;
  // Gradient with respect to externally owned parameter storage bound with
  // Tape::parameter; zeros when the parameter never reached the loss.
  Tensor of(const Tensor& parameter) const;

 private:
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
  std::unordered_map<const Tensor*, std::size_t> bound_;
  std::vector<Shape> shapes_;
};

// Records operations in topological order for one forward/backward step.
// Each training step uses a fresh tape, so no state leaks between steps.
class Tape {
 public:
  // Receives the gradient of the node's output and pointers to the input
  // gradient accumulators (nullptr for inputs that need no gradient).
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf bound to parameter storage owned by a model. Binding the same
  // storage twice returns the same node.
  Var parameter(const Tensor& storage);

  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  GradientMap backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> bound_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Elementwise binary ops require identical shapes.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var neg(Var a);
Var square(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
// Hard clamp; gradient is zero outside [lo, hi].
Var clamp(Var a, double lo, double hi);
Var reduce_sum(Var a);
Var reduce_mean(Var a);
// Sum over the last axis of a matrix: [m, n] -> [m, 1].
Var row_sum(Var a);
Var concat_last_axis(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var permute_cols(Var a, std::span<const std::size_t> perm);
// x [B, in] times (W ⊙ M)^T plus bias b [out]. The mask is a static argument.
Var masked_linear(Var x, Var weight, const Tensor& mask, Var bias);
Var linear(Var x, Var weight, Var bias);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace hybridflow::grad
