#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sponge/ops.hpp"
#include "sponge/tensor.hpp"

// Tape-based reverse-mode differentiation over the kernels in ops.hpp.
//
// A Tape owns every intermediate value of one forward evaluation. Ops append
// nodes; backward() walks them in reverse and returns the gradients of all
// named parameters reachable from the scalar loss.
namespace sponge::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Parameter name -> gradient tensor of identical shape.
using Gradients = std::map<std::string, Tensor>;

// Given the gradient flowing into a node, produce one gradient per input
// (an empty Tensor means "no contribution").
using Backprop = std::function<std::vector<Tensor>(const Tape&, const Tensor& grad_out)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable leaf; its gradient is reported under `name`.
  Var parameter(std::string name, Tensor value);
  Var constant(Tensor value);
  Var record(Tensor value, std::vector<Var> inputs, Backprop backprop);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) with `seed` and propagates. `loss` must be a
  // single-element node recorded on this tape; otherwise StateError.
  Gradients backward(Var loss, float seed = 1.0f);

  // Gradient of an arbitrary node after backward(); empty when unreachable.
  const Tensor& grad(Var v) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    Backprop backprop;
    std::string parameter;
    bool needs_grad = false;
    Tensor grad;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

Var dense(Var input, Var weight, std::optional<Var> bias);
Var conv2d(Var input, Var weight, std::optional<Var> bias, ops::ConvGeometry geometry);
Var relu(Var input);
Var leaky_relu(Var input, float slope);
Var tanh(Var input);
Var pool(Var input, ops::PoolKind kind, ops::PoolGeometry geometry);
// Inference-form normalization; running statistics are fixed constants.
Var batchnorm(Var input, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var, float eps);

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);

// Mean softmax cross-entropy of logits [batch, classes].
Var cross_entropy(Var logits, std::span<const int> labels);

// Mean squared error against a constant target of identical element count.
Var mse(Var output, const Tensor& target);

// Smooth non-zero count sum_j x_j^2 / (x_j^2 + sigma) over the rows (axis 0)
// whose mask entry is set. An empty mask selects every row.
Var l0_hat(Var input, double sigma, std::span<const bool> row_mask = {});

}  // namespace sponge::ad
