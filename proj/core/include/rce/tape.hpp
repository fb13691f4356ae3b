#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

#include "rce/tensor.hpp"

namespace rce {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const noexcept { return id != kInvalid; }
};

/// Reverse-mode autodiff record.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// Values live in a deque and keep stable addresses for the lifetime of the
/// tape; backward closures may hold references to them.
///
/// A tape is not thread-safe; concurrent evaluations use one tape each.
class Tape {
 public:
  /// Accumulates into the gradients of the inputs. `input_grads[k]` is null
  /// when input k does not require a gradient.
  using Backward = std::function<void(const Tensor& output_grad, std::span<Tensor* const> input_grads)>;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. `backward` is dropped when no input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);

  bool requires_grad(Var v) const;
  bool any_requires_grad(std::initializer_list<Var> vars) const;

  const Tensor& value(Var v) const;
  /// Gradient from the most recent backward pass; zeros if `v` was not reached.
  Tensor grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  /// Gradients from a previous call are discarded first.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  const Node& node(Var v) const;

  std::deque<Node> nodes_;
};

}  // namespace rce
