#include "rce/tape.hpp"

#include <stdexcept>

namespace rce {

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (auto v : inputs) {
    const Node& in = node(v);
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || in.requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("variable does not belong to this tape");
  return nodes_[v.id];
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

bool Tape::any_requires_grad(std::initializer_list<Var> vars) const {
  for (auto v : vars) {
    if (node(v).requires_grad) return true;
  }
  return false;
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.has_grad) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.size() != 1 || root.value.rank() != 0) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_string(root.value.shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (!root.requires_grad) return;

  nodes_[loss.id].grad = Tensor::scalar(1.0);
  nodes_[loss.id].has_grad = true;

  std::vector<Tensor*> input_grads;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    input_grads.assign(n.inputs.size(), nullptr);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      Node& in = nodes_[n.inputs[k]];
      if (!in.requires_grad) continue;
      if (!in.has_grad) {
        in.grad = Tensor(in.value.shape(), 0.0);
        in.has_grad = true;
      }
      input_grads[k] = &in.grad;
    }
    n.backward(n.grad, input_grads);
  }
}

}  // namespace rce
