#include "ckd/autodiff/tape.hpp"

#include "ckd/util/error.hpp"

namespace ckd::ad {

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0);
  }
}

const Tensor& Var::value() const { return tape->value(*this); }

bool Var::requires_grad() const { return tape->requires_grad(*this); }

const Tensor& Gradients::of(Var v) const {
  auto it = by_id_.find(v.id);
  if (it == by_id_.end()) throw Error("gradients: node has no gradient (not a grad leaf?)");
  return it->second;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::check(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw Error("tape: variable does not belong to this tape");
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  n.is_leaf = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.requires_grad = p.trainable && grad_enabled_;
  if (n.requires_grad) n.sink = &p;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  for (Var in : inputs) {
    check(in);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id].value();
}

const Tensor& Tape::value(std::uint32_t id) const { return nodes_.at(id).value(); }

bool Tape::requires_grad(std::uint32_t id) const { return nodes_.at(id).requires_grad; }

Tensor& Tape::grad(std::uint32_t id) {
  Node& n = nodes_.at(id);
  if (!n.has_grad) {
    n.grad = Tensor(n.value().shape());
    n.has_grad = true;
  }
  return n.grad;
}

Gradients Tape::backward(Var loss) {
  check(loss);
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + value(loss).shape().str());
  }
  Gradients out;
  if (!nodes_[loss.id].requires_grad) {
    clear();
    return out;
  }
  grad(loss.id).fill(1.0);
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.has_grad) continue;
    if (n.backward) n.backward(*this, id);
    if (n.sink) {
      Parameter& p = *n.sink;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
      p.grad.add_(n.grad);
    } else if (n.is_leaf) {
      out.by_id_.emplace(id, std::move(n.grad));
    }
  }
  // Leaves that never received a gradient still get an explicit zero.
  for (std::uint32_t id = 0; id <= loss.id; ++id) {
    const Node& n = nodes_[id];
    if (n.is_leaf && n.requires_grad && !out.by_id_.contains(id)) {
      out.by_id_.emplace(id, Tensor(n.value().shape()));
    }
  }
  clear();
  return out;
}

void Tape::clear() { nodes_.clear(); }

}  // namespace ckd::ad
