#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ckd/autodiff/tensor.hpp"

namespace ckd::ad {

/// A named trainable tensor owned by a model. The tape reads `value` in place
/// and accumulates into `grad` during backward when `trainable` is set.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad();
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives
/// and has not been consumed by backward().
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  bool requires_grad() const;
};

/// Gradients of the leaves created with Tape::leaf, keyed by node.
class Gradients {
 public:
  const Tensor& of(Var v) const;
  bool contains(Var v) const { return by_id_.contains(v.id); }

 private:
  friend class Tape;
  std::unordered_map<std::uint32_t, Tensor> by_id_;
};

/// Ordered record of primitive operations. Nodes are appended as operations
/// run; inputs always precede outputs, so walking the record backwards is a
/// reverse topological order and each node is visited once.
///
/// A tape is single-threaded. Distinct tapes may run on distinct threads as
/// long as they do not accumulate into the same Parameter.
class Tape {
 public:
  /// Receives the tape and the id of the node whose gradient is ready.
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  /// References p.value without copying; p must outlive the tape.
  Var param(Parameter& p);

  /// Append an operation result. The node requires grad iff any input does;
  /// otherwise the backward function is dropped.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  const Tensor& value(std::uint32_t id) const;
  bool requires_grad(Var v) const { return requires_grad(v.id); }
  bool requires_grad(std::uint32_t id) const;

  /// Gradient buffer for a node, zero-initialised on first access.
  Tensor& grad(std::uint32_t id);

  /// Disable gradient recording for inference. Parameters then enter as
  /// constants and no backward closures are kept.
  void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

  /// Reverse pass from a scalar node. Parameter gradients are accumulated
  /// into their Parameter; leaf gradients are returned. Consumes the tape.
  Gradients backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool is_leaf = false;
    Parameter* sink = nullptr;
    BackwardFn backward;

    const Tensor& value() const { return external ? *external : owned; }
  };

  Var push(Node node);
  void check(Var v) const;

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace ckd::ad
