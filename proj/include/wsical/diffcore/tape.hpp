#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "wsical/diffcore/params.hpp"
#include "wsical/diffcore/tensor.hpp"

namespace wsical::ad {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// owning tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run computation record. Nodes are appended in execution order,
/// so the node vector is already a topological order; backward walks it in
/// reverse.
template <typename T>
class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  /// Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value) {
    check_finite(value, "constant");
    return push(Node{std::move(value), nullptr, {}, false, {}, nullptr});
  }

  /// Leaf whose gradient is kept on the tape (readable through grad()).
  Var<T> variable(Tensor<T> value) {
    check_finite(value, "variable");
    return push(Node{std::move(value), nullptr, {}, true, {}, nullptr});
  }

  /// Leaf bound to a parameter; backward() accumulates into params.grad(name).
  /// Repeated lookups of one name return the same node.
  Var<T> param(ParamSet<T>& params, std::string_view name) {
    auto& entry = params.entry(params.index_of(name));
    if (auto it = param_nodes_.find(&entry.value); it != param_nodes_.end()) {
      return Var<T>(this, it->second);
    }
    check_finite(entry.value, "param '" + entry.name + "'");
    Var<T> v = push(Node{{}, &entry.value, {}, true, {}, &entry.grad});
    param_nodes_.emplace(&entry.value, v.id());
    return v;
  }

  /// Frozen parameter: read in place, no gradient. Used for inference.
  Var<T> param(const ParamSet<T>& params, std::string_view name) {
    const auto& entry = params.entry(params.index_of(name));
    if (auto it = param_nodes_.find(&entry.value); it != param_nodes_.end()) {
      return Var<T>(this, it->second);
    }
    Var<T> v = push(Node{{}, &entry.value, {}, false, {}, nullptr});
    param_nodes_.emplace(&entry.value, v.id());
    return v;
  }

  /// Appends an operation result. The backprop callback reads grad(self) and
  /// accumulates into its inputs via accumulate().
  Var<T> record(Tensor<T> value, bool requires_grad, Backprop backprop) {
    ++op_count_;
    if (!requires_grad) backprop = nullptr;
    return push(Node{std::move(value), nullptr, {}, requires_grad, std::move(backprop), nullptr});
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient of node `id`; zero-filled if nothing flowed into it.
  const Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.shape != value(id).shape) n.grad = Tensor<T>(value(id).shape);
    return n.grad;
  }
  const Tensor<T>& grad(const Var<T>& v) { return grad(v.id()); }

  /// Mutable gradient buffer for an input of the op being backpropagated,
  /// or nullptr when that input does not need a gradient.
  Tensor<T>* accumulate(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.shape != value(id).shape) n.grad = Tensor<T>(value(id).shape);
    return &n.grad;
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t op_count() const { return op_count_; }

  void backward(const Var<T>& out, const Tensor<T>& seed) {
    if (&out.tape() != this) throw std::logic_error("backward: variable belongs to another tape");
    if (op_count_ == 0) throw std::logic_error("backward: no forward operations recorded");
    if (consumed_) throw std::logic_error("backward: record already consumed by a previous backward");
    if (seed.shape != out.value().shape) {
      throw ShapeError("backward: seed shape " + to_string(seed.shape) +
                       " does not match output shape " + to_string(out.value().shape));
    }
    consumed_ = true;
    if (!nodes_[out.id()].requires_grad) return;
    nodes_[out.id()].grad = seed;
    for (std::size_t i = out.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.data.empty()) continue;
      if (n.backprop) n.backprop(*this, i);
      if (n.sink) {
        auto dst = n.sink->map();
        dst += nodes_[i].grad.map();
      }
    }
  }

  /// Scalar output: seed 1.
  void backward(const Var<T>& out) {
    if (out.value().size() != 1) {
      throw ShapeError("backward: implicit seed needs a scalar output, got " +
                       to_string(out.value().shape));
    }
    backward(out, Tensor<T>(out.value().shape, T{1}));
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external;
    Tensor<T> grad;
    bool requires_grad;
    Backprop backprop;
    Tensor<T>* sink;
  };

  Var<T> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  static void check_finite(const Tensor<T>& t, const std::string& what) {
    if (!t.all_finite()) throw NonFiniteError(what + ": non-finite input value");
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> param_nodes_;
  std::size_t op_count_ = 0;
  bool consumed_ = false;
};

}  // namespace wsical::ad
