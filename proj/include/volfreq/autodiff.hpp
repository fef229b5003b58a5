#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

#include "volfreq/tensor.hpp"

namespace volfreq::ad {

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape; }
};

/// Eager reverse-mode tape. Values are computed when an op is recorded; the
/// backward pass walks nodes in reverse creation order, which is a reverse
/// topological order because parents always precede their children.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, {}, "leaf", requires_grad});
    return {this, nodes_.size() - 1};
  }
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Records an op result. The backward rule is dropped when no parent
  /// carries a gradient, so constant subgraphs cost nothing in backward().
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) {
      if (p.tape != this) throw std::logic_error("op '" + std::string(op) + "' mixes variables from different tapes");
      needs = needs || nodes_[p.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, op, needs});
    return {this, nodes_.size() - 1};
  }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw std::logic_error("loss belongs to a different tape");
    auto& root = nodes_[loss.id];
    if (root.value.size() != 1) {
      throw ShapeError("backward needs a scalar loss, got shape " + shape_string(root.value.shape));
    }
    if (!root.requires_grad) return;
    grad_buffer(loss).data[0] += T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.data.empty()) n.backward(*this, n.grad);
    }
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  std::string_view op(Var<T> v) const { return nodes_[v.id].op; }
  std::size_t size() const { return nodes_.size(); }

  /// Accumulated gradient; zeros when the node is not connected to the loss.
  Tensor<T> grad(Var<T> v) const {
    const auto& n = nodes_[v.id];
    return n.grad.data.empty() ? Tensor<T>(n.value.shape) : n.grad;
  }

  /// Mutable gradient accumulator used by backward rules, allocated on first use.
  Tensor<T>& grad_buffer(Var<T> v) {
    auto& n = nodes_[v.id];
    if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor<T>{};
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    std::string_view op;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
};

}  // namespace volfreq::ad
