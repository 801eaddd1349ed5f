#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "bscg/tensor.hpp"

namespace bscg {

template <class T>
struct Parameter;  // params.hpp

// One node of the dynamically built computation graph. Ops allocate a node,
// fill `value`, record the parent handles, and install a `backprop` closure
// that reads this node's `grad` and accumulates into the parents' grads (or
// straight into Parameter::grad for leaves). Closures capture parents by
// shared_ptr but receive the node itself by reference, so there are no
// ownership cycles: the graph dies with the last Var referencing its sink.
template <class T>
struct Node {
  Tensor4<T> value;
  Tensor4<T> grad;  // allocated on first touch during backward
  bool needs_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;
  Parameter<T>* param = nullptr;  // set for parameter leaves

  void ensure_grad() {
    if (grad.empty()) grad = Tensor4<T>::zeros_like(value);
  }
};

// Value-semantics handle to a graph node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node(std::move(n)) {}

  // Constant leaf (no gradient tracked unless `track` is set; tracked
  // non-parameter leaves keep their gradient in node->grad, which tests use).
  explicit Var(Tensor4<T> v, bool track = false) : node(std::make_shared<Node<T>>()) {
    node->value = std::move(v);
    node->needs_grad = track;
  }

  bool valid() const { return node != nullptr; }
  const Tensor4<T>& value() const { return node->value; }
  const Tensor4<T>& grad() const { return node->grad; }

  std::shared_ptr<Node<T>> node;
};

namespace detail {

template <class T>
void topo_collect(Node<T>* root, std::vector<Node<T>*>& order) {
  // Iterative post-order DFS over parents; `order` ends with root last.
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->needs_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Parameter gradients accumulate (the
// caller owns resetting them between steps); non-finite inputs are the
// caller's problem, but the loss itself must be a finite scalar.
template <class T>
void backward(const Var<T>& loss) {
  require(loss.valid(), "backward: empty loss handle");
  require(loss.node->value.is_scalar(),
          "backward: loss must be 1x1x1x1, got " + loss.node->value.shape_str());
  if (!loss.node->needs_grad) return;  // no parameters reachable

  std::vector<Node<T>*> order;
  detail::topo_collect(loss.node.get(), order);

  loss.node->ensure_grad();
  loss.node->grad.data[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->needs_grad || !node->backprop) continue;
    node->ensure_grad();  // zero grad if nothing accumulated (dead branches)
    node->backprop(*node);
  }
}

}  // namespace bscg
