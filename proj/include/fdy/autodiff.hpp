#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fdy/tensor.hpp"

namespace fdy {

template <class Scalar>
struct Node {
  Tensor4<Scalar> value;
  Tensor4<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  Tensor4<Scalar>& ensure_grad() {
    if (!(grad.shape() == value.shape())) grad = Tensor4<Scalar>(value.shape());
    return grad;
  }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording in its scope (evaluation, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

/// Handle to a node of the differentiation graph. Copies share the node.
template <class Scalar>
class Var {
 public:
  using NodeType = Node<Scalar>;
  using TensorType = Tensor4<Scalar>;

  Var() = default;
  explicit Var(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  static Var leaf(TensorType value, bool requires_grad) {
    auto node = std::make_shared<NodeType>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
  }
  static Var constant(TensorType value) { return leaf(std::move(value), false); }

  bool defined() const { return static_cast<bool>(node_); }
  const TensorType& value() const { return node_->value; }
  TensorType& mutable_value() { return node_->value; }
  const TensorType& grad() const { return node_->grad; }
  TensorType& mutable_grad() { return node_->ensure_grad(); }
  const Shape4& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::shared_ptr<NodeType>& node() const { return node_; }

 private:
  std::shared_ptr<NodeType> node_;
};

/// Creates an op result. When no parent requires grad (or recording is off) the
/// result is a detached constant and `backward` is dropped.
template <class Scalar>
Var<Scalar> make_result(Tensor4<Scalar> value, std::vector<std::shared_ptr<Node<Scalar>>> parents,
                        std::function<void(Node<Scalar>&)> backward) {
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents) needs = needs || p->requires_grad;
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Var<Scalar>(std::move(node));
}

/// Nodes reachable from `root` in topological order (parents before children).
template <class Scalar>
std::vector<Node<Scalar>*> topological_order(Node<Scalar>* root) {
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

/// Back-propagates from a scalar loss. Gradients of every node in the graph,
/// leaves included, are zeroed at the start of the sweep.
template <class Scalar>
void reverse_sweep(const Var<Scalar>& loss) {
  if (loss.value().size() != 1)
    throw ShapeError("reverse_sweep needs a scalar loss, got " + loss.shape().str());
  if (!loss.requires_grad()) return;
  auto order = topological_order(loss.node().get());
  for (Node<Scalar>* n : order) n->ensure_grad().array().setZero();
  loss.node()->grad.array().setConstant(Scalar(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

}  // namespace fdy
