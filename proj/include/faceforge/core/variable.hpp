#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "faceforge/core/tensor.hpp"

namespace faceforge::ad {

/// Node in the dynamic reverse-mode tape. Built by the ops in ops.hpp;
/// user code holds Var handles and calls backward() on a scalar root.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily by ensure_grad()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Pulls this->grad into the parents' grads. Null for leaves.
  std::function<void(Node&)> backward_op;

  Tensor& ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor(value.shape());
    return grad;
  }
};

using Var = std::shared_ptr<Node>;

inline Var make_leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

/// Leaf that participates in optimization.
inline Var param(Tensor value) { return make_leaf(std::move(value), true); }

/// Leaf treated as data: no gradient is ever accumulated into it.
inline Var constant(Tensor value) { return make_leaf(std::move(value), false); }

/// Cuts the tape: same value, no history.
inline Var detach(const Var& v) { return constant(v->value); }

inline bool any_requires_grad(const std::vector<Var>& vs) {
  for (const auto& v : vs)
    if (v->requires_grad) return true;
  return false;
}

/// Builds a non-leaf node. If no input needs gradients the node is a
/// plain constant and the closure is dropped.
inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_op) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = any_requires_grad(parents);
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_op = std::move(backward_op);
  }
  return n;
}

/// Reverse-mode sweep from a scalar root. Accumulates into .grad of every
/// reachable node that requires gradients; leaf grads persist until
/// zero_grad().
inline void backward(const Var& root) {
  if (root->value.numel() != 1) throw Error("backward: root must be scalar");
  if (!root->requires_grad) return;

  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad().fill(0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_op && n->grad.numel() == n->value.numel()) n->backward_op(*n);
  }
}

inline void zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params)
    if (p->grad.numel()) p->grad.fill(0.0);
}

}  // namespace faceforge::ad
