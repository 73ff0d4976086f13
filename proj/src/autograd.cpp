#include "ddunet/autograd.hpp"

#include <unordered_set>

namespace ddunet {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool tape_active(const std::vector<Var>& parents) {
  if (!g_grad_enabled) return false;
  for (const Var& p : parents) {
    if (p && (p->requires_grad || p->backward_fn)) return true;
  }
  return false;
}

void backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root->value.numel() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " +
                     shape_to_string(root->value.shape()));
  }

  // Iterative post-order DFS; order[] ends topologically sorted
  // (parents before children), so we run it in reverse.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node* parent = node->parents[next_child].get();
      ++next_child;
      if (parent && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad.fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) {
      node->backward_fn(*node);
    }
  }
}

}  // namespace ddunet
