#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ddunet/tensor.hpp"

namespace ddunet {

class Node;
using Var = std::shared_ptr<Node>;

/// One value in the computation tape. Ops connect nodes by storing parents
/// and a closure that scatters this node's gradient into theirs. Closures
/// receive the node by reference so they never capture it (no ref cycles).
class Node {
 public:
  explicit Node(Tensor v, bool requires_grad = false)
      : value(std::move(v)), requires_grad(requires_grad) {}

  Tensor value;
  Tensor grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
  }
  void zero_grad() {
    if (!grad.empty()) grad.fill(0.0);
  }
  const Shape& shape() const { return value.shape(); }
  int64_t dim(int64_t i) const { return value.dim(i); }
};

inline Var make_var(Tensor v) { return std::make_shared<Node>(std::move(v)); }
inline Var make_param(Tensor v) { return std::make_shared<Node>(std::move(v), true); }

/// Whether ops currently record the tape. Toggled by NoGradGuard.
bool grad_enabled();

/// Disables tape recording for its lifetime (inference / finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// True when some parent participates in the tape and recording is on.
bool tape_active(const std::vector<Var>& parents);

/// Runs reverse-mode accumulation from `root`, which must be scalar.
/// Gradients accumulate into every reachable node with requires_grad set;
/// call zero_grad on parameters between backward passes.
void backward(const Var& root);

}  // namespace ddunet
