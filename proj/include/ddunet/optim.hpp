#pragma once

#include <vector>

#include "ddunet/serialize.hpp"

namespace ddunet {

/// lr0 * (1 - step/total_steps)^power, clamped to 0 past the end.
double poly_lr(int64_t step, int64_t total_steps, double lr0, double power);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
  /// Decoupled: theta -= lr*wd*theta after the moment update. Coupled adds
  /// wd*theta to the gradient instead.
  bool decoupled_weight_decay = true;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<std::pair<std::string, Var>> params, AdamConfig cfg);

  /// One update with the given learning rate; consumes .grad of each param.
  void step(double lr);
  void zero_grad();
  int64_t step_count() const { return t_; }

  /// Gradient 2-norm across all parameters (diagnostics).
  double grad_norm() const;

  /// Moment tensors and the step counter, for checkpointing.
  NamedTensorRefs state_tensors();
  /// Call after apply_archive onto state_tensors() to adopt the stored step.
  void sync_step_from_state() { t_ = static_cast<int64_t>(step_scalar_[0]); }

 private:
  std::vector<std::pair<std::string, Var>> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  Tensor step_scalar_{Shape{1}};  // serialized step counter
  AdamConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace ddunet
