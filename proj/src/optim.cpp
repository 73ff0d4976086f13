#include "ddunet/optim.hpp"

#include <cmath>
#include <iostream>

namespace ddunet {

double poly_lr(int64_t step, int64_t total_steps, double lr0, double power) {
  if (total_steps < 1) throw std::invalid_argument("poly_lr: total_steps must be >= 1");
  if (step < 0) throw std::invalid_argument("poly_lr: negative step");
  if (step > total_steps) {
    std::cerr << "poly_lr: step " << step << " past schedule end " << total_steps
              << ", clamping lr to 0\n";
    return 0.0;
  }
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * std::pow(frac, power);
}

Adam::Adam(std::vector<std::pair<std::string, Var>> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Var& p = params_[k].second;
    if (p->grad.empty()) p->ensure_grad();
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    const int64_t n = p->value.numel();
    for (int64_t i = 0; i < n; ++i) {
      double g = p->grad[i];
      if (!cfg_.decoupled_weight_decay && cfg_.weight_decay != 0.0) {
        g += cfg_.weight_decay * p->value[i];
      }
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      if (cfg_.decoupled_weight_decay && cfg_.weight_decay != 0.0) {
        // decoupled decay shrinks the incoming value, not the updated one
        p->value[i] -= lr * cfg_.weight_decay * p->value[i];
      }
      p->value[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p->zero_grad();
}

double Adam::grad_norm() const {
  double s = 0.0;
  for (const auto& [name, p] : params_) {
    const int64_t n = p->grad.numel();
    for (int64_t i = 0; i < n; ++i) s += p->grad[i] * p->grad[i];
  }
  return std::sqrt(s);
}

NamedTensorRefs Adam::state_tensors() {
  NamedTensorRefs refs;
  step_scalar_[0] = static_cast<double>(t_);
  refs.emplace_back("adam.step", &step_scalar_);
  for (size_t k = 0; k < params_.size(); ++k) {
    refs.emplace_back("adam.m." + params_[k].first, &m_[k]);
    refs.emplace_back("adam.v." + params_[k].first, &v_[k]);
  }
  return refs;
}

}  // namespace ddunet
