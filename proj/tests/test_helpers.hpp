#pragma once

#include "ddunet/autograd.hpp"
#include "ddunet/rng.hpp"

namespace testutil {

using ddunet::Rng;
using ddunet::Shape;
using ddunet::Tensor;
using ddunet::Var;

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Var random_var(Rng& rng, Shape shape, bool requires_grad = false, double lo = -1.0,
                      double hi = 1.0) {
  Var v = ddunet::make_var(random_tensor(rng, std::move(shape), lo, hi));
  v->requires_grad = requires_grad;
  return v;
}

inline void fill_random(const Var& v, Rng& rng, double lo, double hi) {
  for (int64_t i = 0; i < v->value.numel(); ++i) v->value[i] = rng.uniform(lo, hi);
}

inline void fill_zero(const Var& v) { v->value.fill(0.0); }

/// Nudges every parameter off structured zeros. Zero-initialized biases can
/// leave whole activations at exactly 0.0, where relu is not differentiable
/// and finite differences straddle the kink; a small random offset makes
/// every evaluation point generic.
template <typename Sink>
inline void jitter_params(Sink& sink, Rng& rng, double amplitude = 0.2) {
  for (auto& [name, p] : sink.params) {
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      p->value[i] += rng.uniform(-amplitude, amplitude);
    }
  }
}

}  // namespace testutil
