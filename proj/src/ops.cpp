#include "ddunet/ops.hpp"

#include <algorithm>
#include <cmath>

namespace ddunet {

namespace {

void require_rank4(const Var& x, const char* op) {
  if (x->value.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected 4-d input, got " +
                     shape_to_string(x->value.shape()));
  }
}

bool wants_grad(const Var& v) { return v && (v->requires_grad || v->backward_fn); }

}  // namespace

Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) {
    throw ShapeError("add: shape mismatch " + shape_to_string(a->shape()) + " vs " +
                     shape_to_string(b->shape()));
  }
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
  Var r = make_var(std::move(out));
  if (tape_active({a, b})) {
    r->parents = {a, b};
    r->backward_fn = [a, b](Node& self) {
      const int64_t n = self.grad.numel();
      if (wants_grad(a)) {
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i];
      }
      if (wants_grad(b)) {
        Tensor& gb = b->ensure_grad();
        for (int64_t i = 0; i < n; ++i) gb[i] += self.grad[i];
      }
    };
  }
  return r;
}

Var mul(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) {
    throw ShapeError("mul: shape mismatch " + shape_to_string(a->shape()) + " vs " +
                     shape_to_string(b->shape()));
  }
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  Var r = make_var(std::move(out));
  if (tape_active({a, b})) {
    r->parents = {a, b};
    r->backward_fn = [a, b](Node& self) {
      const int64_t n = self.grad.numel();
      if (wants_grad(a)) {
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] * b->value[i];
      }
      if (wants_grad(b)) {
        Tensor& gb = b->ensure_grad();
        for (int64_t i = 0; i < n; ++i) gb[i] += self.grad[i] * a->value[i];
      }
    };
  }
  return r;
}

Var mul_scalar(const Var& a, double s) {
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * s;
  Var r = make_var(std::move(out));
  if (tape_active({a})) {
    r->parents = {a};
    r->backward_fn = [a, s](Node& self) {
      Tensor& ga = a->ensure_grad();
      const int64_t n = self.grad.numel();
      for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] * s;
    };
  }
  return r;
}

Var add_scalar(const Var& a, double s) {
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + s;
  Var r = make_var(std::move(out));
  if (tape_active({a})) {
    r->parents = {a};
    r->backward_fn = [a](Node& self) {
      Tensor& ga = a->ensure_grad();
      const int64_t n = self.grad.numel();
      for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    };
  }
  return r;
}

Var relu(const Var& a) {
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
  Var r = make_var(std::move(out));
  if (tape_active({a})) {
    r->parents = {a};
    r->backward_fn = [a](Node& self) {
      Tensor& ga = a->ensure_grad();
      const int64_t n = self.grad.numel();
      for (int64_t i = 0; i < n; ++i) {
        if (a->value[i] > 0.0) ga[i] += self.grad[i];
      }
    };
  }
  return r;
}

Var sigmoid(const Var& a) {
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-a->value[i]));
  Var r = make_var(std::move(out));
  if (tape_active({a})) {
    r->parents = {a};
    // capture output values for s*(1-s); cheap copy, keeps closure self-free
    Tensor sv = r->value;
    r->backward_fn = [a, sv = std::move(sv)](Node& self) {
      Tensor& ga = a->ensure_grad();
      const int64_t n = self.grad.numel();
      for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] * sv[i] * (1.0 - sv[i]);
    };
  }
  return r;
}

Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a->value.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(a->shape()) + " as " +
                     shape_to_string(shape));
  }
  Tensor out(std::move(shape));
  std::copy_n(a->value.data(), a->value.numel(), out.data());
  Var r = make_var(std::move(out));
  if (tape_active({a})) {
    r->parents = {a};
    r->backward_fn = [a](Node& self) {
      Tensor& ga = a->ensure_grad();
      const int64_t n = self.grad.numel();
      for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    };
  }
  return r;
}

Var mean_all(const Var& a) {
  const int64_t n = a->value.numel();
  if (n == 0) throw ShapeError("mean_all: empty tensor");
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a->value[i];
  Tensor out({1});
  out[0] = s / static_cast<double>(n);
  Var r = make_var(std::move(out));
  if (tape_active({a})) {
    r->parents = {a};
    r->backward_fn = [a, n](Node& self) {
      Tensor& ga = a->ensure_grad();
      const double g = self.grad[0] / static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    };
  }
  return r;
}

Var global_avg_pool(const Var& x) {
  require_rank4(x, "global_avg_pool");
  const int64_t B = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int64_t hw = H * W;
  Tensor out({B, C});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const double* p = x->value.data() + (b * C + c) * hw;
      double s = 0.0;
      for (int64_t i = 0; i < hw; ++i) s += p[i];
      out.at(b, c) = s / static_cast<double>(hw);
    }
  Var r = make_var(std::move(out));
  if (tape_active({x})) {
    r->parents = {x};
    r->backward_fn = [x, B, C, hw](Node& self) {
      Tensor& gx = x->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
          const double g = self.grad.at(b, c) / static_cast<double>(hw);
          double* p = gx.data() + (b * C + c) * hw;
          for (int64_t i = 0; i < hw; ++i) p[i] += g;
        }
    };
  }
  return r;
}

Var global_max_pool(const Var& x) {
  require_rank4(x, "global_max_pool");
  const int64_t B = x->dim(0), C = x->dim(1), hw = x->dim(2) * x->dim(3);
  const int64_t C_ = C;
  Tensor out({B, C});
  std::vector<int64_t> argmax(static_cast<size_t>(B * C));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const double* p = x->value.data() + (b * C + c) * hw;
      int64_t best = 0;
      for (int64_t i = 1; i < hw; ++i) {
        if (p[i] > p[best]) best = i;  // first max wins ties
      }
      out.at(b, c) = p[best];
      argmax[static_cast<size_t>(b * C + c)] = best;
    }
  Var r = make_var(std::move(out));
  if (tape_active({x})) {
    r->parents = {x};
    r->backward_fn = [x, B, C_, hw, argmax = std::move(argmax)](Node& self) {
      Tensor& gx = x->ensure_grad();
      for (int64_t bc = 0; bc < B * C_; ++bc) {
        gx[bc * hw + argmax[static_cast<size_t>(bc)]] += self.grad[bc];
      }
    };
  }
  return r;
}

Var channel_mean(const Var& x) {
  require_rank4(x, "channel_mean");
  const int64_t B = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int64_t hw = H * W;
  Tensor out({B, 1, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      double s = 0.0;
      for (int64_t c = 0; c < C; ++c) s += x->value[(b * C + c) * hw + i];
      out[b * hw + i] = s / static_cast<double>(C);
    }
  Var r = make_var(std::move(out));
  if (tape_active({x})) {
    r->parents = {x};
    r->backward_fn = [x, B, C, hw](Node& self) {
      Tensor& gx = x->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < hw; ++i) {
          const double g = self.grad[b * hw + i] / static_cast<double>(C);
          for (int64_t c = 0; c < C; ++c) gx[(b * C + c) * hw + i] += g;
        }
    };
  }
  return r;
}

Var channel_max(const Var& x) {
  require_rank4(x, "channel_max");
  const int64_t B = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int64_t hw = H * W;
  Tensor out({B, 1, H, W});
  std::vector<int64_t> argmax(static_cast<size_t>(B * hw));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      int64_t best = 0;
      double bv = x->value[(b * C + 0) * hw + i];
      for (int64_t c = 1; c < C; ++c) {
        const double v = x->value[(b * C + c) * hw + i];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out[b * hw + i] = bv;
      argmax[static_cast<size_t>(b * hw + i)] = best;
    }
  Var r = make_var(std::move(out));
  if (tape_active({x})) {
    r->parents = {x};
    r->backward_fn = [x, B, C, hw, argmax = std::move(argmax)](Node& self) {
      Tensor& gx = x->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < hw; ++i) {
          const int64_t c = argmax[static_cast<size_t>(b * hw + i)];
          gx[(b * C + c) * hw + i] += self.grad[b * hw + i];
        }
    };
  }
  return r;
}

Var broadcast_spatial(const Var& v, int64_t h, int64_t w) {
  if (v->value.rank() != 2) {
    throw ShapeError("broadcast_spatial: expected (B,C) input, got " +
                     shape_to_string(v->shape()));
  }
  if (h < 1 || w < 1) throw ShapeError("broadcast_spatial: target dims must be >= 1");
  const int64_t B = v->dim(0), C = v->dim(1), hw = h * w;
  Tensor out({B, C, h, w});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double val = v->value[bc];
    double* p = out.data() + bc * hw;
    for (int64_t i = 0; i < hw; ++i) p[i] = val;
  }
  Var r = make_var(std::move(out));
  if (tape_active({v})) {
    r->parents = {v};
    r->backward_fn = [v, B, C, hw](Node& self) {
      Tensor& gv = v->ensure_grad();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* p = self.grad.data() + bc * hw;
        double s = 0.0;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
        gv[bc] += s;
      }
    };
  }
  return r;
}

Var scale_by_channel(const Var& x, const Var& s) {
  require_rank4(x, "scale_by_channel");
  const int64_t B = x->dim(0), C = x->dim(1), hw = x->dim(2) * x->dim(3);
  if (s->value.rank() != 2 || s->dim(0) != B || s->dim(1) != C) {
    throw ShapeError("scale_by_channel: gate shape " + shape_to_string(s->shape()) +
                     " does not match input " + shape_to_string(x->shape()));
  }
  Tensor out(x->shape());
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double g = s->value[bc];
    const double* px = x->value.data() + bc * hw;
    double* po = out.data() + bc * hw;
    for (int64_t i = 0; i < hw; ++i) po[i] = px[i] * g;
  }
  Var r = make_var(std::move(out));
  if (tape_active({x, s})) {
    r->parents = {x, s};
    r->backward_fn = [x, s, B, C, hw](Node& self) {
      if (wants_grad(x)) {
        Tensor& gx = x->ensure_grad();
        for (int64_t bc = 0; bc < B * C; ++bc) {
          const double g = s->value[bc];
          const double* pg = self.grad.data() + bc * hw;
          double* p = gx.data() + bc * hw;
          for (int64_t i = 0; i < hw; ++i) p[i] += pg[i] * g;
        }
      }
      if (wants_grad(s)) {
        Tensor& gs = s->ensure_grad();
        for (int64_t bc = 0; bc < B * C; ++bc) {
          const double* pg = self.grad.data() + bc * hw;
          const double* px = x->value.data() + bc * hw;
          double acc = 0.0;
          for (int64_t i = 0; i < hw; ++i) acc += pg[i] * px[i];
          gs[bc] += acc;
        }
      }
    };
  }
  return r;
}

Var scale_by_spatial(const Var& x, const Var& s) {
  require_rank4(x, "scale_by_spatial");
  const int64_t B = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int64_t hw = H * W;
  if (s->value.rank() != 4 || s->dim(0) != B || s->dim(1) != 1 || s->dim(2) != H ||
      s->dim(3) != W) {
    throw ShapeError("scale_by_spatial: map shape " + shape_to_string(s->shape()) +
                     " does not match input " + shape_to_string(x->shape()));
  }
  Tensor out(x->shape());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const double* pm = s->value.data() + b * hw;
      const double* px = x->value.data() + (b * C + c) * hw;
      double* po = out.data() + (b * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) po[i] = px[i] * pm[i];
    }
  Var r = make_var(std::move(out));
  if (tape_active({x, s})) {
    r->parents = {x, s};
    r->backward_fn = [x, s, B, C, hw](Node& self) {
      if (wants_grad(x)) {
        Tensor& gx = x->ensure_grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c) {
            const double* pm = s->value.data() + b * hw;
            const double* pg = self.grad.data() + (b * C + c) * hw;
            double* p = gx.data() + (b * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += pg[i] * pm[i];
          }
      }
      if (wants_grad(s)) {
        Tensor& gs = s->ensure_grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c) {
            const double* pg = self.grad.data() + (b * C + c) * hw;
            const double* px = x->value.data() + (b * C + c) * hw;
            double* p = gs.data() + b * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += pg[i] * px[i];
          }
      }
    };
  }
  return r;
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const int64_t B = xs[0]->dim(0), H = xs[0]->dim(2), W = xs[0]->dim(3);
  int64_t total_c = 0;
  for (const Var& x : xs) {
    require_rank4(x, "concat_channels");
    if (x->dim(0) != B || x->dim(2) != H || x->dim(3) != W) {
      throw ShapeError("concat_channels: incompatible shapes " +
                       shape_to_string(xs[0]->shape()) + " vs " + shape_to_string(x->shape()));
    }
    total_c += x->dim(1);
  }
  const int64_t hw = H * W;
  Tensor out({B, total_c, H, W});
  for (int64_t b = 0; b < B; ++b) {
    int64_t co = 0;
    for (const Var& x : xs) {
      const int64_t c = x->dim(1);
      std::copy_n(x->value.data() + b * c * hw, c * hw,
                  out.data() + (b * total_c + co) * hw);
      co += c;
    }
  }
  Var r = make_var(std::move(out));
  if (tape_active(xs)) {
    r->parents = xs;
    r->backward_fn = [xs, B, total_c, hw](Node& self) {
      for (int64_t b = 0; b < B; ++b) {
        int64_t co = 0;
        for (const Var& x : xs) {
          const int64_t c = x->dim(1);
          if (wants_grad(x)) {
            Tensor& gx = x->ensure_grad();
            const double* pg = self.grad.data() + (b * total_c + co) * hw;
            double* p = gx.data() + b * c * hw;
            for (int64_t i = 0; i < c * hw; ++i) p[i] += pg[i];
          }
          co += c;
        }
      }
    };
  }
  return r;
}

Var max_pool2d(const Var& x, int64_t kernel, int64_t stride, int64_t pad) {
  require_rank4(x, "max_pool2d");
  const int64_t B = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int64_t Ho = (H + 2 * pad - kernel) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kernel) / stride + 1;
  if (Ho < 1 || Wo < 1) throw ShapeError("max_pool2d: output would be empty");
  Tensor out({B, C, Ho, Wo});
  std::vector<int64_t> argmax(static_cast<size_t>(B * C * Ho * Wo));
  int64_t oi = 0;
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* p = x->value.data() + bc * H * W;
    for (int64_t oh = 0; oh < Ho; ++oh)
      for (int64_t ow = 0; ow < Wo; ++ow, ++oi) {
        double best = -std::numeric_limits<double>::infinity();
        int64_t best_idx = -1;
        for (int64_t i = 0; i < kernel; ++i) {
          const int64_t ih = oh * stride - pad + i;
          if (ih < 0 || ih >= H) continue;
          for (int64_t j = 0; j < kernel; ++j) {
            const int64_t iw = ow * stride - pad + j;
            if (iw < 0 || iw >= W) continue;
            const double v = p[ih * W + iw];
            if (v > best) {
              best = v;
              best_idx = ih * W + iw;
            }
          }
        }
        out[oi] = best;
        argmax[static_cast<size_t>(oi)] = bc * H * W + best_idx;
      }
  }
  Var r = make_var(std::move(out));
  if (tape_active({x})) {
    r->parents = {x};
    r->backward_fn = [x, argmax = std::move(argmax)](Node& self) {
      Tensor& gx = x->ensure_grad();
      const int64_t n = self.grad.numel();
      for (int64_t i = 0; i < n; ++i) gx[argmax[static_cast<size_t>(i)]] += self.grad[i];
    };
  }
  return r;
}

Var reflect_pad2d(const Var& x, int64_t pad) {
  require_rank4(x, "reflect_pad2d");
  if (pad < 0) throw std::invalid_argument("reflect_pad2d: negative pad");
  if (pad == 0) return x;
  const int64_t B = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  if (pad > H - 1 || pad > W - 1) {
    throw ShapeError("reflect_pad2d: pad exceeds input size minus one");
  }
  const int64_t Ho = H + 2 * pad, Wo = W + 2 * pad;
  auto mirror = [](int64_t i, int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  Tensor out({B, C, Ho, Wo});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* p = x->value.data() + bc * H * W;
    double* po = out.data() + bc * Ho * Wo;
    for (int64_t oh = 0; oh < Ho; ++oh) {
      const int64_t ih = mirror(oh - pad, H);
      for (int64_t ow = 0; ow < Wo; ++ow) {
        po[oh * Wo + ow] = p[ih * W + mirror(ow - pad, W)];
      }
    }
  }
  Var r = make_var(std::move(out));
  if (tape_active({x})) {
    r->parents = {x};
    r->backward_fn = [x, B, C, H, W, Ho, Wo, pad, mirror](Node& self) {
      Tensor& gx = x->ensure_grad();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* pg = self.grad.data() + bc * Ho * Wo;
        double* p = gx.data() + bc * H * W;
        for (int64_t oh = 0; oh < Ho; ++oh) {
          const int64_t ih = mirror(oh - pad, H);
          for (int64_t ow = 0; ow < Wo; ++ow) {
            p[ih * W + mirror(ow - pad, W)] += pg[oh * Wo + ow];
          }
        }
      }
    };
  }
  return r;
}

Var bilinear_upsample2x(const Var& x) {
  require_rank4(x, "bilinear_upsample2x");
  const int64_t B = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int64_t Ho = H * 2, Wo = W * 2;
  // source coordinate for output index i: (i + 0.5)/2 - 0.5
  auto taps = [](int64_t i, int64_t n, int64_t& i0, int64_t& i1, double& w1) {
    const double s = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
    const double f = std::floor(s);
    i0 = static_cast<int64_t>(f);
    i1 = i0 + 1;
    w1 = s - f;
    i0 = std::clamp<int64_t>(i0, 0, n - 1);
    i1 = std::clamp<int64_t>(i1, 0, n - 1);
  };
  Tensor out({B, C, Ho, Wo});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* p = x->value.data() + bc * H * W;
    double* po = out.data() + bc * Ho * Wo;
    for (int64_t oh = 0; oh < Ho; ++oh) {
      int64_t h0, h1;
      double wh;
      taps(oh, H, h0, h1, wh);
      for (int64_t ow = 0; ow < Wo; ++ow) {
        int64_t w0, w1i;
        double ww;
        taps(ow, W, w0, w1i, ww);
        po[oh * Wo + ow] = (1 - wh) * ((1 - ww) * p[h0 * W + w0] + ww * p[h0 * W + w1i]) +
                           wh * ((1 - ww) * p[h1 * W + w0] + ww * p[h1 * W + w1i]);
      }
    }
  }
  Var r = make_var(std::move(out));
  if (tape_active({x})) {
    r->parents = {x};
    r->backward_fn = [x, B, C, H, W, Ho, Wo, taps](Node& self) {
      Tensor& gx = x->ensure_grad();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* pg = self.grad.data() + bc * Ho * Wo;
        double* p = gx.data() + bc * H * W;
        for (int64_t oh = 0; oh < Ho; ++oh) {
          int64_t h0, h1;
          double wh;
          taps(oh, H, h0, h1, wh);
          for (int64_t ow = 0; ow < Wo; ++ow) {
            int64_t w0, w1i;
            double ww;
            taps(ow, W, w0, w1i, ww);
            const double g = pg[oh * Wo + ow];
            p[h0 * W + w0] += g * (1 - wh) * (1 - ww);
            p[h0 * W + w1i] += g * (1 - wh) * ww;
            p[h1 * W + w0] += g * wh * (1 - ww);
            p[h1 * W + w1i] += g * wh * ww;
          }
        }
      }
    };
  }
  return r;
}

Var focal_loss(const Var& probs, const Tensor& target, double gamma, double floor) {
  if (gamma < 0.0) throw std::invalid_argument("focal_loss: gamma must be >= 0");
  if (!(floor > 0.0 && floor < 0.5)) {
    throw std::invalid_argument("focal_loss: probability floor must lie in (0, 0.5)");
  }
  if (probs->value.shape() != target.shape()) {
    throw std::invalid_argument("focal_loss: probs shape " + shape_to_string(probs->shape()) +
                                " does not match target shape " +
                                shape_to_string(target.shape()));
  }
  const int64_t n = probs->value.numel();
  if (n == 0) throw std::invalid_argument("focal_loss: empty input");
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double t = target[i];
    if (t != 0.0 && t != 1.0) {
      throw std::invalid_argument("focal_loss: target values must be exactly 0 or 1");
    }
    const double p = std::clamp(probs->value[i], floor, 1.0 - floor);
    const double pt = (t == 1.0) ? p : 1.0 - p;
    total += -std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  Tensor out({1});
  out[0] = total / static_cast<double>(n);
  Var r = make_var(std::move(out));
  if (tape_active({probs})) {
    r->parents = {probs};
    Tensor tgt = target;
    r->backward_fn = [probs, tgt = std::move(tgt), gamma, floor, n](Node& self) {
      Tensor& gp = probs->ensure_grad();
      const double g = self.grad[0] / static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i) {
        const double raw = probs->value[i];
        if (raw < floor || raw > 1.0 - floor) continue;  // clamped: zero slope
        const double t = tgt[i];
        const double pt = (t == 1.0) ? raw : 1.0 - raw;
        const double one_m = 1.0 - pt;
        double d_pt = -std::pow(one_m, gamma) / pt;
        if (gamma > 0.0) d_pt += gamma * std::pow(one_m, gamma - 1.0) * std::log(pt);
        const double d_p = (t == 1.0) ? d_pt : -d_pt;
        gp[i] += g * d_p;
      }
    };
  }
  return r;
}

}  // namespace ddunet
