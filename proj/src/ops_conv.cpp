#include <Eigen/Core>

#include "ddunet/ops.hpp"

namespace ddunet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

bool wants_grad(const Var& v) { return v && (v->requires_grad || v->backward_fn); }

int64_t conv_out_dim(int64_t in, int64_t kernel, int64_t stride, int64_t pad, int64_t dilation) {
  return (in + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1;
}

// Unfolds one (C,H,W) image into a (C*kh*kw) x (Ho*Wo) matrix.
void im2col(const double* src, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t dilation, int64_t Ho, int64_t Wo,
            double* col) {
  const int64_t cols = Ho * Wo;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < kh; ++i) {
      for (int64_t j = 0; j < kw; ++j) {
        double* row = col + ((c * kh + i) * kw + j) * cols;
        const double* plane = src + c * H * W;
        for (int64_t oh = 0; oh < Ho; ++oh) {
          const int64_t ih = oh * stride - pad + i * dilation;
          if (ih < 0 || ih >= H) {
            std::fill_n(row + oh * Wo, Wo, 0.0);
            continue;
          }
          for (int64_t ow = 0; ow < Wo; ++ow) {
            const int64_t iw = ow * stride - pad + j * dilation;
            row[oh * Wo + ow] = (iw >= 0 && iw < W) ? plane[ih * W + iw] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-adds a column matrix back onto one (C,H,W) image.
void col2im(const double* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t dilation, int64_t Ho, int64_t Wo,
            double* dst) {
  const int64_t cols = Ho * Wo;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < kh; ++i) {
      for (int64_t j = 0; j < kw; ++j) {
        const double* row = col + ((c * kh + i) * kw + j) * cols;
        double* plane = dst + c * H * W;
        for (int64_t oh = 0; oh < Ho; ++oh) {
          const int64_t ih = oh * stride - pad + i * dilation;
          if (ih < 0 || ih >= H) continue;
          for (int64_t ow = 0; ow < Wo; ++ow) {
            const int64_t iw = ow * stride - pad + j * dilation;
            if (iw >= 0 && iw < W) plane[ih * W + iw] += row[oh * Wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad,
           int64_t dilation) {
  if (x->value.rank() != 4) {
    throw ShapeError("conv2d: expected 4-d input, got " + shape_to_string(x->shape()));
  }
  if (w->value.rank() != 4) {
    throw ShapeError("conv2d: expected 4-d weight, got " + shape_to_string(w->shape()));
  }
  if (stride < 1 || dilation < 1 || pad < 0) {
    throw std::invalid_argument("conv2d: invalid stride/pad/dilation");
  }
  const int64_t B = x->dim(0), Ci = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int64_t Co = w->dim(0), kh = w->dim(2), kw = w->dim(3);
  if (w->dim(1) != Ci) {
    throw ConfigError("conv2d: weight expects " + std::to_string(w->dim(1)) +
                      " input channels, input has " + std::to_string(Ci));
  }
  if (b && (b->value.rank() != 1 || b->dim(0) != Co)) {
    throw ConfigError("conv2d: bias shape " + shape_to_string(b->shape()) +
                      " does not match " + std::to_string(Co) + " output channels");
  }
  const int64_t Ho = conv_out_dim(H, kh, stride, pad, dilation);
  const int64_t Wo = conv_out_dim(W, kw, stride, pad, dilation);
  if (Ho < 1 || Wo < 1) {
    throw ShapeError("conv2d: output would be empty for input " + shape_to_string(x->shape()));
  }
  const int64_t K = Ci * kh * kw;
  const int64_t cols = Ho * Wo;

  Tensor out({B, Co, Ho, Wo});
  {
    std::vector<double> col(static_cast<size_t>(K * cols));
    for (int64_t n = 0; n < B; ++n) {
      im2col(x->value.data() + n * Ci * H * W, Ci, H, W, kh, kw, stride, pad, dilation, Ho, Wo,
             col.data());
      MatMap(out.data() + n * Co * cols, Co, cols).noalias() =
          ConstMatMap(w->value.data(), Co, K) * ConstMatMap(col.data(), K, cols);
      if (b) {
        for (int64_t c = 0; c < Co; ++c) {
          double* p = out.data() + (n * Co + c) * cols;
          const double bias = b->value[c];
          for (int64_t i = 0; i < cols; ++i) p[i] += bias;
        }
      }
    }
  }

  Var r = make_var(std::move(out));
  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  if (tape_active(parents)) {
    r->parents = parents;
    r->backward_fn = [x, w, b, stride, pad, dilation, B, Ci, H, W, Co, kh, kw, Ho, Wo, K,
                      cols](Node& self) {
      std::vector<double> col(static_cast<size_t>(K * cols));
      const bool need_gx = wants_grad(x);
      const bool need_gw = wants_grad(w);
      if (need_gx) x->ensure_grad();
      if (need_gw) w->ensure_grad();
      for (int64_t n = 0; n < B; ++n) {
        ConstMatMap g(self.grad.data() + n * Co * cols, Co, cols);
        if (need_gw) {
          im2col(x->value.data() + n * Ci * H * W, Ci, H, W, kh, kw, stride, pad, dilation, Ho,
                 Wo, col.data());
          MatMap(w->grad.data(), Co, K).noalias() +=
              g * ConstMatMap(col.data(), K, cols).transpose();
        }
        if (need_gx) {
          MatMap(col.data(), K, cols).noalias() =
              ConstMatMap(w->value.data(), Co, K).transpose() * g;
          col2im(col.data(), Ci, H, W, kh, kw, stride, pad, dilation, Ho, Wo,
                 x->grad.data() + n * Ci * H * W);
        }
      }
      if (b && wants_grad(b)) {
        Tensor& gb = b->ensure_grad();
        for (int64_t n = 0; n < B; ++n)
          for (int64_t c = 0; c < Co; ++c) {
            const double* p = self.grad.data() + (n * Co + c) * cols;
            double s = 0.0;
            for (int64_t i = 0; i < cols; ++i) s += p[i];
            gb[c] += s;
          }
      }
    };
  }
  return r;
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad) {
  if (x->value.rank() != 4 || w->value.rank() != 4) {
    throw ShapeError("conv_transpose2d: expected 4-d input and weight");
  }
  if (stride < 1 || pad < 0) {
    throw std::invalid_argument("conv_transpose2d: invalid stride/pad");
  }
  const int64_t B = x->dim(0), Ci = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int64_t Co = w->dim(1), kh = w->dim(2), kw = w->dim(3);
  if (w->dim(0) != Ci) {
    throw ConfigError("conv_transpose2d: weight expects " + std::to_string(w->dim(0)) +
                      " input channels, input has " + std::to_string(Ci));
  }
  if (b && (b->value.rank() != 1 || b->dim(0) != Co)) {
    throw ConfigError("conv_transpose2d: bias/channel mismatch");
  }
  const int64_t Ho = (H - 1) * stride - 2 * pad + kh;
  const int64_t Wo = (W - 1) * stride - 2 * pad + kw;
  if (Ho < 1 || Wo < 1) throw ShapeError("conv_transpose2d: output would be empty");
  const int64_t K = Co * kh * kw;
  const int64_t cols = H * W;

  Tensor out({B, Co, Ho, Wo});
  {
    std::vector<double> col(static_cast<size_t>(K * cols));
    for (int64_t n = 0; n < B; ++n) {
      // col = W^T (K x Ci) * x (Ci x HW), then scatter onto the output grid
      MatMap(col.data(), K, cols).noalias() =
          ConstMatMap(w->value.data(), Ci, K).transpose() *
          ConstMatMap(x->value.data() + n * Ci * cols, Ci, cols);
      col2im(col.data(), Co, Ho, Wo, kh, kw, stride, pad, 1, H, W,
             out.data() + n * Co * Ho * Wo);
      if (b) {
        for (int64_t c = 0; c < Co; ++c) {
          double* p = out.data() + (n * Co + c) * Ho * Wo;
          const double bias = b->value[c];
          for (int64_t i = 0; i < Ho * Wo; ++i) p[i] += bias;
        }
      }
    }
  }

  Var r = make_var(std::move(out));
  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  if (tape_active(parents)) {
    r->parents = parents;
    r->backward_fn = [x, w, b, stride, pad, B, Ci, H, W, Co, kh, kw, Ho, Wo, K,
                      cols](Node& self) {
      const bool need_gx = wants_grad(x);
      const bool need_gw = wants_grad(w);
      if (need_gx) x->ensure_grad();
      if (need_gw) w->ensure_grad();
      std::vector<double> col(static_cast<size_t>(K * cols));
      for (int64_t n = 0; n < B; ++n) {
        // columns of the output gradient over the input grid
        im2col(self.grad.data() + n * Co * Ho * Wo, Co, Ho, Wo, kh, kw, stride, pad, 1, H, W,
               col.data());
        if (need_gx) {
          MatMap(x->grad.data() + n * Ci * cols, Ci, cols).noalias() +=
              ConstMatMap(w->value.data(), Ci, K) * ConstMatMap(col.data(), K, cols);
        }
        if (need_gw) {
          MatMap(w->grad.data(), Ci, K).noalias() +=
              ConstMatMap(x->value.data() + n * Ci * cols, Ci, cols) *
              ConstMatMap(col.data(), K, cols).transpose();
        }
      }
      if (b && wants_grad(b)) {
        Tensor& gb = b->ensure_grad();
        for (int64_t n = 0; n < B; ++n)
          for (int64_t c = 0; c < Co; ++c) {
            const double* p = self.grad.data() + (n * Co + c) * Ho * Wo;
            double s = 0.0;
            for (int64_t i = 0; i < Ho * Wo; ++i) s += p[i];
            gb[c] += s;
          }
      }
    };
  }
  return r;
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x->value.rank() != 2 || w->value.rank() != 2) {
    throw ShapeError("linear: expected 2-d input and weight");
  }
  const int64_t N = x->dim(0), In = x->dim(1), Out = w->dim(0);
  if (w->dim(1) != In) {
    throw ConfigError("linear: weight expects " + std::to_string(w->dim(1)) +
                      " input features, input has " + std::to_string(In));
  }
  if (b && (b->value.rank() != 1 || b->dim(0) != Out)) {
    throw ConfigError("linear: bias/feature mismatch");
  }
  Tensor out({N, Out});
  MatMap(out.data(), N, Out).noalias() =
      ConstMatMap(x->value.data(), N, In) * ConstMatMap(w->value.data(), Out, In).transpose();
  if (b) {
    for (int64_t n = 0; n < N; ++n)
      for (int64_t o = 0; o < Out; ++o) out.at(n, o) += b->value[o];
  }
  Var r = make_var(std::move(out));
  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  if (tape_active(parents)) {
    r->parents = parents;
    r->backward_fn = [x, w, b, N, In, Out](Node& self) {
      ConstMatMap g(self.grad.data(), N, Out);
      if (wants_grad(x)) {
        MatMap(x->ensure_grad().data(), N, In).noalias() +=
            g * ConstMatMap(w->value.data(), Out, In);
      }
      if (wants_grad(w)) {
        MatMap(w->ensure_grad().data(), Out, In).noalias() +=
            g.transpose() * ConstMatMap(x->value.data(), N, In);
      }
      if (b && wants_grad(b)) {
        Tensor& gb = b->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t o = 0; o < Out; ++o) gb[o] += self.grad.at(n, o);
      }
    };
  }
  return r;
}

}  // namespace ddunet
