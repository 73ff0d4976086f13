#pragma once

// Scalar loop-based reference implementations used as independent oracles.
// Everything here recomputes results from raw weight arrays with plain
// arithmetic; none of it calls into the library's forward paths.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ddunet/tensor.hpp"

namespace oracle {

using ddunet::Tensor;

inline double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double relu_ref(double x) { return x > 0.0 ? x : 0.0; }

// x (B,Ci,H,W), w (Co,Ci,kh,kw), bias (Co) or empty
inline Tensor conv2d_ref(const Tensor& x, const Tensor& w, const std::vector<double>& bias,
                         int64_t stride, int64_t pad, int64_t dilation) {
  const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = (H + 2 * pad - dilation * (kh - 1) - 1) / stride + 1;
  const int64_t Wo = (W + 2 * pad - dilation * (kw - 1) - 1) / stride + 1;
  Tensor out({B, Co, Ho, Wo});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(co)];
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t i = 0; i < kh; ++i)
              for (int64_t j = 0; j < kw; ++j) {
                const int64_t ih = oh * stride - pad + i * dilation;
                const int64_t iw = ow * stride - pad + j * dilation;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x.at(b, ci, ih, iw) * w.at(co, ci, i, j);
              }
          out.at(b, co, oh, ow) = acc;
        }
  return out;
}

// x (B,Ci,H,W), w (Ci,Co,kh,kw), bias (Co) or empty
inline Tensor conv_transpose2d_ref(const Tensor& x, const Tensor& w,
                                   const std::vector<double>& bias, int64_t stride,
                                   int64_t pad) {
  const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = (H - 1) * stride - 2 * pad + kh;
  const int64_t Wo = (W - 1) * stride - 2 * pad + kw;
  Tensor out({B, Co, Ho, Wo});
  if (!bias.empty()) {
    for (int64_t b = 0; b < B; ++b)
      for (int64_t co = 0; co < Co; ++co)
        for (int64_t i = 0; i < Ho * Wo; ++i)
          out[(b * Co + co) * Ho * Wo + i] = bias[static_cast<size_t>(co)];
  }
  for (int64_t b = 0; b < B; ++b)
    for (int64_t ci = 0; ci < Ci; ++ci)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t wI = 0; wI < W; ++wI)
          for (int64_t co = 0; co < Co; ++co)
            for (int64_t i = 0; i < kh; ++i)
              for (int64_t j = 0; j < kw; ++j) {
                const int64_t oh = h * stride - pad + i;
                const int64_t ow = wI * stride - pad + j;
                if (oh < 0 || oh >= Ho || ow < 0 || ow >= Wo) continue;
                out.at(b, co, oh, ow) += x.at(b, ci, h, wI) * w.at(ci, co, i, j);
              }
  return out;
}

// v (N,), W1 (hidden,C), b1 (hidden), W2 (C,hidden), b2 (C); relu between
inline std::vector<double> mlp_ref(const std::vector<double>& v, const Tensor& w1,
                                   const Tensor& b1, const Tensor& w2, const Tensor& b2,
                                   bool use_relu = true) {
  const int64_t hidden = w1.dim(0), C = w1.dim(1);
  std::vector<double> h(static_cast<size_t>(hidden));
  for (int64_t j = 0; j < hidden; ++j) {
    double acc = b1[j];
    for (int64_t c = 0; c < C; ++c) acc += w1.at(j, c) * v[static_cast<size_t>(c)];
    h[static_cast<size_t>(j)] = use_relu ? relu_ref(acc) : acc;
  }
  std::vector<double> out(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) {
    double acc = b2[c];
    for (int64_t j = 0; j < hidden; ++j) acc += w2.at(c, j) * h[static_cast<size_t>(j)];
    out[static_cast<size_t>(c)] = acc;
  }
  return out;
}

// sigmoid(MLP(avg-pool) + MLP(max-pool)), shape (B,C)
inline Tensor channel_attention_ref(const Tensor& f, const Tensor& w1, const Tensor& b1,
                                    const Tensor& w2, const Tensor& b2) {
  const int64_t B = f.dim(0), C = f.dim(1), hw = f.dim(2) * f.dim(3);
  Tensor gate({B, C});
  for (int64_t b = 0; b < B; ++b) {
    std::vector<double> avg(static_cast<size_t>(C)), mx(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c) {
      double s = 0.0, m = f[(b * C + c) * hw];
      for (int64_t i = 0; i < hw; ++i) {
        const double v = f[(b * C + c) * hw + i];
        s += v;
        m = std::max(m, v);
      }
      avg[static_cast<size_t>(c)] = s / static_cast<double>(hw);
      mx[static_cast<size_t>(c)] = m;
    }
    const auto a = mlp_ref(avg, w1, b1, w2, b2);
    const auto m = mlp_ref(mx, w1, b1, w2, b2);
    for (int64_t c = 0; c < C; ++c) {
      gate.at(b, c) = sigmoid_ref(a[static_cast<size_t>(c)] + m[static_cast<size_t>(c)]);
    }
  }
  return gate;
}

// sigmoid(conv7x7([channel-avg; channel-max])), shape (B,1,H,W)
inline Tensor spatial_attention_ref(const Tensor& f, const Tensor& kernel, double bias) {
  const int64_t B = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
  Tensor stacked({B, 2, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        double s = 0.0, m = f.at(b, 0, h, w);
        for (int64_t c = 0; c < C; ++c) {
          const double v = f.at(b, c, h, w);
          s += v;
          m = std::max(m, v);
        }
        stacked.at(b, 0, h, w) = s / static_cast<double>(C);
        stacked.at(b, 1, h, w) = m;
      }
  Tensor conv = conv2d_ref(stacked, kernel, {bias}, 1, 3, 1);
  for (int64_t i = 0; i < conv.numel(); ++i) conv[i] = sigmoid_ref(conv[i]);
  return conv;
}

struct CbamWeights {
  Tensor w1, b1, w2, b2;  // shared MLP
  Tensor spatial_kernel;  // (1,2,7,7)
  double spatial_bias = 0.0;
};

// channel gate applied first, spatial gate computed on the gated map
inline Tensor cbam_ref(const Tensor& f, const CbamWeights& wts) {
  const int64_t B = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
  const Tensor mc = channel_attention_ref(f, wts.w1, wts.b1, wts.w2, wts.b2);
  Tensor gated(f.shape());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w)
          gated.at(b, c, h, w) = f.at(b, c, h, w) * mc.at(b, c);
  const Tensor ms = spatial_attention_ref(gated, wts.spatial_kernel, wts.spatial_bias);
  Tensor out(f.shape());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w)
          out.at(b, c, h, w) = gated.at(b, c, h, w) * ms.at(b, 0, h, w);
  return out;
}

// train-mode batch normalization with biased variance
inline Tensor batch_norm_ref(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                             double eps = 1e-5) {
  const int64_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out(x.shape());
  for (int64_t c = 0; c < C; ++c) {
    double mean = 0.0;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < hw; ++i) mean += x[(b * C + c) * hw + i];
    mean /= static_cast<double>(B * hw);
    double var = 0.0;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < hw; ++i) {
        const double d = x[(b * C + c) * hw + i] - mean;
        var += d * d;
      }
    var /= static_cast<double>(B * hw);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < hw; ++i) {
        out[(b * C + c) * hw + i] = gamma[c] * (x[(b * C + c) * hw + i] - mean) * inv + beta[c];
      }
  }
  return out;
}

inline Tensor relu_map(Tensor t) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = relu_ref(t[i]);
  return t;
}

inline Tensor concat_channels_ref(const std::vector<Tensor>& xs) {
  const int64_t B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int64_t C = 0;
  for (const auto& x : xs) C += x.dim(1);
  Tensor out({B, C, H, W});
  for (int64_t b = 0; b < B; ++b) {
    int64_t co = 0;
    for (const auto& x : xs) {
      for (int64_t c = 0; c < x.dim(1); ++c)
        for (int64_t i = 0; i < H * W; ++i)
          out[(b * C + co + c) * H * W + i] = x[(b * x.dim(1) + c) * H * W + i];
      co += x.dim(1);
    }
  }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
