#pragma once

#include <vector>

#include "ddunet/autograd.hpp"

namespace ddunet {

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var mul_scalar(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);

Var reshape(const Var& a, Shape shape);

// ---- reductions / broadcasts ----
Var mean_all(const Var& a);                        // -> scalar
Var global_avg_pool(const Var& x);                 // (B,C,H,W) -> (B,C)
Var global_max_pool(const Var& x);                 // (B,C,H,W) -> (B,C)
Var channel_mean(const Var& x);                    // (B,C,H,W) -> (B,1,H,W)
Var channel_max(const Var& x);                     // (B,C,H,W) -> (B,1,H,W)
Var broadcast_spatial(const Var& v, int64_t h, int64_t w);  // (B,C) -> (B,C,h,w)
Var scale_by_channel(const Var& x, const Var& s);  // x (B,C,H,W) * s (B,C)
Var scale_by_spatial(const Var& x, const Var& s);  // x (B,C,H,W) * s (B,1,H,W)
Var concat_channels(const std::vector<Var>& xs);

// ---- dense ----
// x (N,in), w (out,in), b (out) or null
Var linear(const Var& x, const Var& w, const Var& b);

// ---- convolutions ----
// x (B,Ci,H,W), w (Co,Ci,kh,kw), b (Co) or null
Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad,
           int64_t dilation = 1);
// x (B,Ci,H,W), w (Ci,Co,kh,kw), b (Co) or null; output (B,Co,(H-1)*stride-2*pad+kh,...)
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad);

// ---- pooling / resampling ----
Var max_pool2d(const Var& x, int64_t kernel, int64_t stride, int64_t pad);
Var reflect_pad2d(const Var& x, int64_t pad);
Var bilinear_upsample2x(const Var& x);

// ---- losses ----
/// Mean over elements of -(1-p_t)^gamma * ln(p_t) with p clamped to
/// [floor, 1-floor]; target values must be exactly 0 or 1.
Var focal_loss(const Var& probs, const Tensor& target, double gamma, double floor);

}  // namespace ddunet
