#include "ddunet/nn.hpp"

#include <cmath>

namespace ddunet {

Var he_normal_param(Rng& rng, Shape shape, int64_t fan_in) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
  return make_param(std::move(t));
}

Conv2d::Conv2d(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride,
               int64_t pad, int64_t dilation, bool bias)
    : stride_(stride), pad_(pad), dilation_(dilation) {
  weight = he_normal_param(rng, {out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel);
  if (bias) this->bias = make_param(Tensor({out_ch}));
}

void Conv2d::collect(const std::string& prefix, ParamSink& sink) {
  sink.add_param(join_name(prefix, "weight"), weight);
  if (bias) sink.add_param(join_name(prefix, "bias"), bias);
}

ConvTranspose2d::ConvTranspose2d(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t kernel,
                                 int64_t stride, int64_t pad, bool bias)
    : stride_(stride), pad_(pad) {
  weight = he_normal_param(rng, {in_ch, out_ch, kernel, kernel}, in_ch * kernel * kernel);
  if (bias) this->bias = make_param(Tensor({out_ch}));
}

void ConvTranspose2d::collect(const std::string& prefix, ParamSink& sink) {
  sink.add_param(join_name(prefix, "weight"), weight);
  if (bias) sink.add_param(join_name(prefix, "bias"), bias);
}

Linear::Linear(Rng& rng, int64_t in_features, int64_t out_features, bool bias) {
  weight = he_normal_param(rng, {out_features, in_features}, in_features);
  if (bias) this->bias = make_param(Tensor({out_features}));
}

void Linear::collect(const std::string& prefix, ParamSink& sink) {
  sink.add_param(join_name(prefix, "weight"), weight);
  if (bias) sink.add_param(join_name(prefix, "bias"), bias);
}

BatchNorm2d::BatchNorm2d(int64_t channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  gamma = make_param(Tensor({channels}, 1.0));
  beta = make_param(Tensor({channels}));
  running_mean = Tensor({channels});
  running_var = Tensor({channels}, 1.0);
}

Var BatchNorm2d::forward(const Var& x) {
  if (x->value.rank() != 4 || x->dim(1) != channels_) {
    throw ConfigError("batch_norm: expected (B," + std::to_string(channels_) +
                      ",H,W) input, got " + shape_to_string(x->shape()));
  }
  const int64_t B = x->dim(0), C = channels_, H = x->dim(2), W = x->dim(3);
  const int64_t hw = H * W;
  const int64_t n = B * hw;
  const bool use_batch_stats = training_ && !freeze_stats_;

  std::vector<double> mean(static_cast<size_t>(C));
  std::vector<double> inv_std(static_cast<size_t>(C));
  if (use_batch_stats) {
    for (int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const double* p = x->value.data() + (b * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
      }
      mean[static_cast<size_t>(c)] = s / static_cast<double>(n);
    }
    for (int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      const double m = mean[static_cast<size_t>(c)];
      for (int64_t b = 0; b < B; ++b) {
        const double* p = x->value.data() + (b * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const double d = p[i] - m;
          s += d * d;
        }
      }
      const double var = s / static_cast<double>(n);
      inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var + eps_);
      running_mean[c] = (1.0 - momentum_) * running_mean[c] + momentum_ * m;
      running_var[c] = (1.0 - momentum_) * running_var[c] + momentum_ * var;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = running_mean[c];
      inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(running_var[c] + eps_);
    }
  }

  Tensor out(x->shape());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const double m = mean[static_cast<size_t>(c)];
      const double is = inv_std[static_cast<size_t>(c)];
      const double g = gamma->value[c];
      const double bt = beta->value[c];
      const double* p = x->value.data() + (b * C + c) * hw;
      double* po = out.data() + (b * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) po[i] = g * (p[i] - m) * is + bt;
    }

  Var r = make_var(std::move(out));
  Var g_ = gamma;
  Var b_ = beta;
  if (tape_active({x, g_, b_})) {
    r->parents = {x, g_, b_};
    r->backward_fn = [x, g_, b_, mean = std::move(mean), inv_std = std::move(inv_std), B, C, hw,
                      n, use_batch_stats](Node& self) {
      const bool need_gx = x->requires_grad || x->backward_fn;
      if (need_gx) x->ensure_grad();
      Tensor& gg = g_->ensure_grad();
      Tensor& gb = b_->ensure_grad();
      for (int64_t c = 0; c < C; ++c) {
        const double m = mean[static_cast<size_t>(c)];
        const double is = inv_std[static_cast<size_t>(c)];
        double sum_g = 0.0, sum_gx = 0.0;
        for (int64_t b = 0; b < B; ++b) {
          const double* pg = self.grad.data() + (b * C + c) * hw;
          const double* px = x->value.data() + (b * C + c) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            sum_g += pg[i];
            sum_gx += pg[i] * (px[i] - m) * is;
          }
        }
        gb[c] += sum_g;
        gg[c] += sum_gx;
        if (!need_gx) continue;
        const double gam = g_->value[c];
        if (use_batch_stats) {
          // d/dx of batch-statistics normalization
          const double inv_n = 1.0 / static_cast<double>(n);
          for (int64_t b = 0; b < B; ++b) {
            const double* pg = self.grad.data() + (b * C + c) * hw;
            const double* px = x->value.data() + (b * C + c) * hw;
            double* p = x->grad.data() + (b * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              const double xn = (px[i] - m) * is;
              p[i] += gam * is * (pg[i] - inv_n * sum_g - xn * inv_n * sum_gx);
            }
          }
        } else {
          for (int64_t b = 0; b < B; ++b) {
            const double* pg = self.grad.data() + (b * C + c) * hw;
            double* p = x->grad.data() + (b * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += gam * is * pg[i];
          }
        }
      }
    };
  }
  return r;
}

void BatchNorm2d::collect(const std::string& prefix, ParamSink& sink) {
  sink.add_param(join_name(prefix, "gamma"), gamma);
  sink.add_param(join_name(prefix, "beta"), beta);
  sink.add_buffer(join_name(prefix, "running_mean"), &running_mean);
  sink.add_buffer(join_name(prefix, "running_var"), &running_var);
}

ConvBnRelu::ConvBnRelu(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride,
                       int64_t pad, int64_t dilation)
    : conv(rng, in_ch, out_ch, kernel, stride, pad, dilation, /*bias=*/false), bn(out_ch) {}

void ConvBnRelu::collect(const std::string& prefix, ParamSink& sink) {
  conv.collect(join_name(prefix, "conv"), sink);
  bn.collect(join_name(prefix, "bn"), sink);
}

}  // namespace ddunet
