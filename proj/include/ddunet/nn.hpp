#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ddunet/ops.hpp"
#include "ddunet/rng.hpp"

namespace ddunet {

/// Collects named parameters and stateful buffers while walking a model.
struct ParamSink {
  std::vector<std::pair<std::string, Var>> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;

  void add_param(const std::string& name, const Var& v) { params.emplace_back(name, v); }
  void add_buffer(const std::string& name, Tensor* t) { buffers.emplace_back(name, t); }
};

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

Var he_normal_param(Rng& rng, Shape shape, int64_t fan_in);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride, int64_t pad,
         int64_t dilation = 1, bool bias = true);

  Var forward(const Var& x) const { return conv2d(x, weight, bias, stride_, pad_, dilation_); }
  void collect(const std::string& prefix, ParamSink& sink);

  Var weight;
  Var bias;  // null when constructed without bias

 private:
  int64_t stride_ = 1, pad_ = 0, dilation_ = 1;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride,
                  int64_t pad, bool bias = true);

  Var forward(const Var& x) const { return conv_transpose2d(x, weight, bias, stride_, pad_); }
  void collect(const std::string& prefix, ParamSink& sink);

  Var weight;
  Var bias;

 private:
  int64_t stride_ = 1, pad_ = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(Rng& rng, int64_t in_features, int64_t out_features, bool bias = true);

  Var forward(const Var& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, ParamSink& sink);

  Var weight;
  Var bias;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int64_t channels, double eps = 1e-5, double momentum = 0.1);

  Var forward(const Var& x);
  void collect(const std::string& prefix, ParamSink& sink);
  void set_training(bool training) { training_ = training; }
  /// When frozen, batch statistics are neither used nor updated; the layer
  /// normalizes with its running estimates even in training mode.
  void set_freeze_stats(bool freeze) { freeze_stats_ = freeze; }

  Var gamma;
  Var beta;
  Tensor running_mean;
  Tensor running_var;

 private:
  int64_t channels_ = 0;
  double eps_ = 1e-5;
  double momentum_ = 0.1;
  bool training_ = true;
  bool freeze_stats_ = false;
};

/// conv -> batch norm -> rectifier, the encoder's standard unit.
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride,
             int64_t pad, int64_t dilation = 1);

  Var forward(const Var& x) { return relu(bn.forward(conv.forward(x))); }
  void collect(const std::string& prefix, ParamSink& sink);
  void set_training(bool training) { bn.set_training(training); }

  Conv2d conv;
  BatchNorm2d bn;
};

}  // namespace ddunet
