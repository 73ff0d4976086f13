#include "ddunet/attention.hpp"

#include <algorithm>

namespace ddunet {

CbamBlock::CbamBlock(Rng& rng, int64_t channels, CbamConfig cfg)
    : channels_(channels), cfg_(cfg) {
  if (channels < 1) throw ConfigError("cbam: channel count must be positive");
  if (cfg.reduction < 1) throw ConfigError("cbam: reduction ratio must be positive");
  hidden_ = std::max<int64_t>(1, channels / cfg.reduction);
  fc1 = Linear(rng, channels, hidden_);
  fc2 = Linear(rng, hidden_, channels);
  spatial_conv = Conv2d(rng, 2, 1, 7, /*stride=*/1,
                        /*pad=*/cfg.spatial_padding == PadMode::Zero ? 3 : 0);
}

void CbamBlock::check_input(const Var& f) const {
  if (f->value.rank() != 4) {
    throw ShapeError("cbam: expected 4-d feature map, got " + shape_to_string(f->shape()));
  }
  if (f->dim(1) != channels_) {
    throw ConfigError("cbam: parameters sized for " + std::to_string(channels_) +
                      " channels, input has " + std::to_string(f->dim(1)));
  }
  if (f->dim(2) < 1 || f->dim(3) < 1) {
    throw std::invalid_argument("cbam: spatial dims must be >= 1, got " +
                                shape_to_string(f->shape()));
  }
}

Var CbamBlock::mlp(const Var& v) const {
  Var h = fc1.forward(v);
  if (cfg_.mlp_activation == MlpActivation::Relu) h = relu(h);
  return fc2.forward(h);
}

Var CbamBlock::channel_attention(const Var& f) const {
  check_input(f);
  Var avg = global_avg_pool(f);
  Var mx = global_max_pool(f);
  return sigmoid(add(mlp(avg), mlp(mx)));
}

Var CbamBlock::spatial_attention(const Var& f) const {
  check_input(f);
  Var stacked = concat_channels({channel_mean(f), channel_max(f)});
  if (cfg_.spatial_padding == PadMode::Reflect) {
    stacked = reflect_pad2d(stacked, 3);
  }
  return sigmoid(spatial_conv.forward(stacked));
}

Var CbamBlock::forward(const Var& f) const {
  check_input(f);
  require_finite(f->value, "cbam input");
  Var gated = scale_by_channel(f, channel_attention(f));
  return scale_by_spatial(gated, spatial_attention(gated));
}

void CbamBlock::collect(const std::string& prefix, ParamSink& sink) {
  fc1.collect(join_name(prefix, "mlp.fc1"), sink);
  fc2.collect(join_name(prefix, "mlp.fc2"), sink);
  spatial_conv.collect(join_name(prefix, "spatial_conv"), sink);
}

}  // namespace ddunet
