#include "ddunet/decoder.hpp"

#include <algorithm>
#include <cmath>

namespace ddunet {

DecoderConfig DecoderConfig::defaults_for(const std::array<int64_t, 5>& encoder_channels) {
  DecoderConfig cfg;
  for (int i = 0; i < 4; ++i) {
    cfg.large_channels[static_cast<size_t>(i)] =
        std::max<int64_t>(1, encoder_channels[4] >> (i + 1));
  }
  cfg.small_channels = {std::max<int64_t>(1, encoder_channels[2] / 2),
                        std::max<int64_t>(1, encoder_channels[2] / 4)};
  return cfg;
}

UpBlock::UpBlock(Rng& rng, int64_t in_ch, int64_t skip_ch, int64_t out_ch, UpsampleMode mode)
    : mode_(mode), skip_ch_(skip_ch) {
  if (mode == UpsampleMode::TransposedConv) {
    up_tconv_ = ConvTranspose2d(rng, in_ch, out_ch, 2, 2, 0, /*bias=*/false);
  } else {
    up_conv_ = Conv2d(rng, in_ch, out_ch, 3, 1, 1, 1, /*bias=*/false);
  }
  up_bn_ = BatchNorm2d(out_ch);
  merge_ = ConvBnRelu(rng, out_ch + skip_ch, out_ch, 3, 1, 1);
}

Var UpBlock::forward(const Var& x, const Var& skip) {
  Var up = mode_ == UpsampleMode::TransposedConv
               ? up_tconv_.forward(x)
               : up_conv_.forward(bilinear_upsample2x(x));
  up = relu(up_bn_.forward(up));
  if (skip_ch_ > 0) {
    if (!skip) throw ShapeError("up block: missing skip input");
    up = concat_channels({up, skip});
  }
  return merge_.forward(up);
}

void UpBlock::collect(const std::string& prefix, ParamSink& sink) {
  if (mode_ == UpsampleMode::TransposedConv) {
    up_tconv_.collect(join_name(prefix, "up"), sink);
  } else {
    up_conv_.collect(join_name(prefix, "up"), sink);
  }
  up_bn_.collect(join_name(prefix, "up_bn"), sink);
  merge_.collect(join_name(prefix, "merge"), sink);
}

void UpBlock::set_training(bool training) {
  up_bn_.set_training(training);
  merge_.set_training(training);
}

LargeDecoder::LargeDecoder(Rng& rng, const std::array<int64_t, 5>& encoder_channels,
                           const DecoderConfig& cfg) {
  int64_t in_ch = encoder_channels[4];
  for (int i = 0; i < 4; ++i) {
    // skips walk the pyramid top-down: stage 4, 3, 2, 1
    const int64_t skip_ch = encoder_channels[static_cast<size_t>(3 - i)];
    stages_[static_cast<size_t>(i)] =
        UpBlock(rng, in_ch, skip_ch, cfg.large_channels[static_cast<size_t>(i)], cfg.upsample);
    in_ch = cfg.large_channels[static_cast<size_t>(i)];
  }
  out_channels_ = in_ch;
}

Var LargeDecoder::forward(const FeaturePyramid& pyramid, const Var& dcam_out) {
  if (dcam_out->value.shape() != pyramid.stages[4]->value.shape()) {
    throw ShapeError("large decoder: context input " + shape_to_string(dcam_out->shape()) +
                     " must match stage-5 shape " +
                     shape_to_string(pyramid.stages[4]->shape()));
  }
  Var x = dcam_out;
  for (int i = 0; i < 4; ++i) {
    const Var& skip = pyramid.stages[static_cast<size_t>(3 - i)];
    const int64_t want_h = x->dim(2) * 2, want_w = x->dim(3) * 2;
    if (skip->dim(2) != want_h || skip->dim(3) != want_w) {
      throw ShapeError("large decoder: skip stage " + std::to_string(4 - i) + " has shape " +
                       shape_to_string(skip->shape()) + ", expected spatial " +
                       std::to_string(want_h) + "x" + std::to_string(want_w));
    }
    x = stages_[static_cast<size_t>(i)].forward(x, skip);
  }
  return x;
}

void LargeDecoder::collect(const std::string& prefix, ParamSink& sink) {
  for (size_t i = 0; i < stages_.size(); ++i) {
    stages_[i].collect(join_name(prefix, "up" + std::to_string(i)), sink);
  }
}

void LargeDecoder::set_training(bool training) {
  for (auto& s : stages_) s.set_training(training);
}

SmallDecoder::SmallDecoder(Rng& rng, int64_t stage3_channels, const DecoderConfig& cfg)
    : in_channels_(stage3_channels) {
  stages_[0] = UpBlock(rng, stage3_channels, 0, cfg.small_channels[0], cfg.upsample);
  stages_[1] = UpBlock(rng, cfg.small_channels[0], 0, cfg.small_channels[1], cfg.upsample);
  out_channels_ = cfg.small_channels[1];
}

Var SmallDecoder::forward(const Var& stage3) {
  if (stage3->value.rank() != 4 || stage3->dim(1) != in_channels_) {
    throw ShapeError("small decoder: expected stride-8 tap with " +
                     std::to_string(in_channels_) + " channels, got " +
                     shape_to_string(stage3->shape()));
  }
  Var x = stages_[0].forward(stage3, nullptr);
  return stages_[1].forward(x, nullptr);
}

void SmallDecoder::collect(const std::string& prefix, ParamSink& sink) {
  stages_[0].collect(join_name(prefix, "up0"), sink);
  stages_[1].collect(join_name(prefix, "up1"), sink);
}

void SmallDecoder::set_training(bool training) {
  for (auto& s : stages_) s.set_training(training);
}

FuseHead::FuseHead(Rng& rng, int64_t large_ch, int64_t small_ch, const DecoderConfig& cfg)
    : small_ch_(small_ch), mode_(cfg.upsample) {
  const int64_t fused = cfg.fused_channels;
  fuse_conv_ = Conv2d(rng, large_ch + small_ch, fused, 1, 1, 0);
  const int64_t head_mid = std::max<int64_t>(1, fused / 4);
  if (mode_ == UpsampleMode::TransposedConv) {
    up_tconv_ = ConvTranspose2d(rng, fused, head_mid, 2, 2, 0);
  } else {
    up_conv_ = Conv2d(rng, fused, head_mid, 3, 1, 1);
  }
  head_conv_ = Conv2d(rng, head_mid, 1, 3, 1, 1);
}

FuseHead::Result FuseHead::forward(const Var& large_f, const Var& small_f) {
  Var stacked;
  if (small_ch_ > 0) {
    if (!small_f) throw ShapeError("fuse head: missing small-decoder input");
    if (large_f->dim(2) != small_f->dim(2) || large_f->dim(3) != small_f->dim(3)) {
      throw ShapeError("fuse head: decoder outputs disagree spatially: " +
                       shape_to_string(large_f->shape()) + " vs " +
                       shape_to_string(small_f->shape()));
    }
    stacked = concat_channels({large_f, small_f});
  } else {
    stacked = large_f;
  }
  Result r;
  r.fused = relu(fuse_conv_.forward(stacked));
  Var up = mode_ == UpsampleMode::TransposedConv
               ? up_tconv_.forward(r.fused)
               : up_conv_.forward(bilinear_upsample2x(r.fused));
  r.logits = head_conv_.forward(relu(up));
  return r;
}

void FuseHead::collect(const std::string& prefix, ParamSink& sink) {
  fuse_conv_.collect(join_name(prefix, "fuse_conv"), sink);
  if (mode_ == UpsampleMode::TransposedConv) {
    up_tconv_.collect(join_name(prefix, "up"), sink);
  } else {
    up_conv_.collect(join_name(prefix, "up"), sink);
  }
  head_conv_.collect(join_name(prefix, "head_conv"), sink);
}

void FuseHead::set_training(bool) {}

Tensor predict_mask(const Tensor& logits, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("predict_mask: threshold must lie strictly inside (0,1)");
  }
  if (logits.rank() != 4 || logits.dim(1) != 1) {
    throw ShapeError("predict_mask: expected single-channel logits, got " +
                     shape_to_string(logits.shape()));
  }
  Tensor mask(logits.shape());
  const int64_t n = logits.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits[i]));
    mask[i] = p >= threshold ? 1.0 : 0.0;
  }
  return mask;
}

}  // namespace ddunet
