#pragma once

#include <array>
#include <optional>

#include "ddunet/encoder.hpp"

namespace ddunet {

enum class UpsampleMode { TransposedConv, BilinearConv };

struct DecoderConfig {
  std::array<int64_t, 4> large_channels{};  // per up-stage widths, strides 16,8,4,2
  std::array<int64_t, 2> small_channels{};  // strides 4,2
  int64_t fused_channels = 256;
  UpsampleMode upsample = UpsampleMode::TransposedConv;

  /// Halving widths per up-stage, from stage-5 width for the large decoder
  /// and stage-3 width for the small one.
  static DecoderConfig defaults_for(const std::array<int64_t, 5>& encoder_channels);
};

/// One x2 up-stage: lift resolution, then merge the skip (when present) and
/// refine with a 3x3 conv-bn-relu.
class UpBlock {
 public:
  UpBlock() = default;
  UpBlock(Rng& rng, int64_t in_ch, int64_t skip_ch, int64_t out_ch, UpsampleMode mode);

  Var forward(const Var& x, const Var& skip);
  void collect(const std::string& prefix, ParamSink& sink);
  void set_training(bool training);

 private:
  UpsampleMode mode_ = UpsampleMode::TransposedConv;
  int64_t skip_ch_ = 0;
  ConvTranspose2d up_tconv_;
  Conv2d up_conv_;  // bilinear mode
  BatchNorm2d up_bn_;
  ConvBnRelu merge_;
};

/// Full-depth decoder over the context-module output plus the four skip taps.
class LargeDecoder {
 public:
  LargeDecoder() = default;
  LargeDecoder(Rng& rng, const std::array<int64_t, 5>& encoder_channels,
               const DecoderConfig& cfg);

  /// dcam_out must match the stage-5 shape; result sits at stride 2.
  Var forward(const FeaturePyramid& pyramid, const Var& dcam_out);
  void collect(const std::string& prefix, ParamSink& sink);
  void set_training(bool training);
  int64_t out_channels() const { return out_channels_; }

 private:
  std::array<UpBlock, 4> stages_;
  int64_t out_channels_ = 0;
};

/// Shallow decoder lifting the stride-8 tap to stride 2 in two up-stages.
class SmallDecoder {
 public:
  SmallDecoder() = default;
  SmallDecoder(Rng& rng, int64_t stage3_channels, const DecoderConfig& cfg);

  Var forward(const Var& stage3);
  void collect(const std::string& prefix, ParamSink& sink);
  void set_training(bool training);
  int64_t out_channels() const { return out_channels_; }

 private:
  std::array<UpBlock, 2> stages_;
  int64_t in_channels_ = 0;
  int64_t out_channels_ = 0;
};

/// Fusion of the decoder streams and the segmentation head: concat ->
/// 1x1 conv to fused_channels -> relu, then one x2 lift and a 3x3 conv to a
/// single logit channel at the input resolution.
class FuseHead {
 public:
  FuseHead() = default;
  FuseHead(Rng& rng, int64_t large_ch, int64_t small_ch /*0 = single stream*/,
           const DecoderConfig& cfg);

  struct Result {
    Var fused;   // (B, fused_channels, H/2, W/2)
    Var logits;  // (B, 1, H, W)
  };
  Result forward(const Var& large_f, const Var& small_f);
  void collect(const std::string& prefix, ParamSink& sink);
  void set_training(bool training);

 private:
  int64_t small_ch_ = 0;
  UpsampleMode mode_ = UpsampleMode::TransposedConv;
  Conv2d fuse_conv_;
  ConvTranspose2d up_tconv_;
  Conv2d up_conv_;
  Conv2d head_conv_;
};

/// Thresholds sigmoid(logits) into a {0,1} mask; ties map to road.
Tensor predict_mask(const Tensor& logits, double threshold = 0.5);

}  // namespace ddunet
