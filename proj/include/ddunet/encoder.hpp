#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ddunet/nn.hpp"

namespace ddunet {

enum class EncoderPreset { ResNet50, Small };

struct EncoderConfig {
  EncoderPreset preset = EncoderPreset::Small;
  double width_multiplier = 1.0;
  std::string pretrained_weights;  // optional archive path; empty = random init
  bool freeze_bn_stats = false;
};

/// The five stage outputs at strides 2, 4, 8, 16 and 32, plus the image they
/// came from. Stage 5 feeds the context module, stage 3 the small decoder,
/// stages 1-4 are skip sources.
struct FeaturePyramid {
  std::array<Var, 5> stages;
  Var input;
};

/// Residual unit with an optional strided projection on the skip path.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  // bottleneck: 1x1 reduce -> 3x3 -> 1x1 expand; basic: two 3x3 convs
  ResidualBlock(Rng& rng, int64_t in_ch, int64_t mid_ch, int64_t out_ch, int64_t stride,
                bool bottleneck);

  Var forward(const Var& x);
  void collect(const std::string& prefix, ParamSink& sink);
  void set_training(bool training);
  void set_freeze_bn_stats(bool freeze);

 private:
  bool bottleneck_ = false;
  Conv2d conv1_, conv2_, conv3_, proj_;
  BatchNorm2d bn1_, bn2_, bn3_, proj_bn_;
  bool has_proj_ = false;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(Rng& rng, const EncoderConfig& cfg);

  /// Requires a (B,3,H,W) image with H and W divisible by 32.
  FeaturePyramid forward(const Var& image);

  const std::array<int64_t, 5>& stage_channels() const { return stage_channels_; }
  void collect(const std::string& prefix, ParamSink& sink);
  void set_training(bool training);
  void set_freeze_bn_stats(bool freeze);

 private:
  EncoderConfig cfg_;
  std::array<int64_t, 5> stage_channels_{};
  Conv2d stem_conv_;
  BatchNorm2d stem_bn_;
  bool stem_pool_ = false;  // resnet50 layout: stride-2 max pool after the stem
  std::vector<std::vector<ResidualBlock>> layers_;  // 4 stages of blocks
  std::vector<BatchNorm2d*> all_bns_;
};

/// Scales a base channel count by the width multiplier; throws ConfigError
/// when the product is not a positive integer.
int64_t scaled_width(int64_t base, double multiplier);

struct LoadReport;  // serialize.hpp

/// Copies every archive tensor whose name and shape match an encoder
/// parameter or buffer (an optional leading "model." in archive names is
/// ignored, so full checkpoints work as sources). Missing names keep their
/// initialization and are listed in the report; a matched name with the
/// wrong shape is a hard error naming the tensor.
LoadReport load_pretrained_encoder(Encoder& encoder, const std::filesystem::path& archive);

}  // namespace ddunet
