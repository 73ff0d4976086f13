#include "ddunet/encoder.hpp"

#include <cmath>
#include <iostream>

#include "ddunet/serialize.hpp"

namespace ddunet {

int64_t scaled_width(int64_t base, double multiplier) {
  const double scaled = static_cast<double>(base) * multiplier;
  const int64_t rounded = static_cast<int64_t>(std::llround(scaled));
  if (rounded < 1 || std::abs(scaled - static_cast<double>(rounded)) > 1e-9) {
    throw ConfigError("width multiplier " + std::to_string(multiplier) +
                      " does not scale base width " + std::to_string(base) +
                      " to a positive integer");
  }
  return rounded;
}

ResidualBlock::ResidualBlock(Rng& rng, int64_t in_ch, int64_t mid_ch, int64_t out_ch,
                             int64_t stride, bool bottleneck)
    : bottleneck_(bottleneck) {
  if (bottleneck) {
    conv1_ = Conv2d(rng, in_ch, mid_ch, 1, 1, 0, 1, false);
    bn1_ = BatchNorm2d(mid_ch);
    conv2_ = Conv2d(rng, mid_ch, mid_ch, 3, stride, 1, 1, false);
    bn2_ = BatchNorm2d(mid_ch);
    conv3_ = Conv2d(rng, mid_ch, out_ch, 1, 1, 0, 1, false);
    bn3_ = BatchNorm2d(out_ch);
  } else {
    conv1_ = Conv2d(rng, in_ch, out_ch, 3, stride, 1, 1, false);
    bn1_ = BatchNorm2d(out_ch);
    conv2_ = Conv2d(rng, out_ch, out_ch, 3, 1, 1, 1, false);
    bn2_ = BatchNorm2d(out_ch);
  }
  has_proj_ = (stride != 1 || in_ch != out_ch);
  if (has_proj_) {
    proj_ = Conv2d(rng, in_ch, out_ch, 1, stride, 0, 1, false);
    proj_bn_ = BatchNorm2d(out_ch);
  }
}

Var ResidualBlock::forward(const Var& x) {
  Var identity = has_proj_ ? proj_bn_.forward(proj_.forward(x)) : x;
  Var y = relu(bn1_.forward(conv1_.forward(x)));
  if (bottleneck_) {
    y = relu(bn2_.forward(conv2_.forward(y)));
    y = bn3_.forward(conv3_.forward(y));
  } else {
    y = bn2_.forward(conv2_.forward(y));
  }
  return relu(add(y, identity));
}

void ResidualBlock::collect(const std::string& prefix, ParamSink& sink) {
  conv1_.collect(join_name(prefix, "conv1"), sink);
  bn1_.collect(join_name(prefix, "bn1"), sink);
  conv2_.collect(join_name(prefix, "conv2"), sink);
  bn2_.collect(join_name(prefix, "bn2"), sink);
  if (bottleneck_) {
    conv3_.collect(join_name(prefix, "conv3"), sink);
    bn3_.collect(join_name(prefix, "bn3"), sink);
  }
  if (has_proj_) {
    proj_.collect(join_name(prefix, "proj"), sink);
    proj_bn_.collect(join_name(prefix, "proj_bn"), sink);
  }
}

void ResidualBlock::set_training(bool training) {
  bn1_.set_training(training);
  bn2_.set_training(training);
  if (bottleneck_) bn3_.set_training(training);
  if (has_proj_) proj_bn_.set_training(training);
}

void ResidualBlock::set_freeze_bn_stats(bool freeze) {
  bn1_.set_freeze_stats(freeze);
  bn2_.set_freeze_stats(freeze);
  if (bottleneck_) bn3_.set_freeze_stats(freeze);
  if (has_proj_) proj_bn_.set_freeze_stats(freeze);
}

Encoder::Encoder(Rng& rng, const EncoderConfig& cfg) : cfg_(cfg) {
  const double w = cfg.width_multiplier;
  if (cfg.preset == EncoderPreset::ResNet50) {
    const int64_t stem = scaled_width(64, w);
    stem_conv_ = Conv2d(rng, 3, stem, 7, 2, 3, 1, false);
    stem_bn_ = BatchNorm2d(stem);
    stem_pool_ = true;
    const std::array<int64_t, 4> mids = {scaled_width(64, w), scaled_width(128, w),
                                         scaled_width(256, w), scaled_width(512, w)};
    const std::array<int64_t, 4> outs = {scaled_width(256, w), scaled_width(512, w),
                                         scaled_width(1024, w), scaled_width(2048, w)};
    const std::array<int64_t, 4> depths = {3, 4, 6, 3};
    int64_t in_ch = stem;
    for (int s = 0; s < 4; ++s) {
      std::vector<ResidualBlock> blocks;
      // layer 1 keeps stride 1; the max pool already took the stem to stride 4
      const int64_t first_stride = (s == 0) ? 1 : 2;
      for (int64_t d = 0; d < depths[static_cast<size_t>(s)]; ++d) {
        blocks.emplace_back(rng, d == 0 ? in_ch : outs[static_cast<size_t>(s)],
                            mids[static_cast<size_t>(s)], outs[static_cast<size_t>(s)],
                            d == 0 ? first_stride : 1, /*bottleneck=*/true);
      }
      layers_.push_back(std::move(blocks));
      in_ch = outs[static_cast<size_t>(s)];
    }
    stage_channels_ = {stem, outs[0], outs[1], outs[2], outs[3]};
  } else {
    const std::array<int64_t, 5> chans = {scaled_width(16, w), scaled_width(32, w),
                                          scaled_width(64, w), scaled_width(128, w),
                                          scaled_width(256, w)};
    stem_conv_ = Conv2d(rng, 3, chans[0], 3, 2, 1, 1, false);
    stem_bn_ = BatchNorm2d(chans[0]);
    stem_pool_ = false;
    int64_t in_ch = chans[0];
    for (int s = 1; s < 5; ++s) {
      std::vector<ResidualBlock> blocks;
      blocks.emplace_back(rng, in_ch, chans[static_cast<size_t>(s)],
                          chans[static_cast<size_t>(s)], /*stride=*/2, /*bottleneck=*/false);
      layers_.push_back(std::move(blocks));
      in_ch = chans[static_cast<size_t>(s)];
    }
    stage_channels_ = chans;
  }
  set_freeze_bn_stats(cfg.freeze_bn_stats);
  if (!cfg.pretrained_weights.empty()) {
    const LoadReport report = load_pretrained_encoder(*this, cfg.pretrained_weights);
    std::cerr << "pretrained encoder: matched " << report.matched.size() << ", missing "
              << report.missing.size() << " tensors\n";
    for (const auto& name : report.missing) {
      std::cerr << "  warning: no archive entry for " << name << " (random init kept)\n";
    }
  }
}

FeaturePyramid Encoder::forward(const Var& image) {
  if (image->value.rank() != 4 || image->dim(1) != 3) {
    throw ShapeError("encoder: expected (B,3,H,W) image, got " +
                     shape_to_string(image->shape()));
  }
  const int64_t h = image->dim(2), w = image->dim(3);
  if (h % 32 != 0 || w % 32 != 0) {
    throw ShapeError("encoder: input spatial dims " + std::to_string(h) + "x" +
                     std::to_string(w) + " must be divisible by 32");
  }

  FeaturePyramid pyr;
  pyr.input = image;
  Var x = relu(stem_bn_.forward(stem_conv_.forward(image)));
  pyr.stages[0] = x;  // stride 2
  if (stem_pool_) x = max_pool2d(x, 3, 2, 1);
  for (size_t s = 0; s < layers_.size(); ++s) {
    for (auto& block : layers_[s]) x = block.forward(x);
    pyr.stages[s + 1] = x;
  }
  return pyr;
}

void Encoder::collect(const std::string& prefix, ParamSink& sink) {
  stem_conv_.collect(join_name(prefix, "stem.conv"), sink);
  stem_bn_.collect(join_name(prefix, "stem.bn"), sink);
  for (size_t s = 0; s < layers_.size(); ++s) {
    for (size_t b = 0; b < layers_[s].size(); ++b) {
      layers_[s][b].collect(
          join_name(prefix, "layer" + std::to_string(s + 1) + ".block" + std::to_string(b)),
          sink);
    }
  }
}

void Encoder::set_training(bool training) {
  stem_bn_.set_training(training);
  for (auto& layer : layers_)
    for (auto& block : layer) block.set_training(training);
}

void Encoder::set_freeze_bn_stats(bool freeze) {
  cfg_.freeze_bn_stats = freeze;
  stem_bn_.set_freeze_stats(freeze);
  for (auto& layer : layers_)
    for (auto& block : layer) block.set_freeze_bn_stats(freeze);
}

LoadReport load_pretrained_encoder(Encoder& encoder, const std::filesystem::path& archive) {
  auto entries = read_tensor_archive(archive);
  for (auto& e : entries) {
    if (e.name.rfind("model.", 0) == 0) e.name = e.name.substr(6);
  }
  ParamSink sink;
  encoder.collect("encoder", sink);
  return apply_archive(entries, named_tensors(sink));
}

}  // namespace ddunet
