#pragma once

#include "ddunet/nn.hpp"

namespace ddunet {

enum class PadMode { Zero, Reflect };
enum class MlpActivation { Relu, Identity };

struct CbamConfig {
  int64_t reduction = 16;
  PadMode spatial_padding = PadMode::Zero;
  MlpActivation mlp_activation = MlpActivation::Relu;
};

/// Channel-then-spatial attention gate. The channel gate squeezes the map
/// with both average and max pooling, runs each through one shared two-layer
/// MLP and sums before the sigmoid; the spatial gate convolves the stacked
/// channel-average and channel-max planes with a 7x7 kernel.
class CbamBlock {
 public:
  CbamBlock() = default;
  CbamBlock(Rng& rng, int64_t channels, CbamConfig cfg = {});

  /// Per-channel gate, shape (B, C); every value strictly inside (0, 1).
  Var channel_attention(const Var& f) const;
  /// Per-pixel gate, shape (B, 1, H, W).
  Var spatial_attention(const Var& f) const;
  /// Applies the channel gate, then the spatial gate on the gated map.
  Var forward(const Var& f) const;

  void collect(const std::string& prefix, ParamSink& sink);
  int64_t channels() const { return channels_; }
  int64_t hidden_width() const { return hidden_; }

  Linear fc1;  // shared across the two pooling paths
  Linear fc2;
  Conv2d spatial_conv;  // 7x7, 2 -> 1

 private:
  Var mlp(const Var& v) const;
  void check_input(const Var& f) const;

  int64_t channels_ = 0;
  int64_t hidden_ = 0;
  CbamConfig cfg_;
};

}  // namespace ddunet
