#pragma once

#include <vector>

#include "ddunet/attention.hpp"

namespace ddunet {

struct DcamConfig {
  int64_t channels = 0;  // input channel count; the block is shape-neutral
  std::vector<int64_t> dilation_rates = {1, 2, 4};
  int64_t kernel_size = 3;
  CbamConfig cbam;
};

/// Receptive field of the dilated-conv cascade after applying every rate in
/// `rates`: 1 + (kernel - 1) * sum(rates). Empty cascade is the identity.
int64_t branch_receptive_field(const std::vector<int64_t>& rates, int64_t kernel_size);

/// Context module between encoder and decoders. One shared cascade of
/// dilated conv-bn-relu units is tapped after each rate; a fourth branch
/// carries the global-average image-level feature. Every branch is gated by
/// its own CBAM, then the concatenation is reduced back to the input width
/// by a 1x1 convolution.
class DcamBlock {
 public:
  DcamBlock() = default;
  DcamBlock(Rng& rng, DcamConfig cfg);

  Var forward(const Var& f);
  /// Per-channel global mean -> 1x1 conv -> relu, replicated back over the
  /// input's spatial grid.
  Var gap_branch(const Var& f) const;

  void collect(const std::string& prefix, ParamSink& sink);
  void set_training(bool training);
  const DcamConfig& config() const { return cfg_; }

  std::vector<ConvBnRelu> cascade;
  std::vector<CbamBlock> branch_gates;  // one per cascade tap, then the GAP branch
  Conv2d gap_conv;
  Conv2d reduce;  // 1x1, (branches * C) -> C, with bias

 private:
  void check_input(const Var& f) const;
  DcamConfig cfg_;
};

}  // namespace ddunet
