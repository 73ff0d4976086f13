#pragma once

#include <memory>

#include "ddunet/dcam.hpp"
#include "ddunet/decoder.hpp"

namespace ddunet {

struct ModelConfig {
  EncoderConfig encoder;
  std::vector<int64_t> dcam_dilations = {1, 2, 4};
  int64_t dcam_kernel = 3;
  CbamConfig cbam;
  DecoderConfig decoder;
  bool decoder_widths_explicit = false;  // false: derive from the encoder preset
  bool use_dcam = true;
  bool use_small_decoder = true;
};

/// Encoder -> context module -> dual decoder -> fused segmentation head.
/// The two variant flags strip the model down to the ablation baselines.
class DduNet {
 public:
  DduNet(Rng& rng, const ModelConfig& cfg);

  Var forward(const Var& image);

  struct Taps {
    Var large_out;
    Var small_out;  // null when the small decoder is disabled
    Var fused;
    Var logits;
  };
  Taps forward_detailed(const Var& image);

  void collect(const std::string& prefix, ParamSink& sink);
  void set_training(bool training);
  int64_t parameter_count();

  const ModelConfig& config() const { return cfg_; }
  Encoder encoder;
  std::unique_ptr<DcamBlock> dcam;        // null when use_dcam is false
  LargeDecoder large_decoder;
  std::unique_ptr<SmallDecoder> small_decoder;  // null when disabled
  FuseHead head;

 private:
  ModelConfig cfg_;
};

}  // namespace ddunet
