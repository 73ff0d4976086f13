#include "ddunet/model.hpp"

namespace ddunet {

DduNet::DduNet(Rng& rng, const ModelConfig& cfg) : cfg_(cfg) {
  encoder = Encoder(rng, cfg.encoder);
  const auto& chans = encoder.stage_channels();
  if (!cfg_.decoder_widths_explicit) {
    const DecoderConfig derived = DecoderConfig::defaults_for(chans);
    cfg_.decoder.large_channels = derived.large_channels;
    cfg_.decoder.small_channels = derived.small_channels;
  }
  if (cfg_.use_dcam) {
    DcamConfig dcfg;
    dcfg.channels = chans[4];
    dcfg.dilation_rates = cfg_.dcam_dilations;
    dcfg.kernel_size = cfg_.dcam_kernel;
    dcfg.cbam = cfg_.cbam;
    dcam = std::make_unique<DcamBlock>(rng, dcfg);
  }
  large_decoder = LargeDecoder(rng, chans, cfg_.decoder);
  if (cfg_.use_small_decoder) {
    small_decoder = std::make_unique<SmallDecoder>(rng, chans[2], cfg_.decoder);
  }
  head = FuseHead(rng, large_decoder.out_channels(),
                  small_decoder ? small_decoder->out_channels() : 0, cfg_.decoder);
}

Var DduNet::forward(const Var& image) { return forward_detailed(image).logits; }

DduNet::Taps DduNet::forward_detailed(const Var& image) {
  FeaturePyramid pyr = encoder.forward(image);
  Var context = dcam ? dcam->forward(pyr.stages[4]) : pyr.stages[4];
  Taps taps;
  taps.large_out = large_decoder.forward(pyr, context);
  if (small_decoder) taps.small_out = small_decoder->forward(pyr.stages[2]);
  FuseHead::Result r = head.forward(taps.large_out, taps.small_out);
  taps.fused = r.fused;
  taps.logits = r.logits;
  return taps;
}

void DduNet::collect(const std::string& prefix, ParamSink& sink) {
  encoder.collect(join_name(prefix, "encoder"), sink);
  if (dcam) dcam->collect(join_name(prefix, "dcam"), sink);
  large_decoder.collect(join_name(prefix, "large_decoder"), sink);
  if (small_decoder) small_decoder->collect(join_name(prefix, "small_decoder"), sink);
  head.collect(join_name(prefix, "head"), sink);
}

void DduNet::set_training(bool training) {
  encoder.set_training(training);
  if (dcam) dcam->set_training(training);
  large_decoder.set_training(training);
  if (small_decoder) small_decoder->set_training(training);
  head.set_training(training);
}

int64_t DduNet::parameter_count() {
  ParamSink sink;
  collect("", sink);
  int64_t n = 0;
  for (const auto& [name, p] : sink.params) n += p->value.numel();
  return n;
}

}  // namespace ddunet
