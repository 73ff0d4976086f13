#include "ddunet/dcam.hpp"

namespace ddunet {

int64_t branch_receptive_field(const std::vector<int64_t>& rates, int64_t kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw std::invalid_argument("branch_receptive_field: kernel size must be odd, got " +
                                std::to_string(kernel_size));
  }
  int64_t sum = 0;
  for (int64_t r : rates) sum += r;
  return 1 + (kernel_size - 1) * sum;
}

DcamBlock::DcamBlock(Rng& rng, DcamConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.channels < 1) throw ConfigError("dcam: channel count must be positive");
  if (cfg_.dilation_rates.empty()) throw ConfigError("dcam: dilation rates must be nonempty");
  for (size_t i = 0; i < cfg_.dilation_rates.size(); ++i) {
    if (cfg_.dilation_rates[i] < 1 ||
        (i > 0 && cfg_.dilation_rates[i] <= cfg_.dilation_rates[i - 1])) {
      throw ConfigError("dcam: dilation rates must be positive and strictly increasing");
    }
  }
  if (cfg_.kernel_size < 1 || cfg_.kernel_size % 2 == 0) {
    throw ConfigError("dcam: kernel size must be odd");
  }

  const int64_t c = cfg_.channels;
  const int64_t k = cfg_.kernel_size;
  for (int64_t rate : cfg_.dilation_rates) {
    const int64_t pad = rate * (k - 1) / 2;  // same-size output at every rate
    cascade.emplace_back(rng, c, c, k, /*stride=*/1, pad, /*dilation=*/rate);
  }
  const size_t n_branches = cfg_.dilation_rates.size() + 1;
  for (size_t i = 0; i < n_branches; ++i) {
    branch_gates.emplace_back(rng, c, cfg_.cbam);
  }
  gap_conv = Conv2d(rng, c, c, 1, 1, 0);
  reduce = Conv2d(rng, static_cast<int64_t>(n_branches) * c, c, 1, 1, 0);
}

void DcamBlock::check_input(const Var& f) const {
  if (f->value.rank() != 4) {
    throw ShapeError("dcam: expected 4-d feature map, got " + shape_to_string(f->shape()));
  }
  if (f->dim(1) != cfg_.channels) {
    throw ConfigError("dcam: configured for " + std::to_string(cfg_.channels) +
                      " channels, input has " + std::to_string(f->dim(1)));
  }
  if (f->dim(2) < 1 || f->dim(3) < 1) {
    throw std::invalid_argument("dcam: spatial dims must be >= 1");
  }
}

Var DcamBlock::gap_branch(const Var& f) const {
  check_input(f);
  const int64_t b = f->dim(0), c = f->dim(1), h = f->dim(2), w = f->dim(3);
  Var pooled = reshape(global_avg_pool(f), {b, c, 1, 1});
  Var mixed = relu(gap_conv.forward(pooled));
  return broadcast_spatial(reshape(mixed, {b, c}), h, w);
}

Var DcamBlock::forward(const Var& f) {
  check_input(f);
  require_finite(f->value, "dcam input");
  std::vector<Var> branches;
  Var cur = f;
  for (size_t i = 0; i < cascade.size(); ++i) {
    cur = cascade[i].forward(cur);
    branches.push_back(branch_gates[i].forward(cur));
  }
  branches.push_back(branch_gates.back().forward(gap_branch(f)));
  return reduce.forward(concat_channels(branches));
}

void DcamBlock::collect(const std::string& prefix, ParamSink& sink) {
  for (size_t i = 0; i < cascade.size(); ++i) {
    cascade[i].collect(join_name(prefix, "cascade" + std::to_string(i)), sink);
  }
  for (size_t i = 0; i < branch_gates.size(); ++i) {
    branch_gates[i].collect(join_name(prefix, "cbam" + std::to_string(i)), sink);
  }
  gap_conv.collect(join_name(prefix, "gap_conv"), sink);
  reduce.collect(join_name(prefix, "reduce"), sink);
}

void DcamBlock::set_training(bool training) {
  for (auto& unit : cascade) unit.set_training(training);
}

}  // namespace ddunet
