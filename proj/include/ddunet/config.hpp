#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "ddunet/data.hpp"
#include "ddunet/metrics.hpp"
#include "ddunet/model.hpp"
#include "ddunet/optim.hpp"

namespace ddunet {

/// Complete training recipe. Defaults: Adam, batch 4, initial lr 0.001,
/// poly schedule with power 0.9, weight decay 5e-4, 50 epochs, focal gamma 2.
struct TrainConfig {
  std::string optimizer = "adam";
  int64_t batch_size = 4;
  double initial_lr = 0.001;
  std::string schedule = "poly";
  double poly_power = 0.9;
  double weight_decay = 5e-4;
  bool decoupled_weight_decay = true;
  int64_t epochs = 50;
  double grad_clip = 0.0;  // 0 disables clipping
  FocalConfig focal;
  AdamConfig adam;  // betas/eps; weight decay fields above take precedence

  ModelConfig model;
  uint64_t seed = 42;
  double threshold = 0.5;

  std::string dataset = "synthetic";  // "synthetic" or a directory path
  std::filesystem::path out_dir = "runs/default";
  int binarize_threshold = 127;
  int64_t tile_size = 512;
  int64_t tile_stride = 484;
  bool augment = false;

  int64_t synth_train_count = 64;
  int64_t synth_val_count = 8;
  int64_t synth_test_count = 4;
  int64_t synth_size = 128;
  SynthParams synth;

  /// Applies `key = value` pairs; unknown keys or malformed values are a
  /// hard ConfigError.
  void apply(const std::map<std::string, std::string>& kv);
};

/// Parses a flat key=value file ('#' comments, blank lines allowed).
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);

TrainConfig load_train_config(const std::filesystem::path& path);

/// Deterministic JSON snapshot of every field (stored in checkpoints).
std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& json_text);

/// Serialization of the architecture-determining fields only; two configs
/// with equal fingerprints build interchangeable models.
std::string model_config_fingerprint(const TrainConfig& cfg);

std::unique_ptr<Dataset> make_dataset(const TrainConfig& cfg);

}  // namespace ddunet
