#pragma once

#include <optional>

#include "ddunet/config.hpp"

namespace ddunet {

/// Raised when the loss leaves the reals; carries the diagnostic dump.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int64_t step, double lr, double grad_norm);
  int64_t step;
  double lr;
  double grad_norm;
};

struct TrainLogEntry {
  int64_t step = 0;  // 1-based global step
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::filesystem::path out_dir;
  std::vector<TrainLogEntry> step_log;
  std::vector<std::optional<double>> val_miou_history;
  int64_t best_epoch = -1;                 // 1-based; -1 when no validation ran
  std::optional<double> best_val_miou;
  std::filesystem::path last_checkpoint;   // <out_dir>/last
  std::filesystem::path best_checkpoint;   // <out_dir>/best (may not exist)
};

/// Checkpoint directory layout: model.dduw, optim.dduw, state.json.
void save_checkpoint(const std::filesystem::path& dir, DduNet& model, Adam& optim,
                     const TrainConfig& cfg, int64_t epoch, int64_t global_step,
                     const TrainResult& progress);

/// Rebuilds the model recorded in a checkpoint and loads its weights.
/// The stored config snapshot is returned through out_cfg when non-null.
std::unique_ptr<DduNet> model_from_checkpoint(const std::filesystem::path& dir,
                                              TrainConfig* out_cfg = nullptr);

/// stop_after_epoch interrupts the run early without shortening the
/// schedule horizon (cfg.epochs still defines the poly decay), so a later
/// resume reproduces the uninterrupted sequence.
TrainResult train(const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& resume_dir = std::nullopt,
                  std::optional<int64_t> stop_after_epoch = std::nullopt);

struct EvalRow {
  std::string id;
  MetricsReport metrics;
};

struct EvalResult {
  MetricsReport pooled;
  std::vector<EvalRow> rows;
  /// Mean over images of each defined per-image metric.
  std::optional<double> mean_of(const char* metric) const;
};

EvalResult evaluate_split(DduNet& model, Dataset& data, Split split, double threshold);
void write_eval_json(const std::filesystem::path& path, const EvalResult& result, Split split);
void write_eval_csv(const std::filesystem::path& path, const EvalResult& result);

struct AblationRow {
  std::string name;
  bool use_dcam = false;
  bool use_small_decoder = false;
  MetricsReport metrics;
  std::string error;  // nonempty when this variant failed
};

/// Trains and evaluates the three architecture variants (plain encoder-
/// decoder baseline, +context module, +context module and dual decoder)
/// under one seed and budget. Failures are recorded per row; the remaining
/// variants still run.
std::vector<AblationRow> run_ablation(const TrainConfig& cfg);
void write_ablation_json(const std::filesystem::path& path,
                         const std::vector<AblationRow>& rows);
void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationRow>& rows);

/// Channel mean of the selected feature map, min-max scaled to [0,255]
/// (flat maps render mid-gray), nearest-upsampled to the image resolution.
/// Valid tags: large_decoder_out, small_decoder_out, fused, logits.
ImageU8 heatmap_image(DduNet& model, const Tensor& image, const std::string& layer_tag);

struct PredictOutcome {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> failures;  // "path: reason"
};

/// Writes <id>_mask.png (0/255) and <id>_overlay.png per input; unreadable
/// inputs are recorded and the batch continues.
PredictOutcome predict_images(DduNet& model, const std::vector<std::filesystem::path>& images,
                              const std::filesystem::path& out_dir, double threshold);

/// Stacks congruent samples into batch tensors (B,3,H,W) / (B,1,H,W).
std::pair<Tensor, Tensor> stack_samples(const std::vector<Sample>& samples);

/// Forward pass on one unbatched image with reflect padding to a multiple of
/// 32 and crop-back; returns logits of the original spatial size.
Tensor infer_logits(DduNet& model, const Tensor& image);

}  // namespace ddunet
