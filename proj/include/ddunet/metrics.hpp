#pragma once

#include <cstdint>
#include <optional>

#include "ddunet/ops.hpp"

namespace ddunet {

struct FocalConfig {
  double gamma = 2.0;
  double probability_floor = 1e-7;
};

/// Mean over pixels of -(1-p_t)^gamma * ln(p_t).
inline Var focal_loss(const Var& probs, const Tensor& target, const FocalConfig& cfg) {
  return focal_loss(probs, target, cfg.gamma, cfg.probability_floor);
}

/// Pixel tallies of the 2x2 contingency table. Accumulation is a
/// commutative monoid: shard counts merge by addition.
struct ConfusionCounts {
  uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) {
    return a += b;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Adds the per-pixel contingency of pred vs gt into acc. Both masks must
/// hold exactly 0/1 values and share a shape.
void accumulate_confusion(const Tensor& pred, const Tensor& gt, ConfusionCounts& acc);

/// Zero-denominator ratios surface as nullopt, never as a silent 0 or 1.
struct MetricsReport {
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::optional<double> iou_road;
  std::optional<double> miou;  // road class only is scored, so miou == iou_road
  ConfusionCounts counts;
};

std::optional<double> f1_from_precision_recall(std::optional<double> precision,
                                               std::optional<double> recall);

/// accuracy = (tp+tn)/total, precision = tp/(tp+fp), recall = tp/(tp+fn),
/// iou_road = tp/(tp+fp+fn); requires a nonzero total.
MetricsReport compute_metrics(const ConfusionCounts& counts);

}  // namespace ddunet
