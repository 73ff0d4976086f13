#include "ddunet/metrics.hpp"

namespace ddunet {

void accumulate_confusion(const Tensor& pred, const Tensor& gt, ConfusionCounts& acc) {
  if (pred.shape() != gt.shape()) {
    throw std::invalid_argument("accumulate_confusion: mask shapes differ: " +
                                shape_to_string(pred.shape()) + " vs " +
                                shape_to_string(gt.shape()));
  }
  const int64_t n = pred.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double p = pred[i];
    const double g = gt[i];
    if ((p != 0.0 && p != 1.0) || (g != 0.0 && g != 1.0)) {
      throw std::invalid_argument("accumulate_confusion: masks must be binary (0/1)");
    }
    if (p == 1.0) {
      if (g == 1.0)
        ++acc.tp;
      else
        ++acc.fp;
    } else {
      if (g == 1.0)
        ++acc.fn;
      else
        ++acc.tn;
    }
  }
}

std::optional<double> f1_from_precision_recall(std::optional<double> precision,
                                               std::optional<double> recall) {
  if (!precision || !recall) return std::nullopt;
  const double s = *precision + *recall;
  if (s == 0.0) return std::nullopt;
  return 2.0 * *precision * *recall / s;
}

MetricsReport compute_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) {
    throw std::invalid_argument("compute_metrics: no pixels counted");
  }
  auto ratio = [](uint64_t num, uint64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  MetricsReport r;
  r.counts = c;
  r.accuracy = ratio(c.tp + c.tn, c.total());
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.f1 = f1_from_precision_recall(r.precision, r.recall);
  r.iou_road = ratio(c.tp, c.tp + c.fp + c.fn);
  r.miou = r.iou_road;
  return r;
}

}  // namespace ddunet
