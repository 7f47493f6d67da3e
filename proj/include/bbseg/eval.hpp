#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bbseg/tensor.hpp"

namespace bbseg {

// rows = ground truth, columns = prediction.
struct ConfusionMatrix {
  int c = 0;
  std::vector<int64_t> counts;  // c x c, row-major

  explicit ConfusionMatrix(int num_classes)
      : c(num_classes), counts(static_cast<size_t>(num_classes) * num_classes, 0) {}

  int64_t& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * c + pred]; }
  int64_t at(int gt, int pred) const { return counts[static_cast<size_t>(gt) * c + pred]; }
  int64_t total() const;
  ConfusionMatrix& merge(const ConfusionMatrix& other);
};

struct MetricsReport {
  std::vector<double> per_class_iou;  // NaN where undefined
  std::vector<bool> iou_defined;
  double miou = 0.0;            // mean over defined classes
  double pixel_accuracy = 0.0;
  double retained_fraction = 0.0;  // mask diagnostic, filled by the caller
};

void accumulate(ConfusionMatrix& cm, const LabelGrid& predictions, const LabelGrid& labels);

// IoU_c = TP / (TP + FP + FN); zero-denominator classes are flagged
// undefined and excluded from the mIoU mean.
MetricsReport iou_from_cm(const ConfusionMatrix& cm);

struct MaskDiagnostics {
  double retained_fraction = 0.0;
  double retained_accuracy = 0.0;  // teacher argmax vs labels on retained pixels
  bool retained_accuracy_defined = false;
  double overall_accuracy = 0.0;
};

MaskDiagnostics mask_diagnostics(const WeightedMask& mask, const LabelGrid& teacher_argmax,
                                 const LabelGrid& labels);

// CSV row format shared by training and ablation outputs:
// step,variant,miou,pixel_accuracy,retained_fraction,iou_0,...  (6 decimals,
// undefined IoUs rendered as "nan").
std::string metrics_csv_header(int num_classes);
std::string metrics_csv_row(int64_t step, const std::string& variant, const MetricsReport& report);

}  // namespace bbseg
