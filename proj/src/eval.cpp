#include "bbseg/eval.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace bbseg {

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t v : counts) t += v;
  return t;
}

ConfusionMatrix& ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.c != c) throw std::invalid_argument("confusion matrix class count mismatch");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

void accumulate(ConfusionMatrix& cm, const LabelGrid& predictions, const LabelGrid& labels) {
  if (predictions.h != labels.h || predictions.w != labels.w)
    throw std::invalid_argument("prediction/label shape mismatch");
  const size_t n = static_cast<size_t>(labels.h) * labels.w;
  for (size_t i = 0; i < n; ++i) {
    const int gt = labels.data[i];
    const int pred = predictions.data[i];
    if (gt < 0 || gt >= cm.c || pred < 0 || pred >= cm.c)
      throw std::out_of_range("class id outside confusion matrix range");
    ++cm.at(gt, pred);
  }
}

MetricsReport iou_from_cm(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.per_class_iou.assign(cm.c, std::numeric_limits<double>::quiet_NaN());
  r.iou_defined.assign(cm.c, false);
  int64_t diag = 0;
  double iou_sum = 0.0;
  int defined = 0;
  for (int k = 0; k < cm.c; ++k) {
    const int64_t tp = cm.at(k, k);
    diag += tp;
    int64_t fp = 0, fn = 0;
    for (int j = 0; j < cm.c; ++j) {
      if (j == k) continue;
      fp += cm.at(j, k);
      fn += cm.at(k, j);
    }
    const int64_t denom = tp + fp + fn;
    if (denom == 0) continue;  // class absent everywhere: undefined (excluded)
    r.per_class_iou[k] = static_cast<double>(tp) / static_cast<double>(denom);
    r.iou_defined[k] = true;
    iou_sum += r.per_class_iou[k];
    ++defined;
  }
  r.miou = defined > 0 ? iou_sum / defined : 0.0;
  const int64_t total = cm.total();
  r.pixel_accuracy = total > 0 ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
  return r;
}

MaskDiagnostics mask_diagnostics(const WeightedMask& mask, const LabelGrid& teacher_argmax,
                                 const LabelGrid& labels) {
  if (mask.h != labels.h || mask.w != labels.w || teacher_argmax.h != labels.h ||
      teacher_argmax.w != labels.w)
    throw std::invalid_argument("mask/grid shape mismatch");
  const size_t n = static_cast<size_t>(labels.h) * labels.w;
  MaskDiagnostics d;
  size_t retained = 0, retained_correct = 0, correct = 0;
  for (size_t i = 0; i < n; ++i) {
    const bool right = teacher_argmax.data[i] == labels.data[i];
    if (right) ++correct;
    if (mask.supervised(i)) {
      ++retained;
      if (right) ++retained_correct;
    }
  }
  d.retained_fraction = static_cast<double>(retained) / static_cast<double>(n);
  d.overall_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  if (retained > 0) {
    d.retained_accuracy = static_cast<double>(retained_correct) / static_cast<double>(retained);
    d.retained_accuracy_defined = true;
  }
  return d;
}

std::string metrics_csv_header(int num_classes) {
  std::string h = "step,variant,miou,pixel_accuracy,retained_fraction";
  for (int k = 0; k < num_classes; ++k) h += ",iou_" + std::to_string(k);
  h += "\n";
  return h;
}

std::string metrics_csv_row(int64_t step, const std::string& variant,
                            const MetricsReport& report) {
  char buf[64];
  std::string row = std::to_string(step) + "," + variant;
  const auto append = [&](double v, bool defined) {
    if (!defined) {
      row += ",nan";
      return;
    }
    std::snprintf(buf, sizeof(buf), ",%.6f", v);
    row += buf;
  };
  append(report.miou, true);
  append(report.pixel_accuracy, true);
  append(report.retained_fraction, true);
  for (size_t k = 0; k < report.per_class_iou.size(); ++k)
    append(report.per_class_iou[k], report.iou_defined[k]);
  row += "\n";
  return row;
}

}  // namespace bbseg
