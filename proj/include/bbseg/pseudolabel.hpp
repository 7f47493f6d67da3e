#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bbseg/tensor.hpp"

namespace bbseg {

// H x W relative-confidence grid: top-1 minus top-2 probability per pixel.
struct ConfidenceMap {
  int h = 0, w = 0;
  std::vector<double> values;

  ConfidenceMap() = default;
  ConfidenceMap(int h_, int w_) : h(h_), w(w_), values(static_cast<size_t>(h_) * w_, 0.0) {}
};

// Per-class retention thresholds with calibration bookkeeping.
struct ClassThresholds {
  std::vector<double> tau;
  std::vector<int64_t> counts;          // pixel count per predicted class
  std::vector<bool> never_predicted;    // counts[c] == 0  (tau forced to 0)
};

// Statistic the thresholds are calibrated on.
enum class ThresholdStatistic { RelativeConfidence, AbsoluteConfidence };

// Per-pixel winner with the shared tie rule: equal probabilities resolve to
// the lowest class index, identically in calibration and masking.
struct Top2 {
  int argmax;
  double top1;
  double top2;
};
Top2 top2_at(const ProbabilityMap& q, size_t pixel);

LabelGrid argmax_grid(const ProbabilityMap& q);

ConfidenceMap relative_confidence(const ProbabilityMap& q);

// Streaming calibration over the target-train teacher outputs. Per-class
// running sums only, so shards can be merged and the result is independent
// of iteration order up to float associativity.
class ThresholdAccumulator {
 public:
  ThresholdAccumulator(int num_classes, ThresholdStatistic stat);

  void add(const ProbabilityMap& q);
  ThresholdAccumulator& merge(const ThresholdAccumulator& other);
  // Throws if no map was ever added.
  ClassThresholds finish() const;

  ThresholdStatistic statistic() const { return stat_; }

 private:
  ThresholdStatistic stat_;
  std::vector<double> sums_;
  std::vector<int64_t> counts_;
  int64_t maps_seen_ = 0;
};

ClassThresholds compute_class_thresholds(std::span<const ProbabilityMap> teacher_outputs,
                                         ThresholdStatistic stat);

// Relative-confidence retention: pixel keeps (argmax, weight 1) iff its
// relative confidence clears tau[argmax].
WeightedMask r2cp_mask(const ProbabilityMap& q, const ClassThresholds& thresholds);

// Absolute-confidence baseline: same shape, statistic is the top-1
// probability and thresholds must be calibrated on it.
WeightedMask ac_mask(const ProbabilityMap& q, const ClassThresholds& thresholds);

// No filtering: every pixel keeps (argmax, weight 1).
WeightedMask naive_mask(const ProbabilityMap& q);

nlohmann::json thresholds_to_json(const ClassThresholds& t);
ClassThresholds thresholds_from_json(const nlohmann::json& j);

}  // namespace bbseg
