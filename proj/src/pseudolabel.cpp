#include "bbseg/pseudolabel.hpp"

#include <stdexcept>

#include <nlohmann/json.hpp>

namespace bbseg {

Top2 top2_at(const ProbabilityMap& q, size_t pixel) {
  const size_t plane = q.plane();
  int best = 0;
  double top1 = q.data[pixel];
  double top2 = -1.0;
  for (int k = 1; k < q.c; ++k) {
    const double p = q.data[static_cast<size_t>(k) * plane + pixel];
    if (p > top1) {
      top2 = top1;
      top1 = p;
      best = k;
    } else if (p > top2) {
      top2 = p;
    }
  }
  return {best, top1, top2};
}

LabelGrid argmax_grid(const ProbabilityMap& q) {
  LabelGrid out(q.h, q.w);
  for (size_t i = 0; i < q.pixels(); ++i) out.data[i] = static_cast<uint8_t>(top2_at(q, i).argmax);
  return out;
}

ConfidenceMap relative_confidence(const ProbabilityMap& q) {
  if (q.c < 2) throw std::invalid_argument("relative_confidence requires at least 2 classes");
  ConfidenceMap out(q.h, q.w);
  for (size_t i = 0; i < q.pixels(); ++i) {
    const Top2 t = top2_at(q, i);
    out.values[i] = t.top1 - t.top2;
  }
  return out;
}

ThresholdAccumulator::ThresholdAccumulator(int num_classes, ThresholdStatistic stat)
    : stat_(stat), sums_(num_classes, 0.0), counts_(num_classes, 0) {
  if (num_classes < 2)
    throw std::invalid_argument("ThresholdAccumulator requires at least 2 classes");
}

void ThresholdAccumulator::add(const ProbabilityMap& q) {
  if (q.c != static_cast<int>(sums_.size()))
    throw std::invalid_argument("ThresholdAccumulator: class count mismatch");
  for (size_t i = 0; i < q.pixels(); ++i) {
    const Top2 t = top2_at(q, i);
    const double stat =
        stat_ == ThresholdStatistic::RelativeConfidence ? t.top1 - t.top2 : t.top1;
    sums_[t.argmax] += stat;
    counts_[t.argmax] += 1;
  }
  ++maps_seen_;
}

ThresholdAccumulator& ThresholdAccumulator::merge(const ThresholdAccumulator& other) {
  if (other.sums_.size() != sums_.size() || other.stat_ != stat_)
    throw std::invalid_argument("ThresholdAccumulator: incompatible merge");
  for (size_t c = 0; c < sums_.size(); ++c) {
    sums_[c] += other.sums_[c];
    counts_[c] += other.counts_[c];
  }
  maps_seen_ += other.maps_seen_;
  return *this;
}

ClassThresholds ThresholdAccumulator::finish() const {
  if (maps_seen_ == 0) throw std::runtime_error("threshold calibration saw an empty stream");
  ClassThresholds t;
  const size_t c = sums_.size();
  t.tau.resize(c);
  t.counts = counts_;
  t.never_predicted.resize(c);
  for (size_t k = 0; k < c; ++k) {
    t.never_predicted[k] = counts_[k] == 0;
    t.tau[k] = counts_[k] == 0 ? 0.0 : sums_[k] / static_cast<double>(counts_[k]);
  }
  return t;
}

ClassThresholds compute_class_thresholds(std::span<const ProbabilityMap> teacher_outputs,
                                         ThresholdStatistic stat) {
  if (teacher_outputs.empty())
    throw std::runtime_error("threshold calibration saw an empty stream");
  ThresholdAccumulator acc(teacher_outputs.front().c, stat);
  for (const auto& q : teacher_outputs) acc.add(q);
  return acc.finish();
}

namespace {

WeightedMask thresholded_mask(const ProbabilityMap& q, const ClassThresholds& thresholds,
                              ThresholdStatistic stat) {
  if (thresholds.tau.size() != static_cast<size_t>(q.c))
    throw std::invalid_argument("mask: thresholds class count mismatch");
  WeightedMask mask(q.h, q.w);
  for (size_t i = 0; i < q.pixels(); ++i) {
    const Top2 t = top2_at(q, i);
    const double value =
        stat == ThresholdStatistic::RelativeConfidence ? t.top1 - t.top2 : t.top1;
    if (value >= thresholds.tau[t.argmax]) {
      mask.cls[i] = static_cast<int16_t>(t.argmax);
      mask.weight[i] = 1.0;
    }
  }
  return mask;
}

}  // namespace

WeightedMask r2cp_mask(const ProbabilityMap& q, const ClassThresholds& thresholds) {
  return thresholded_mask(q, thresholds, ThresholdStatistic::RelativeConfidence);
}

WeightedMask ac_mask(const ProbabilityMap& q, const ClassThresholds& thresholds) {
  return thresholded_mask(q, thresholds, ThresholdStatistic::AbsoluteConfidence);
}

WeightedMask naive_mask(const ProbabilityMap& q) {
  WeightedMask mask(q.h, q.w);
  for (size_t i = 0; i < q.pixels(); ++i) {
    mask.cls[i] = static_cast<int16_t>(top2_at(q, i).argmax);
    mask.weight[i] = 1.0;
  }
  return mask;
}

nlohmann::json thresholds_to_json(const ClassThresholds& t) {
  return nlohmann::json{
      {"tau", t.tau}, {"counts", t.counts}, {"never_predicted", t.never_predicted}};
}

ClassThresholds thresholds_from_json(const nlohmann::json& j) {
  ClassThresholds t;
  t.tau = j.at("tau").get<std::vector<double>>();
  t.counts = j.at("counts").get<std::vector<int64_t>>();
  t.never_predicted = j.at("never_predicted").get<std::vector<bool>>();
  if (t.counts.size() != t.tau.size() || t.never_predicted.size() != t.tau.size())
    throw std::invalid_argument("thresholds JSON: inconsistent lengths");
  return t;
}

}  // namespace bbseg
