#pragma once

#include <cstdint>

#include "bbseg/student.hpp"
#include "bbseg/tensor.hpp"

namespace bbseg {

// Temporal ensemble of the student, updated by exponential moving average.
struct EmaState {
  StudentParams params;
  double alpha = 0.99;
  int64_t step = 0;

  static EmaState init(const StudentParams& student, double alpha);
};

struct RefineConfig {
  double beta = 0.60;       // EMA confidence threshold, in (0, 1]
  double lambda_max = 5.0;  // weight ceiling for refined pixels
  int64_t total_steps = 1;

  void validate() const;
};

// Functional update: state is unmodified, the convex combination
// alpha * state + (1 - alpha) * theta is returned with step + 1.
EmaState ema_update(const EmaState& state, const StudentParams& theta);

// lambda_t = lambda_max * step / total_steps; step must lie in [0, total_steps].
double lambda_at(int64_t step, const RefineConfig& config);

// Supervised pixels of m are kept verbatim at weight 1. Wholly unsupervised
// pixels gain (EMA argmax, lambda_t) when the EMA's max probability clears
// beta; everything else stays none. At lambda_t = 0 qualifying pixels stay
// none so the result equals the input mask exactly.
WeightedMask refine_mask(const WeightedMask& m, const ProbabilityMap& ema_probs, int64_t step,
                         const RefineConfig& config);

}  // namespace bbseg
