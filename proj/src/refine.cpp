#include "bbseg/refine.hpp"

#include <stdexcept>

#include "bbseg/pseudolabel.hpp"

namespace bbseg {

EmaState EmaState::init(const StudentParams& student, double alpha) {
  if (alpha < 0.0 || alpha >= 1.0) throw std::invalid_argument("ema alpha must lie in [0,1)");
  return EmaState{student, alpha, 0};
}

void RefineConfig::validate() const {
  if (beta <= 0.0 || beta > 1.0) throw std::invalid_argument("beta must lie in (0,1]");
  if (lambda_max < 0.0) throw std::invalid_argument("lambda_max must be nonnegative");
  if (total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
}

namespace {

void blend(const std::vector<double>& a, const std::vector<double>& b, double alpha,
           std::vector<double>& out) {
  for (size_t i = 0; i < a.size(); ++i) out[i] = alpha * a[i] + (1.0 - alpha) * b[i];
}

}  // namespace

EmaState ema_update(const EmaState& state, const StudentParams& theta) {
  if (!state.params.same_shape(theta)) throw std::invalid_argument("ema/student shape mismatch");
  EmaState next = state;
  blend(state.params.w1, theta.w1, state.alpha, next.params.w1);
  blend(state.params.b1, theta.b1, state.alpha, next.params.b1);
  blend(state.params.w2, theta.w2, state.alpha, next.params.w2);
  blend(state.params.b2, theta.b2, state.alpha, next.params.b2);
  next.step = state.step + 1;
  return next;
}

double lambda_at(int64_t step, const RefineConfig& config) {
  config.validate();
  if (step < 0 || step > config.total_steps)
    throw std::out_of_range("lambda_at: step outside [0, total_steps]");
  return config.lambda_max * static_cast<double>(step) / static_cast<double>(config.total_steps);
}

WeightedMask refine_mask(const WeightedMask& m, const ProbabilityMap& ema_probs, int64_t step,
                         const RefineConfig& config) {
  if (ema_probs.h != m.h || ema_probs.w != m.w)
    throw std::invalid_argument("mask/probs shape mismatch");
  const double lam = lambda_at(step, config);
  WeightedMask out = m;
  if (lam == 0.0) return out;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      const size_t i = static_cast<size_t>(y) * m.w + x;
      if (m.supervised(i)) {
        out.weight[i] = 1.0;  // teacher supervision always carries weight 1
        continue;
      }
      // Any class clearing beta implies the overall argmax clears it too, so
      // "argmax among qualifying classes" is just the argmax.
      const Top2 t = top2_at(ema_probs, i);
      if (t.top1 >= config.beta) out.set(y, x, t.argmax, lam);
    }
  return out;
}

}  // namespace bbseg
