#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bbseg/tensor.hpp"

namespace bbseg {

// Architecture of the lightweight per-pixel classifier: one hidden layer
// over a k x k feature patch (edge-replicated), then a linear class head.
struct StudentConfig {
  int feature_dim = 0;
  int num_classes = 0;
  int hidden_width = 32;
  int patch = 3;  // odd

  int patch_len() const { return patch * patch * feature_dim; }
};

struct StudentParams {
  StudentConfig cfg;
  std::vector<double> w1;  // hidden_width x patch_len, row-major
  std::vector<double> b1;  // hidden_width
  std::vector<double> w2;  // num_classes x hidden_width, row-major
  std::vector<double> b2;  // num_classes

  static StudentParams zeros(const StudentConfig& cfg);
  // He-normal hidden layer, zero class head (initial output is uniform).
  static StudentParams random_init(const StudentConfig& cfg, uint64_t seed);

  size_t total_size() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
  bool same_shape(const StudentParams& other) const;
};

// Gradient container; mirrors StudentParams shapes.
using StudentGrads = StudentParams;

// Strong augmentation parameters. Scale/offset jitter and blur touch the
// features only; the flip is applied jointly to features and mask.
struct AugmentSpec {
  double channel_scale_lo = 1.0, channel_scale_hi = 1.0;
  double channel_offset_stddev = 0.0;
  double blur_sigma_lo = 0.0, blur_sigma_hi = 0.0;
  double flip_prob = 0.0;
  uint64_t seed = 0;

  bool is_identity() const {
    return channel_scale_lo == 1.0 && channel_scale_hi == 1.0 && channel_offset_stddev == 0.0 &&
           blur_sigma_lo == 0.0 && blur_sigma_hi == 0.0 && flip_prob == 0.0;
  }
};

nlohmann::json augment_spec_to_json(const AugmentSpec& a);
AugmentSpec augment_spec_from_json(const nlohmann::json& j);

struct OptimConfig {
  double lr_hidden = 1e-3;   // w1, b1
  double lr_output = 1e-2;   // w2, b2
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t warmup_steps = 100;  // linear ramp from 0, then constant
};

nlohmann::json optim_config_to_json(const OptimConfig& c);
OptimConfig optim_config_from_json(const nlohmann::json& j);

// Bias-corrected adaptive moments with decoupled weight decay.
struct OptimState {
  OptimConfig cfg;
  StudentParams m;  // first moments (same shapes as the params)
  StudentParams v;  // second moments
  int64_t step = 0;

  static OptimState init(const StudentConfig& student_cfg, const OptimConfig& cfg);
};

ProbabilityMap forward(const StudentParams& params, const FeatureMap& features);

// Forward restricted to the mask's supervised pixels; unlisted pixels get
// all-zero probability rows. Bitwise identical to full forward on the
// supervised pixels.
ProbabilityMap forward_masked(const StudentParams& params, const FeatureMap& features,
                              const WeightedMask& mask);

struct Augmented {
  FeatureMap features;
  WeightedMask mask;
};

// Deterministic under (spec.seed, step_seed); stages run jitter, blur, flip.
Augmented augment(const FeatureMap& features, const WeightedMask& mask, const AugmentSpec& spec,
                  uint64_t step_seed);

// Masked weighted cross-entropy, normalized by H*W (not by the supervised
// pixel count). Probabilities are clamped at 1e-12 before the log.
double masked_ce_loss(const ProbabilityMap& probs, const WeightedMask& mask);

// Analytic gradient of masked_ce_loss w.r.t. all parameters. When loss_out is
// non-null the loss is computed from the same forward pass.
StudentGrads backward(const StudentParams& params, const FeatureMap& features,
                      const WeightedMask& mask, double* loss_out = nullptr);

// Mean over pixels of KL(teacher || student), with 0 log 0 := 0.
double kd_kl_loss(const ProbabilityMap& student_probs, const ProbabilityMap& teacher_probs);

// Analytic gradient of kd_kl_loss(forward(params, features), teacher_probs).
StudentGrads kl_backward(const StudentParams& params, const FeatureMap& features,
                         const ProbabilityMap& teacher_probs, double* loss_out = nullptr);

// In-place update; throws on non-finite gradients so training halts instead
// of silently diverging.
void optim_step(OptimState& state, StudentParams& params, const StudentGrads& grads);

}  // namespace bbseg
