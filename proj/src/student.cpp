#include "bbseg/student.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbseg/rng.hpp"

namespace bbseg {

namespace {

constexpr double kLogClamp = 1e-12;

constexpr uint64_t kInitTag = 0x737475'64696e69ULL;
constexpr uint64_t kJitterTag = 0x6a697474'6572ULL;
constexpr uint64_t kBlurTag = 0x626c7572ULL;
constexpr uint64_t kFlipTag = 0x666c6970ULL;

void check_student_shapes(const StudentParams& p, const FeatureMap& f) {
  const StudentConfig& c = p.cfg;
  if (c.feature_dim != f.d) throw std::invalid_argument("student/feature dim mismatch");
  if (c.patch < 1 || c.patch % 2 == 0) throw std::invalid_argument("patch side must be odd");
  const size_t plen = static_cast<size_t>(c.patch_len());
  if (p.w1.size() != plen * c.hidden_width || p.b1.size() != static_cast<size_t>(c.hidden_width) ||
      p.w2.size() != static_cast<size_t>(c.num_classes) * c.hidden_width ||
      p.b2.size() != static_cast<size_t>(c.num_classes))
    throw std::invalid_argument("student parameter shapes inconsistent");
}

inline void gather_patch(const FeatureMap& f, int y, int x, int patch, double* out) {
  const int r = patch / 2;
  const int d = f.d;
  for (int dy = -r; dy <= r; ++dy) {
    const int sy = std::clamp(y + dy, 0, f.h - 1);
    for (int dx = -r; dx <= r; ++dx) {
      const int sx = std::clamp(x + dx, 0, f.w - 1);
      std::memcpy(out, f.pixel(sy, sx), sizeof(double) * d);
      out += d;
    }
  }
}

// hidden (post-relu) and probs for one pixel; returns nothing, fills buffers.
inline void forward_pixel(const StudentParams& p, const double* patch, double* hidden,
                          double* probs) {
  const int plen = p.cfg.patch_len();
  const int hw = p.cfg.hidden_width;
  const int nc = p.cfg.num_classes;
  const double* w1 = p.w1.data();
  for (int u = 0; u < hw; ++u) {
    const double* row = w1 + static_cast<size_t>(u) * plen;
    double a = p.b1[u];
    for (int j = 0; j < plen; ++j) a += row[j] * patch[j];
    hidden[u] = a > 0.0 ? a : 0.0;
  }
  const double* w2 = p.w2.data();
  double maxlogit = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < nc; ++c) {
    const double* row = w2 + static_cast<size_t>(c) * hw;
    double a = p.b2[c];
    for (int u = 0; u < hw; ++u) a += row[u] * hidden[u];
    probs[c] = a;
    if (a > maxlogit) maxlogit = a;
  }
  double sum = 0.0;
  for (int c = 0; c < nc; ++c) {
    probs[c] = std::exp(probs[c] - maxlogit);
    sum += probs[c];
  }
  const double inv = 1.0 / sum;
  for (int c = 0; c < nc; ++c) probs[c] *= inv;
}

struct GaussKernel {
  std::vector<double> taps;  // symmetric, normalized
  int radius = 0;
};

GaussKernel gaussian_kernel(double sigma) {
  GaussKernel k;
  k.radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  k.taps.resize(2 * k.radius + 1);
  double sum = 0.0;
  for (int i = -k.radius; i <= k.radius; ++i) {
    const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    k.taps[i + k.radius] = v;
    sum += v;
  }
  for (double& v : k.taps) v /= sum;
  return k;
}

void blur_inplace(FeatureMap& f, double sigma) {
  const GaussKernel k = gaussian_kernel(sigma);
  FeatureMap tmp(f.h, f.w, f.d);
  // horizontal pass f -> tmp
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x) {
      double* out = tmp.pixel(y, x);
      std::fill(out, out + f.d, 0.0);
      for (int i = -k.radius; i <= k.radius; ++i) {
        const int sx = std::clamp(x + i, 0, f.w - 1);
        const double wgt = k.taps[i + k.radius];
        const double* src = f.pixel(y, sx);
        for (int j = 0; j < f.d; ++j) out[j] += wgt * src[j];
      }
    }
  // vertical pass tmp -> f
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x) {
      double* out = f.pixel(y, x);
      std::fill(out, out + f.d, 0.0);
      for (int i = -k.radius; i <= k.radius; ++i) {
        const int sy = std::clamp(y + i, 0, f.h - 1);
        const double wgt = k.taps[i + k.radius];
        const double* src = tmp.pixel(sy, x);
        for (int j = 0; j < f.d; ++j) out[j] += wgt * src[j];
      }
    }
}

void flip_horizontal(FeatureMap& f) {
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w / 2; ++x) {
      double* a = f.pixel(y, x);
      double* b = f.pixel(y, f.w - 1 - x);
      for (int j = 0; j < f.d; ++j) std::swap(a[j], b[j]);
    }
}

void flip_horizontal(WeightedMask& m) {
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w / 2; ++x) {
      const size_t a = static_cast<size_t>(y) * m.w + x;
      const size_t b = static_cast<size_t>(y) * m.w + (m.w - 1 - x);
      std::swap(m.cls[a], m.cls[b]);
      std::swap(m.weight[a], m.weight[b]);
    }
}

}  // namespace

StudentParams StudentParams::zeros(const StudentConfig& cfg) {
  StudentParams p;
  p.cfg = cfg;
  p.w1.assign(static_cast<size_t>(cfg.hidden_width) * cfg.patch_len(), 0.0);
  p.b1.assign(cfg.hidden_width, 0.0);
  p.w2.assign(static_cast<size_t>(cfg.num_classes) * cfg.hidden_width, 0.0);
  p.b2.assign(cfg.num_classes, 0.0);
  return p;
}

StudentParams StudentParams::random_init(const StudentConfig& cfg, uint64_t seed) {
  StudentParams p = zeros(cfg);
  Rng rng(mix_seed(kInitTag, seed));
  const double stddev = std::sqrt(2.0 / cfg.patch_len());
  for (double& v : p.w1) v = stddev * rng.next_normal();
  // class head stays zero: the untrained student is exactly uniform.
  return p;
}

bool StudentParams::same_shape(const StudentParams& other) const {
  return w1.size() == other.w1.size() && b1.size() == other.b1.size() &&
         w2.size() == other.w2.size() && b2.size() == other.b2.size();
}

nlohmann::json augment_spec_to_json(const AugmentSpec& a) {
  return nlohmann::json{{"channel_scale_range", {a.channel_scale_lo, a.channel_scale_hi}},
                        {"channel_offset_stddev", a.channel_offset_stddev},
                        {"blur_sigma_range", {a.blur_sigma_lo, a.blur_sigma_hi}},
                        {"flip_prob", a.flip_prob},
                        {"seed", a.seed}};
}

AugmentSpec augment_spec_from_json(const nlohmann::json& j) {
  AugmentSpec a;
  a.channel_scale_lo = j.at("channel_scale_range").at(0).get<double>();
  a.channel_scale_hi = j.at("channel_scale_range").at(1).get<double>();
  a.channel_offset_stddev = j.at("channel_offset_stddev").get<double>();
  a.blur_sigma_lo = j.at("blur_sigma_range").at(0).get<double>();
  a.blur_sigma_hi = j.at("blur_sigma_range").at(1).get<double>();
  a.flip_prob = j.at("flip_prob").get<double>();
  a.seed = j.value("seed", static_cast<uint64_t>(0));
  if (a.channel_scale_lo > a.channel_scale_hi || a.blur_sigma_lo > a.blur_sigma_hi)
    throw std::invalid_argument("augment range lo > hi");
  if (a.channel_offset_stddev < 0.0 || a.blur_sigma_lo < 0.0)
    throw std::invalid_argument("augment stddev/sigma must be nonnegative");
  if (a.flip_prob < 0.0 || a.flip_prob > 1.0)
    throw std::invalid_argument("flip_prob outside [0,1]");
  return a;
}

nlohmann::json optim_config_to_json(const OptimConfig& c) {
  return nlohmann::json{{"lr_hidden", c.lr_hidden},   {"lr_output", c.lr_output},
                        {"weight_decay", c.weight_decay}, {"beta1", c.beta1},
                        {"beta2", c.beta2},           {"eps", c.eps},
                        {"warmup_steps", c.warmup_steps}};
}

OptimConfig optim_config_from_json(const nlohmann::json& j) {
  OptimConfig c;
  c.lr_hidden = j.at("lr_hidden").get<double>();
  c.lr_output = j.at("lr_output").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.warmup_steps = j.at("warmup_steps").get<int64_t>();
  return c;
}

OptimState OptimState::init(const StudentConfig& student_cfg, const OptimConfig& cfg) {
  OptimState s;
  s.cfg = cfg;
  s.m = StudentParams::zeros(student_cfg);
  s.v = StudentParams::zeros(student_cfg);
  s.step = 0;
  return s;
}

ProbabilityMap forward(const StudentParams& params, const FeatureMap& features) {
  check_student_shapes(params, features);
  const int nc = params.cfg.num_classes;
  ProbabilityMap out(nc, features.h, features.w);
  std::vector<double> patch(params.cfg.patch_len());
  std::vector<double> hidden(params.cfg.hidden_width);
  std::vector<double> probs(nc);
  for (int y = 0; y < features.h; ++y)
    for (int x = 0; x < features.w; ++x) {
      gather_patch(features, y, x, params.cfg.patch, patch.data());
      forward_pixel(params, patch.data(), hidden.data(), probs.data());
      for (int c = 0; c < nc; ++c) out.at(c, y, x) = probs[c];
    }
  return out;
}

ProbabilityMap forward_masked(const StudentParams& params, const FeatureMap& features,
                              const WeightedMask& mask) {
  check_student_shapes(params, features);
  if (mask.h != features.h || mask.w != features.w)
    throw std::invalid_argument("mask/feature shape mismatch");
  const int nc = params.cfg.num_classes;
  ProbabilityMap out(nc, features.h, features.w);  // zero-filled
  std::vector<double> patch(params.cfg.patch_len());
  std::vector<double> hidden(params.cfg.hidden_width);
  std::vector<double> probs(nc);
  for (int y = 0; y < features.h; ++y)
    for (int x = 0; x < features.w; ++x) {
      if (!mask.supervised(static_cast<size_t>(y) * mask.w + x)) continue;
      gather_patch(features, y, x, params.cfg.patch, patch.data());
      forward_pixel(params, patch.data(), hidden.data(), probs.data());
      for (int c = 0; c < nc; ++c) out.at(c, y, x) = probs[c];
    }
  return out;
}

Augmented augment(const FeatureMap& features, const WeightedMask& mask, const AugmentSpec& spec,
                  uint64_t step_seed) {
  if (mask.h != features.h || mask.w != features.w)
    throw std::invalid_argument("mask/feature shape mismatch");
  Augmented out{features, mask};
  if (spec.is_identity()) return out;

  const uint64_t base = mix_seed(spec.seed, step_seed);

  const bool jitter_on =
      spec.channel_scale_lo != 1.0 || spec.channel_scale_hi != 1.0 || spec.channel_offset_stddev > 0.0;
  if (jitter_on) {
    Rng rng(mix_seed(base, kJitterTag));
    std::vector<double> scale(features.d), offset(features.d);
    for (int j = 0; j < features.d; ++j)
      scale[j] = rng.next_uniform(spec.channel_scale_lo, spec.channel_scale_hi);
    for (int j = 0; j < features.d; ++j)
      offset[j] = spec.channel_offset_stddev > 0.0 ? spec.channel_offset_stddev * rng.next_normal()
                                                   : 0.0;
    for (int y = 0; y < out.features.h; ++y)
      for (int x = 0; x < out.features.w; ++x) {
        double* px = out.features.pixel(y, x);
        for (int j = 0; j < features.d; ++j) px[j] = scale[j] * px[j] + offset[j];
      }
  }

  if (spec.blur_sigma_hi > 0.0) {
    Rng rng(mix_seed(base, kBlurTag));
    const double sigma = rng.next_uniform(spec.blur_sigma_lo, spec.blur_sigma_hi);
    if (sigma > 0.0) blur_inplace(out.features, sigma);
  }

  if (spec.flip_prob > 0.0) {
    Rng rng(mix_seed(base, kFlipTag));
    if (rng.next_double() < spec.flip_prob) {
      flip_horizontal(out.features);
      flip_horizontal(out.mask);
    }
  }
  return out;
}

double masked_ce_loss(const ProbabilityMap& probs, const WeightedMask& mask) {
  if (probs.h != mask.h || probs.w != mask.w)
    throw std::invalid_argument("probs/mask shape mismatch");
  const size_t n = static_cast<size_t>(mask.h) * mask.w;
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (!mask.supervised(i)) continue;
    const double p = probs.data[static_cast<size_t>(mask.cls[i]) * n + i];
    total += mask.weight[i] * -std::log(std::max(p, kLogClamp));
  }
  return total / static_cast<double>(n);
}

StudentGrads backward(const StudentParams& params, const FeatureMap& features,
                      const WeightedMask& mask, double* loss_out) {
  check_student_shapes(params, features);
  if (mask.h != features.h || mask.w != features.w)
    throw std::invalid_argument("mask/feature shape mismatch");
  StudentGrads g = StudentParams::zeros(params.cfg);
  const int nc = params.cfg.num_classes;
  const int hw = params.cfg.hidden_width;
  const int plen = params.cfg.patch_len();
  const double inv_n = 1.0 / (static_cast<double>(features.h) * features.w);
  double loss = 0.0;
  std::vector<double> patch(plen), hidden(hw), probs(nc), g2(nc), dhidden(hw);
  for (int y = 0; y < features.h; ++y)
    for (int x = 0; x < features.w; ++x) {
      const size_t i = static_cast<size_t>(y) * features.w + x;
      if (!mask.supervised(i)) continue;
      gather_patch(features, y, x, params.cfg.patch, patch.data());
      forward_pixel(params, patch.data(), hidden.data(), probs.data());
      const int cls = mask.cls[i];
      const double wgt = mask.weight[i] * inv_n;
      if (loss_out != nullptr)
        loss += mask.weight[i] * -std::log(std::max(probs[cls], kLogClamp));
      for (int c = 0; c < nc; ++c) g2[c] = wgt * (probs[c] - (c == cls ? 1.0 : 0.0));
      std::fill(dhidden.begin(), dhidden.end(), 0.0);
      for (int c = 0; c < nc; ++c) {
        const double gc = g2[c];
        g.b2[c] += gc;
        double* gw2 = g.w2.data() + static_cast<size_t>(c) * hw;
        const double* w2 = params.w2.data() + static_cast<size_t>(c) * hw;
        for (int u = 0; u < hw; ++u) {
          gw2[u] += gc * hidden[u];
          dhidden[u] += gc * w2[u];
        }
      }
      for (int u = 0; u < hw; ++u) {
        if (hidden[u] <= 0.0) continue;  // relu gate
        const double du = dhidden[u];
        g.b1[u] += du;
        double* gw1 = g.w1.data() + static_cast<size_t>(u) * plen;
        for (int j = 0; j < plen; ++j) gw1[j] += du * patch[j];
      }
    }
  if (loss_out != nullptr)
    *loss_out = loss / (static_cast<double>(features.h) * features.w);
  return g;
}

double kd_kl_loss(const ProbabilityMap& student_probs, const ProbabilityMap& teacher_probs) {
  if (student_probs.c != teacher_probs.c || student_probs.h != teacher_probs.h ||
      student_probs.w != teacher_probs.w)
    throw std::invalid_argument("probability map shape mismatch");
  const size_t n = static_cast<size_t>(student_probs.h) * student_probs.w;
  double total = 0.0;
  for (size_t i = 0; i < n; ++i)
    for (int c = 0; c < student_probs.c; ++c) {
      const double q = teacher_probs.data[static_cast<size_t>(c) * n + i];
      if (q <= 0.0) continue;  // 0 log 0 := 0
      const double p = student_probs.data[static_cast<size_t>(c) * n + i];
      total += q * (std::log(q) - std::log(std::max(p, kLogClamp)));
    }
  return total / static_cast<double>(n);
}

StudentGrads kl_backward(const StudentParams& params, const FeatureMap& features,
                         const ProbabilityMap& teacher_probs, double* loss_out) {
  check_student_shapes(params, features);
  if (teacher_probs.c != params.cfg.num_classes || teacher_probs.h != features.h ||
      teacher_probs.w != features.w)
    throw std::invalid_argument("teacher probs shape mismatch");
  StudentGrads g = StudentParams::zeros(params.cfg);
  const int nc = params.cfg.num_classes;
  const int hw = params.cfg.hidden_width;
  const int plen = params.cfg.patch_len();
  const size_t n = static_cast<size_t>(features.h) * features.w;
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  std::vector<double> patch(plen), hidden(hw), probs(nc), g2(nc), dhidden(hw);
  for (int y = 0; y < features.h; ++y)
    for (int x = 0; x < features.w; ++x) {
      const size_t i = static_cast<size_t>(y) * features.w + x;
      gather_patch(features, y, x, params.cfg.patch, patch.data());
      forward_pixel(params, patch.data(), hidden.data(), probs.data());
      for (int c = 0; c < nc; ++c) {
        const double q = teacher_probs.data[static_cast<size_t>(c) * n + i];
        g2[c] = inv_n * (probs[c] - q);
        if (loss_out != nullptr && q > 0.0)
          loss += q * (std::log(q) - std::log(std::max(probs[c], kLogClamp)));
      }
      std::fill(dhidden.begin(), dhidden.end(), 0.0);
      for (int c = 0; c < nc; ++c) {
        const double gc = g2[c];
        g.b2[c] += gc;
        double* gw2 = g.w2.data() + static_cast<size_t>(c) * hw;
        const double* w2 = params.w2.data() + static_cast<size_t>(c) * hw;
        for (int u = 0; u < hw; ++u) {
          gw2[u] += gc * hidden[u];
          dhidden[u] += gc * w2[u];
        }
      }
      for (int u = 0; u < hw; ++u) {
        if (hidden[u] <= 0.0) continue;
        const double du = dhidden[u];
        g.b1[u] += du;
        double* gw1 = g.w1.data() + static_cast<size_t>(u) * plen;
        for (int j = 0; j < plen; ++j) gw1[j] += du * patch[j];
      }
    }
  if (loss_out != nullptr) *loss_out = loss / static_cast<double>(n);
  return g;
}

namespace {

void adamw_tensor(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                  std::vector<double>& v, double lr, double wd, const OptimConfig& c,
                  double bc1, double bc2) {
  for (size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i];
    if (!std::isfinite(gi)) throw std::runtime_error("non-finite gradient in optim_step");
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + c.eps) + wd * p[i]);
  }
}

}  // namespace

void optim_step(OptimState& state, StudentParams& params, const StudentGrads& grads) {
  if (!params.same_shape(state.m) || !params.same_shape(grads))
    throw std::invalid_argument("optimizer/param shape mismatch");
  const OptimConfig& c = state.cfg;
  // Warmup indexes the pre-increment counter so the very first step uses lr 0.
  const double warm =
      (c.warmup_steps > 0 && state.step < c.warmup_steps)
          ? static_cast<double>(state.step) / static_cast<double>(c.warmup_steps)
          : 1.0;
  const int64_t t = state.step + 1;  // bias correction is 1-based
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  adamw_tensor(params.w1, grads.w1, state.m.w1, state.v.w1, warm * c.lr_hidden, c.weight_decay, c,
               bc1, bc2);
  adamw_tensor(params.b1, grads.b1, state.m.b1, state.v.b1, warm * c.lr_hidden, c.weight_decay, c,
               bc1, bc2);
  adamw_tensor(params.w2, grads.w2, state.m.w2, state.v.w2, warm * c.lr_output, c.weight_decay, c,
               bc1, bc2);
  adamw_tensor(params.b2, grads.b2, state.m.b2, state.v.b2, warm * c.lr_output, c.weight_decay, c,
               bc1, bc2);
  state.step = t;
}

}  // namespace bbseg
