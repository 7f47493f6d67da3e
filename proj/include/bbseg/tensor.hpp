#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace bbseg {

// H x W x d feature tensor, row-major with the channel innermost.
struct FeatureMap {
  int h = 0, w = 0, d = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int h_, int w_, int d_)
      : h(h_), w(w_), d(d_), data(static_cast<size_t>(h_) * w_ * d_, 0.0) {}

  double& at(int y, int x, int j) { return data[(static_cast<size_t>(y) * w + x) * d + j]; }
  double at(int y, int x, int j) const { return data[(static_cast<size_t>(y) * w + x) * d + j]; }
  const double* pixel(int y, int x) const { return &data[(static_cast<size_t>(y) * w + x) * d]; }
  double* pixel(int y, int x) { return &data[(static_cast<size_t>(y) * w + x) * d]; }
  size_t pixels() const { return static_cast<size_t>(h) * w; }
};

// H x W per-pixel class labels.
struct LabelGrid {
  int h = 0, w = 0;
  std::vector<uint8_t> data;

  LabelGrid() = default;
  LabelGrid(int h_, int w_) : h(h_), w(w_), data(static_cast<size_t>(h_) * w_, 0) {}

  uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * w + x]; }
  size_t pixels() const { return static_cast<size_t>(h) * w; }
};

// C x H x W class-probability tensor, class-major (matches the wire layout).
struct ProbabilityMap {
  int c = 0, h = 0, w = 0;
  std::vector<double> data;

  ProbabilityMap() = default;
  ProbabilityMap(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), data(static_cast<size_t>(c_) * h_ * w_, 0.0) {}

  double& at(int k, int y, int x) { return data[(static_cast<size_t>(k) * h + y) * w + x]; }
  double at(int k, int y, int x) const { return data[(static_cast<size_t>(k) * h + y) * w + x]; }
  size_t pixels() const { return static_cast<size_t>(h) * w; }
  size_t plane() const { return static_cast<size_t>(h) * w; }
};

// Per-pixel (class, weight) supervision. A pixel is unsupervised iff its
// class is kNoClass, which holds exactly when its weight is 0.
struct WeightedMask {
  static constexpr int16_t kNoClass = -1;

  int h = 0, w = 0;
  std::vector<int16_t> cls;
  std::vector<double> weight;

  WeightedMask() = default;
  WeightedMask(int h_, int w_)
      : h(h_), w(w_),
        cls(static_cast<size_t>(h_) * w_, kNoClass),
        weight(static_cast<size_t>(h_) * w_, 0.0) {}

  size_t pixels() const { return static_cast<size_t>(h) * w; }
  bool supervised(size_t i) const { return cls[i] != kNoClass; }

  void set(int y, int x, int16_t c, double wgt) {
    const size_t i = static_cast<size_t>(y) * w + x;
    cls[i] = c;
    weight[i] = wgt;
  }
};

}  // namespace bbseg
