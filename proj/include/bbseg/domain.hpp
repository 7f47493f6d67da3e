#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bbseg/tensor.hpp"

namespace bbseg {

// Scene layout: either plain horizontal bands (one band per class, heights
// proportional to the class priors) or bands with per-sample random
// rectangles of selected classes stamped on top.
struct LayoutParams {
  enum class Kind { HorizontalBands, BandsPlusRectangles };

  Kind kind = Kind::HorizontalBands;
  int num_rects = 0;                // rectangles stamped per sample
  int rect_min = 2, rect_max = 4;   // inclusive side-length range
  std::vector<int> rect_classes;    // classes eligible for stamping
};

// Generative description of one domain: class layout frequencies plus a
// per-class diagonal Gaussian feature emission.
struct DomainSpec {
  int num_classes = 0;   // C >= 2
  int feature_dim = 0;   // d >= 1
  std::vector<double> class_means;    // C*d row-major
  std::vector<double> class_stddevs;  // C*d, strictly positive
  std::vector<double> class_priors;   // C entries, sum to 1 within 1e-9
  LayoutParams layout;
  uint64_t seed = 0;

  double mean(int c, int j) const { return class_means[static_cast<size_t>(c) * feature_dim + j]; }
  double stddev(int c, int j) const { return class_stddevs[static_cast<size_t>(c) * feature_dim + j]; }

  // Throws std::invalid_argument on any violated invariant.
  void validate() const;
};

struct SceneSample {
  FeatureMap features;
  LabelGrid labels;  // held out from training; read only by evaluation code
  int64_t sample_id = 0;
};

enum class DatasetRole { Source, TargetTrain, TargetTest };

std::string to_string(DatasetRole role);
DatasetRole dataset_role_from_string(const std::string& s);

struct DatasetHandle {
  DomainSpec spec;
  DatasetRole role = DatasetRole::TargetTrain;
  std::vector<SceneSample> samples;  // sample_ids contiguous from 0
};

// Band heights by largest-remainder apportionment of priors over h rows.
// Throws if any class would end up with zero rows.
std::vector<int> band_heights(const std::vector<double>& priors, int h);

void stamp_rectangle(LabelGrid& labels, int y0, int x0, int rh, int rw, int cls);

// Deterministic label grid for one sample. h, w >= 4.
LabelGrid generate_layout(const DomainSpec& spec, uint64_t sample_seed, int h, int w);

// Per-pixel diagonal-Gaussian feature draw, keyed by
// (spec.seed, sample_seed, pixel index) so regeneration is bitwise stable.
FeatureMap emit_features(const LabelGrid& labels, const DomainSpec& spec, uint64_t sample_seed);

// Target spec: means shifted by `shift` (C*d row-major), stddevs scaled,
// fresh seed derived from the source seed. Layout and priors unchanged.
DomainSpec make_shifted_domain(const DomainSpec& source, const std::vector<double>& shift,
                               double stddev_scale);

// Pure function of (spec, role, num_samples, h, w).
DatasetHandle generate_dataset(const DomainSpec& spec, DatasetRole role, int num_samples,
                               int h, int w);

nlohmann::json domain_spec_to_json(const DomainSpec& spec);
DomainSpec domain_spec_from_json(const nlohmann::json& j);

// One file per dataset: length-prefixed canonical-JSON header followed by
// per-sample binary blocks (see README for the exact byte layout).
void save_dataset(const DatasetHandle& ds, const std::string& path);
DatasetHandle load_dataset(const std::string& path);

}  // namespace bbseg
