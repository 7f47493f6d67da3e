#include "bbseg/domain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "bbseg/rng.hpp"
#include "binio.hpp"

namespace bbseg {

namespace {

// Seed-space tags so layout, emission and dataset streams never collide.
constexpr uint64_t kLayoutTag = 0x4c41594f55540001ULL;
constexpr uint64_t kEmitTag = 0x454d495400000001ULL;
constexpr uint64_t kShiftTag = 0x5348494654000001ULL;

}  // namespace

void DomainSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("DomainSpec: num_classes must be >= 2");
  if (feature_dim < 1) throw std::invalid_argument("DomainSpec: feature_dim must be >= 1");
  const size_t cd = static_cast<size_t>(num_classes) * feature_dim;
  if (class_means.size() != cd) throw std::invalid_argument("DomainSpec: class_means shape mismatch");
  if (class_stddevs.size() != cd)
    throw std::invalid_argument("DomainSpec: class_stddevs shape mismatch");
  if (class_priors.size() != static_cast<size_t>(num_classes))
    throw std::invalid_argument("DomainSpec: class_priors shape mismatch");
  for (double s : class_stddevs)
    if (!(s > 0.0)) throw std::invalid_argument("DomainSpec: stddevs must be strictly positive");
  double prior_sum = 0.0;
  for (double p : class_priors) {
    if (!(p >= 0.0)) throw std::invalid_argument("DomainSpec: priors must be nonnegative");
    prior_sum += p;
  }
  if (std::abs(prior_sum - 1.0) > 1e-9)
    throw std::invalid_argument("DomainSpec: priors must sum to 1 within 1e-9");
  if (layout.kind == LayoutParams::Kind::BandsPlusRectangles) {
    if (layout.num_rects < 0) throw std::invalid_argument("DomainSpec: num_rects must be >= 0");
    if (layout.rect_min < 1 || layout.rect_max < layout.rect_min)
      throw std::invalid_argument("DomainSpec: rectangle side range invalid");
    for (int c : layout.rect_classes)
      if (c < 0 || c >= num_classes)
        throw std::invalid_argument("DomainSpec: rect_classes out of range");
    if (layout.num_rects > 0 && layout.rect_classes.empty())
      throw std::invalid_argument("DomainSpec: rect_classes empty with num_rects > 0");
  }
}

std::string to_string(DatasetRole role) {
  switch (role) {
    case DatasetRole::Source: return "source";
    case DatasetRole::TargetTrain: return "target-train";
    case DatasetRole::TargetTest: return "target-test";
  }
  throw std::logic_error("unknown DatasetRole");
}

DatasetRole dataset_role_from_string(const std::string& s) {
  if (s == "source") return DatasetRole::Source;
  if (s == "target-train") return DatasetRole::TargetTrain;
  if (s == "target-test") return DatasetRole::TargetTest;
  throw std::invalid_argument("unknown dataset role: " + s);
}

std::vector<int> band_heights(const std::vector<double>& priors, int h) {
  const int c = static_cast<int>(priors.size());
  std::vector<int> rows(c, 0);
  std::vector<std::pair<double, int>> remainder(c);
  int assigned = 0;
  for (int k = 0; k < c; ++k) {
    const double exact = priors[k] * h;
    rows[k] = static_cast<int>(std::floor(exact));
    remainder[k] = {exact - rows[k], k};
    assigned += rows[k];
  }
  // Hand the leftover rows to the largest remainders; ties go to the lower
  // class index so the apportionment is total-order deterministic.
  std::stable_sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; i < h - assigned; ++i) rows[remainder[i % c].second] += 1;
  for (int k = 0; k < c; ++k)
    if (rows[k] == 0)
      throw std::invalid_argument("band layout gives class " + std::to_string(k) + " zero rows");
  return rows;
}

void stamp_rectangle(LabelGrid& labels, int y0, int x0, int rh, int rw, int cls) {
  for (int y = y0; y < y0 + rh; ++y)
    for (int x = x0; x < x0 + rw; ++x) labels.at(y, x) = static_cast<uint8_t>(cls);
}

LabelGrid generate_layout(const DomainSpec& spec, uint64_t sample_seed, int h, int w) {
  if (h < 4 || w < 4) throw std::invalid_argument("generate_layout: h, w must be >= 4");
  const std::vector<int> rows = band_heights(spec.class_priors, h);

  LabelGrid labels(h, w);
  int y = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int r = 0; r < rows[c]; ++r, ++y)
      for (int x = 0; x < w; ++x) labels.at(y, x) = static_cast<uint8_t>(c);
  }

  if (spec.layout.kind == LayoutParams::Kind::BandsPlusRectangles && spec.layout.num_rects > 0) {
    Rng rng(mix_seed(kLayoutTag, spec.seed, sample_seed));
    const int span = spec.layout.rect_max - spec.layout.rect_min + 1;
    for (int r = 0; r < spec.layout.num_rects; ++r) {
      const int cls = spec.layout.rect_classes[rng.next_int(
          static_cast<int>(spec.layout.rect_classes.size()))];
      const int rh = std::min(h, spec.layout.rect_min + rng.next_int(span));
      const int rw = std::min(w, spec.layout.rect_min + rng.next_int(span));
      const int y0 = rng.next_int(h - rh + 1);
      const int x0 = rng.next_int(w - rw + 1);
      stamp_rectangle(labels, y0, x0, rh, rw, cls);
    }
  }
  return labels;
}

FeatureMap emit_features(const LabelGrid& labels, const DomainSpec& spec, uint64_t sample_seed) {
  const int h = labels.h, w = labels.w, d = spec.feature_dim;
  FeatureMap features(h, w, d);
  const uint64_t base = mix_seed(kEmitTag, spec.seed, sample_seed);
  for (size_t i = 0; i < labels.pixels(); ++i) {
    const int c = labels.data[i];
    Rng rng(mix_seed(base, i));
    double* out = &features.data[i * d];
    const double* mu = &spec.class_means[static_cast<size_t>(c) * d];
    const double* sd = &spec.class_stddevs[static_cast<size_t>(c) * d];
    for (int j = 0; j < d; ++j) out[j] = mu[j] + sd[j] * rng.next_normal();
  }
  return features;
}

DomainSpec make_shifted_domain(const DomainSpec& source, const std::vector<double>& shift,
                               double stddev_scale) {
  if (shift.size() != source.class_means.size())
    throw std::invalid_argument("make_shifted_domain: shift shape mismatch");
  if (!(stddev_scale > 0.0))
    throw std::invalid_argument("make_shifted_domain: stddev_scale must be positive");
  DomainSpec target = source;
  for (size_t i = 0; i < shift.size(); ++i) target.class_means[i] += shift[i];
  for (double& s : target.class_stddevs) s *= stddev_scale;
  target.seed = mix_seed(kShiftTag, source.seed);
  return target;
}

DatasetHandle generate_dataset(const DomainSpec& spec, DatasetRole role, int num_samples,
                               int h, int w) {
  spec.validate();
  DatasetHandle ds;
  ds.spec = spec;
  ds.role = role;
  ds.samples.reserve(static_cast<size_t>(num_samples));
  const uint64_t role_seed = mix_seed(spec.seed, static_cast<uint64_t>(role) + 1);
  for (int i = 0; i < num_samples; ++i) {
    const uint64_t sample_seed = mix_seed(role_seed, static_cast<uint64_t>(i));
    SceneSample s;
    s.sample_id = i;
    s.labels = generate_layout(spec, sample_seed, h, w);
    s.features = emit_features(s.labels, spec, sample_seed);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

nlohmann::json domain_spec_to_json(const DomainSpec& spec) {
  nlohmann::json layout;
  if (spec.layout.kind == LayoutParams::Kind::HorizontalBands) {
    layout["kind"] = "horizontal-bands";
  } else {
    layout["kind"] = "bands-plus-rectangles";
    layout["num_rects"] = spec.layout.num_rects;
    layout["rect_min"] = spec.layout.rect_min;
    layout["rect_max"] = spec.layout.rect_max;
    layout["rect_classes"] = spec.layout.rect_classes;
  }
  nlohmann::json means = nlohmann::json::array();
  nlohmann::json stddevs = nlohmann::json::array();
  for (int c = 0; c < spec.num_classes; ++c) {
    nlohmann::json mrow = nlohmann::json::array(), srow = nlohmann::json::array();
    for (int j = 0; j < spec.feature_dim; ++j) {
      mrow.push_back(spec.mean(c, j));
      srow.push_back(spec.stddev(c, j));
    }
    means.push_back(std::move(mrow));
    stddevs.push_back(std::move(srow));
  }
  return nlohmann::json{{"num_classes", spec.num_classes},
                        {"feature_dim", spec.feature_dim},
                        {"class_means", std::move(means)},
                        {"class_stddevs", std::move(stddevs)},
                        {"class_priors", spec.class_priors},
                        {"layout", std::move(layout)},
                        {"seed", spec.seed}};
}

DomainSpec domain_spec_from_json(const nlohmann::json& j) {
  DomainSpec spec;
  spec.num_classes = j.at("num_classes").get<int>();
  spec.feature_dim = j.at("feature_dim").get<int>();
  for (const auto& row : j.at("class_means"))
    for (const auto& v : row) spec.class_means.push_back(v.get<double>());
  for (const auto& row : j.at("class_stddevs"))
    for (const auto& v : row) spec.class_stddevs.push_back(v.get<double>());
  spec.class_priors = j.at("class_priors").get<std::vector<double>>();
  const auto& layout = j.at("layout");
  const std::string kind = layout.at("kind").get<std::string>();
  if (kind == "horizontal-bands") {
    spec.layout.kind = LayoutParams::Kind::HorizontalBands;
  } else if (kind == "bands-plus-rectangles") {
    spec.layout.kind = LayoutParams::Kind::BandsPlusRectangles;
    spec.layout.num_rects = layout.at("num_rects").get<int>();
    spec.layout.rect_min = layout.at("rect_min").get<int>();
    spec.layout.rect_max = layout.at("rect_max").get<int>();
    spec.layout.rect_classes = layout.at("rect_classes").get<std::vector<int>>();
  } else {
    throw std::invalid_argument("unknown layout kind: " + kind);
  }
  spec.seed = j.at("seed").get<uint64_t>();
  spec.validate();
  return spec;
}

void save_dataset(const DatasetHandle& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);

  nlohmann::json header{{"spec", domain_spec_to_json(ds.spec)},
                        {"role", to_string(ds.role)},
                        {"num_samples", ds.samples.size()}};
  const std::string header_str = header.dump();
  binio::write_u64le(os, header_str.size());
  os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

  for (const auto& s : ds.samples) {
    binio::write_u64le(os, static_cast<uint64_t>(s.sample_id));
    binio::write_u32le(os, static_cast<uint32_t>(s.features.h));
    binio::write_u32le(os, static_cast<uint32_t>(s.features.w));
    binio::write_u32le(os, static_cast<uint32_t>(s.features.d));
    binio::write_f64le(os, s.features.data.data(), s.features.data.size());
    os.write(reinterpret_cast<const char*>(s.labels.data.data()),
             static_cast<std::streamsize>(s.labels.data.size()));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

DatasetHandle load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);

  const uint64_t header_len = binio::read_u64le(is);
  std::string header_str(header_len, '\0');
  is.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw std::runtime_error("truncated dataset header: " + path);
  const nlohmann::json header = nlohmann::json::parse(header_str);

  DatasetHandle ds;
  ds.spec = domain_spec_from_json(header.at("spec"));
  ds.role = dataset_role_from_string(header.at("role").get<std::string>());
  const size_t n = header.at("num_samples").get<size_t>();
  ds.samples.reserve(n);

  for (size_t i = 0; i < n; ++i) {
    SceneSample s;
    s.sample_id = static_cast<int64_t>(binio::read_u64le(is));
    const int h = static_cast<int>(binio::read_u32le(is));
    const int w = static_cast<int>(binio::read_u32le(is));
    const int d = static_cast<int>(binio::read_u32le(is));
    s.features = FeatureMap(h, w, d);
    binio::read_f64le(is, s.features.data.data(), s.features.data.size());
    s.labels = LabelGrid(h, w);
    is.read(reinterpret_cast<char*>(s.labels.data.data()),
            static_cast<std::streamsize>(s.labels.data.size()));
    if (!is) throw std::runtime_error("truncated sample block in " + path);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace bbseg
