#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bbseg/domain.hpp"
#include "bbseg/eval.hpp"
#include "bbseg/pseudolabel.hpp"
#include "bbseg/refine.hpp"
#include "bbseg/student.hpp"
#include "bbseg/teacher.hpp"

namespace bbseg {

enum class Variant { Naive, KlDiv, R2cp, R2cpConsistency, CorteFull, AcFilter };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

// Does the variant calibrate thresholds, and on which statistic?
bool variant_uses_thresholds(Variant v);
// Does it train on strongly augmented inputs?
bool variant_uses_consistency(Variant v);
// Does it maintain the EMA model and refine masks with it?
bool variant_uses_ema(Variant v);

// Every random draw in a run flows from one of these named sub-seeds.
struct Seeds {
  uint64_t global = 0;
  uint64_t data = 0;
  uint64_t init = 0;
  uint64_t augment = 0;
  uint64_t batch = 0;

  static Seeds derive(uint64_t global);
};

nlohmann::json seeds_to_json(const Seeds& s);
Seeds seeds_from_json(const nlohmann::json& j);

struct DomainShift {
  std::vector<double> mean_shift;  // C*d row-major
  double stddev_scale = 1.0;
};

struct DatasetSpec {
  int train_samples = 0;
  int test_samples = 0;
  int height = 0;
  int width = 0;
};

struct ExperimentConfig {
  DomainSpec source_domain;
  DomainShift shift;
  DatasetSpec dataset;
  Variant variant = Variant::Naive;

  // Method hyperparameters; presence is validated per variant.
  std::optional<double> alpha;       // EMA momentum (corte-full)
  std::optional<double> beta;        // EMA confidence threshold (corte-full)
  std::optional<double> lambda_max;  // refined-pixel weight ceiling (corte-full)
  int64_t total_steps = 3000;
  int batch_size = 8;
  int64_t eval_every = 250;

  StudentConfig student;  // feature_dim/num_classes filled from the domain
  OptimConfig optimizer;
  AugmentSpec augment;

  TeacherEndpoint teacher;
  Seeds seeds;
  std::string output_dir;

  void validate() const;
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

// FNV-1a over the canonical JSON rendering, as a fixed-width hex string.
std::string config_hash(const ExperimentConfig& c);

// Teacher outputs are immutable for a fixed source model, so each sample is
// queried once and replayed from here afterwards.
class TeacherCache {
 public:
  explicit TeacherCache(std::string config_hash) : hash_(std::move(config_hash)) {}

  const ProbabilityMap* lookup(const std::string& config_hash, int64_t sample_id);
  void insert(const std::string& config_hash, int64_t sample_id, ProbabilityMap probs);

  // Query-through helper used by the training loop.
  const ProbabilityMap& probs_for(const SceneSample& sample, TeacherClient& client);

  int64_t hits() const { return hits_; }
  int64_t misses() const { return misses_; }

 private:
  std::string hash_;
  std::map<int64_t, ProbabilityMap> entries_;
  int64_t hits_ = 0;
  int64_t misses_ = 0;
};

struct TrainingState {
  StudentParams params;
  OptimState opt;
  EmaState ema;
  int64_t step = 0;  // completed optimizer steps
};

void save_checkpoint(const std::string& path, const ExperimentConfig& config,
                     const TrainingState& state);
// Returns the stored config alongside the state; callers decide whether the
// hash must match their own config.
std::pair<ExperimentConfig, TrainingState> load_checkpoint(const std::string& path);

struct RunRecord {
  std::string config_hash;
  std::vector<std::pair<int64_t, MetricsReport>> history;  // (step, report)
  std::vector<double> step_losses;                         // one entry per optimizer step
  double wall_clock_seconds = 0.0;
  std::string checkpoint_path;
  std::string metrics_csv_path;

  double final_miou() const;
};

struct RunOptions {
  std::optional<int64_t> stop_after;     // checkpoint and return at this step
  std::optional<std::string> resume_from;  // checkpoint path
  std::optional<std::string> thresholds_path;  // reuse a saved calibration
  bool quiet = true;
};

RunRecord run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

struct AblationRow {
  Variant variant;
  double final_miou = 0.0;
};

// Runs each variant with shared seeds; emits <output_dir>/ablation.csv.
std::vector<AblationRow> run_ablation(const ExperimentConfig& base,
                                      const std::vector<Variant>& variants);

// The seeded synthetic benchmark used across tests: a band-and-rectangle
// scene over four feature channels with one drifting class pair, one
// contracting three-class cluster and one stable class.
ExperimentConfig default_experiment_config(Variant variant, uint64_t seed);

// Evaluate a student on a dataset: argmax predictions against held-out labels.
MetricsReport evaluate_params(const StudentParams& params, const DatasetHandle& data);

}  // namespace bbseg
