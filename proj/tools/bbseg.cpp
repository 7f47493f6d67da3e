// Command-line front end: dataset generation, the teacher service,
// calibration, training, ablation and checkpoint evaluation.

#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bbseg/domain.hpp"
#include "bbseg/eval.hpp"
#include "bbseg/pipeline.hpp"
#include "bbseg/pseudolabel.hpp"
#include "bbseg/teacher.hpp"

namespace {

volatile std::sig_atomic_t g_stop = 0;
void handle_signal(int) { g_stop = 1; }

nlohmann::json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return nlohmann::json::parse(is);
}

bbseg::ExperimentConfig load_config(const std::string& path) {
  return bbseg::experiment_config_from_json(load_json(path));
}

void print_report(const bbseg::MetricsReport& rep) {
  std::printf("miou            %.6f\n", rep.miou);
  std::printf("pixel_accuracy  %.6f\n", rep.pixel_accuracy);
  for (size_t k = 0; k < rep.per_class_iou.size(); ++k) {
    if (rep.iou_defined[k])
      std::printf("iou_%zu           %.6f\n", k, rep.per_class_iou[k]);
    else
      std::printf("iou_%zu           undefined\n", k);
  }
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  const bbseg::ExperimentConfig cfg = load_config(config_path);
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const bbseg::DomainSpec target = bbseg::make_shifted_domain(
      cfg.source_domain, cfg.shift.mean_shift, cfg.shift.stddev_scale);
  const auto& ds = cfg.dataset;
  bbseg::save_dataset(bbseg::generate_dataset(cfg.source_domain, bbseg::DatasetRole::Source,
                                              ds.train_samples, ds.height, ds.width),
                      out_dir + "/source.bin");
  bbseg::save_dataset(bbseg::generate_dataset(target, bbseg::DatasetRole::TargetTrain,
                                              ds.train_samples, ds.height, ds.width),
                      out_dir + "/target-train.bin");
  bbseg::save_dataset(bbseg::generate_dataset(target, bbseg::DatasetRole::TargetTest,
                                              ds.test_samples, ds.height, ds.width),
                      out_dir + "/target-test.bin");
  std::printf("wrote source.bin, target-train.bin, target-test.bin to %s\n", out_dir.c_str());
  return 0;
}

int cmd_serve_teacher(const std::string& spec_path, int port) {
  const bbseg::DomainSpec spec = bbseg::domain_spec_from_json(load_json(spec_path));
  spec.validate();
  bbseg::TeacherServer server(spec, port);
  std::printf("teacher listening on 127.0.0.1:%d\n", server.port());
  std::fflush(stdout);
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

int cmd_calibrate(const std::string& config_path, std::string out_path) {
  const bbseg::ExperimentConfig cfg = load_config(config_path);
  cfg.validate();
  if (!bbseg::variant_uses_thresholds(cfg.variant)) {
    std::fprintf(stderr, "variant %s does not calibrate thresholds\n",
                 bbseg::to_string(cfg.variant).c_str());
    return 1;
  }
  const bbseg::DomainSpec target = bbseg::make_shifted_domain(
      cfg.source_domain, cfg.shift.mean_shift, cfg.shift.stddev_scale);
  const bbseg::DatasetHandle train =
      bbseg::generate_dataset(target, bbseg::DatasetRole::TargetTrain, cfg.dataset.train_samples,
                              cfg.dataset.height, cfg.dataset.width);
  auto client = bbseg::make_teacher_client(cfg.teacher, &cfg.source_domain);
  const bbseg::ThresholdStatistic stat = cfg.variant == bbseg::Variant::AcFilter
                                             ? bbseg::ThresholdStatistic::AbsoluteConfidence
                                             : bbseg::ThresholdStatistic::RelativeConfidence;
  bbseg::ThresholdAccumulator acc(cfg.source_domain.num_classes, stat);
  for (const bbseg::SceneSample& s : train.samples) acc.add(client->predict(s.features));
  const bbseg::ClassThresholds thresholds = acc.finish();
  if (out_path.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    out_path = cfg.output_dir + "/thresholds.json";
  }
  std::ofstream os(out_path);
  os << bbseg::thresholds_to_json(thresholds).dump(2) << "\n";
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume,
              const std::string& thresholds, int64_t stop_after) {
  const bbseg::ExperimentConfig cfg = load_config(config_path);
  bbseg::RunOptions opt;
  if (!resume.empty()) opt.resume_from = resume;
  if (!thresholds.empty()) opt.thresholds_path = thresholds;
  if (stop_after > 0) opt.stop_after = stop_after;
  const bbseg::RunRecord rec = bbseg::run_experiment(cfg, opt);
  std::printf("variant %s: final miou %.6f after %lld steps (%.1fs)\n",
              bbseg::to_string(cfg.variant).c_str(), rec.final_miou(),
              static_cast<long long>(rec.history.empty() ? 0 : rec.history.back().first),
              rec.wall_clock_seconds);
  std::printf("metrics: %s\ncheckpoint: %s\n", rec.metrics_csv_path.c_str(),
              rec.checkpoint_path.c_str());
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& variants_csv) {
  const bbseg::ExperimentConfig base = load_config(config_path);
  std::vector<bbseg::Variant> variants;
  std::stringstream ss(variants_csv);
  std::string item;
  while (std::getline(ss, item, ',')) variants.push_back(bbseg::variant_from_string(item));
  const auto rows = bbseg::run_ablation(base, variants);
  std::printf("%-20s %s\n", "variant", "final_miou");
  for (const auto& row : rows)
    std::printf("%-20s %.6f\n", bbseg::to_string(row.variant).c_str(), row.final_miou);
  return 0;
}

int cmd_default_config(const std::string& variant, uint64_t seed, const std::string& out_path) {
  const bbseg::ExperimentConfig cfg =
      bbseg::default_experiment_config(bbseg::variant_from_string(variant), seed);
  const std::string text = bbseg::experiment_config_to_json(cfg).dump(2) + "\n";
  if (out_path.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    std::ofstream os(out_path);
    os << text;
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path) {
  auto [cfg, state] = bbseg::load_checkpoint(ckpt_path);
  const bbseg::DatasetHandle data = bbseg::load_dataset(data_path);
  const bbseg::MetricsReport rep = bbseg::evaluate_params(state.params, data);
  std::printf("checkpoint step %lld on %s (%zu samples)\n", static_cast<long long>(state.step),
              bbseg::to_string(data.role).c_str(), data.samples.size());
  print_report(rep);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"black-box source-free adaptation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "data", spec_path, out_path, resume, thresholds;
  std::string ckpt_path, data_path, variants_csv;
  int port = 0;
  int64_t stop_after = 0;

  auto* gen = app.add_subcommand("gen-data", "emit dataset files for a config");
  gen->add_option("--config", config_path)->required();
  gen->add_option("--out", out_dir, "output directory");

  auto* serve = app.add_subcommand("serve-teacher", "serve the source model over TCP");
  serve->add_option("--spec", spec_path, "domain spec JSON")->required();
  serve->add_option("--port", port, "0 picks an ephemeral port")->required();

  auto* cal = app.add_subcommand("calibrate", "compute per-class thresholds");
  cal->add_option("--config", config_path)->required();
  cal->add_option("--out", out_path, "thresholds JSON path");

  auto* train = app.add_subcommand("train", "run one experiment");
  train->add_option("--config", config_path)->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--thresholds", thresholds, "reuse saved calibration");
  train->add_option("--stop-after", stop_after, "checkpoint and exit at this step");

  auto* abl = app.add_subcommand("ablate", "run several variants with shared seeds");
  abl->add_option("--config", config_path)->required();
  abl->add_option("--variants", variants_csv, "comma-separated variant list")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset file");
  ev->add_option("--ckpt", ckpt_path)->required();
  ev->add_option("--data", data_path)->required();

  std::string dc_variant = "corte-full";
  uint64_t dc_seed = 1;
  auto* dc = app.add_subcommand("default-config", "print the benchmark config");
  dc->add_option("--variant", dc_variant);
  dc->add_option("--seed", dc_seed);
  dc->add_option("--out", out_path, "write to a file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir);
    if (serve->parsed()) return cmd_serve_teacher(spec_path, port);
    if (cal->parsed()) return cmd_calibrate(config_path, out_path);
    if (train->parsed()) return cmd_train(config_path, resume, thresholds, stop_after);
    if (abl->parsed()) return cmd_ablate(config_path, variants_csv);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_path);
    if (dc->parsed()) return cmd_default_config(dc_variant, dc_seed, out_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
