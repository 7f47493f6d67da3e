#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bbseg/pipeline.hpp"

using namespace bbseg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Shrunk benchmark for fast integration runs: same structure as the default
// config, two orders of magnitude less work.
ExperimentConfig quick_config(Variant variant, uint64_t seed, const std::string& dir) {
  ExperimentConfig c = default_experiment_config(variant, seed);
  c.dataset = {24, 8, 16, 16};
  c.total_steps = 30;
  c.eval_every = 10;
  c.optimizer.warmup_steps = 10;
  c.output_dir = dir;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& s) const { return (path / s).string(); }
};

}  // namespace

TEST_CASE("variant names round-trip and bad names are rejected") {
  for (Variant v : {Variant::Naive, Variant::KlDiv, Variant::R2cp, Variant::R2cpConsistency,
                    Variant::CorteFull, Variant::AcFilter})
    CHECK(variant_from_string(to_string(v)) == v);
  CHECK(to_string(Variant::R2cpConsistency) == "r2cp+consistency");
  CHECK(to_string(Variant::CorteFull) == "corte-full");
  CHECK_THROWS_AS(variant_from_string("r3cp"), std::invalid_argument);
}

TEST_CASE("seed derivation gives distinct named streams") {
  const Seeds s = Seeds::derive(1);
  CHECK(s.global == 1);
  CHECK(s.data != s.init);
  CHECK(s.data != s.augment);
  CHECK(s.data != s.batch);
  CHECK(s.init != s.batch);
  const Seeds t = Seeds::derive(2);
  CHECK(t.data != s.data);
  CHECK(Seeds::derive(1).batch == s.batch);
}

TEST_CASE("experiment config JSON round-trips canonically") {
  const ExperimentConfig c = default_experiment_config(Variant::CorteFull, 3);
  const nlohmann::json j = experiment_config_to_json(c);
  const ExperimentConfig back = experiment_config_from_json(j);
  CHECK(experiment_config_to_json(back).dump() == j.dump());
  CHECK(config_hash(back) == config_hash(c));
}

TEST_CASE("config hash is stable and sensitive") {
  const ExperimentConfig a = default_experiment_config(Variant::R2cp, 1);
  CHECK(config_hash(a) == config_hash(a));
  CHECK(config_hash(a).size() == 16);

  ExperimentConfig b = a;
  b.variant = Variant::Naive;
  CHECK(config_hash(b) != config_hash(a));
  ExperimentConfig c = a;
  c.seeds = Seeds::derive(2);
  CHECK(config_hash(c) != config_hash(a));
  ExperimentConfig d = a;
  d.total_steps += 1;
  CHECK(config_hash(d) != config_hash(a));
}

TEST_CASE("per-variant hyperparameter validation") {
  ExperimentConfig c = default_experiment_config(Variant::CorteFull, 1);
  CHECK_NOTHROW(c.validate());
  c.alpha.reset();
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  ExperimentConfig k = default_experiment_config(Variant::KlDiv, 1);
  k.alpha.reset();
  k.beta.reset();
  k.lambda_max.reset();
  CHECK_NOTHROW(k.validate());  // kl-div needs none of them

  ExperimentConfig bad = default_experiment_config(Variant::Naive, 1);
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  ExperimentConfig neg = default_experiment_config(Variant::CorteFull, 1);
  neg.lambda_max = -1.0;
  CHECK_THROWS_AS(neg.validate(), std::invalid_argument);
}

TEST_CASE("teacher cache answers live once then replays") {
  const ExperimentConfig c = default_experiment_config(Variant::Naive, 5);
  const DomainSpec target = make_shifted_domain(c.source_domain, c.shift.mean_shift,
                                                c.shift.stddev_scale);
  const DatasetHandle ds = generate_dataset(target, DatasetRole::TargetTrain, 6, 8, 8);
  InProcessTeacher teacher(c.source_domain);

  TeacherCache cache(config_hash(c));
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& s : ds.samples) {
      const ProbabilityMap& got = cache.probs_for(s, teacher);
      const ProbabilityMap live = teacher.predict(s.features);
      CHECK(got.data == live.data);  // replay byte-identical to live queries
    }
  CHECK(cache.misses() == 6);  // one per sample
  CHECK(cache.hits() == 6);    // whole second pass

  // A different config hash is a different key space.
  CHECK(cache.lookup("0000000000000000", 0) == nullptr);
  const ProbabilityMap* hit = cache.lookup(config_hash(c), 0);
  REQUIRE(hit != nullptr);
}

TEST_CASE("checkpoints round-trip bitwise") {
  TempDir tmp("bbseg_ckpt_test");
  ExperimentConfig c = quick_config(Variant::CorteFull, 9, tmp.sub("run"));

  StudentConfig sc = c.student;
  TrainingState st;
  st.params = StudentParams::random_init(sc, 41);
  st.opt = OptimState::init(sc, c.optimizer);
  st.opt.step = 17;
  st.opt.m.w1.assign(st.opt.m.w1.size(), 0.25);
  st.opt.v.w2.assign(st.opt.v.w2.size(), 0.5);
  st.ema = EmaState::init(StudentParams::random_init(sc, 42), 0.99);
  st.ema.step = 17;
  st.step = 17;

  const std::string path = tmp.sub("state.ckpt");
  save_checkpoint(path, c, st);
  const auto [cfg2, st2] = load_checkpoint(path);
  CHECK(config_hash(cfg2) == config_hash(c));
  CHECK(st2.step == 17);
  CHECK(st2.opt.step == 17);
  CHECK(st2.ema.step == 17);
  CHECK(st2.ema.alpha == 0.99);
  CHECK(st2.params.w1 == st.params.w1);
  CHECK(st2.params.b1 == st.params.b1);
  CHECK(st2.params.w2 == st.params.w2);
  CHECK(st2.params.b2 == st.params.b2);
  CHECK(st2.opt.m.w1 == st.opt.m.w1);
  CHECK(st2.opt.v.w2 == st.opt.v.w2);
  CHECK(st2.ema.params.w1 == st.ema.params.w1);

  CHECK_THROWS(load_checkpoint(tmp.sub("missing.ckpt")));
}

TEST_CASE("two identical runs produce byte-identical artifacts") {
  TempDir tmp("bbseg_determinism_test");
  const ExperimentConfig a = quick_config(Variant::R2cp, 11, tmp.sub("a"));
  const ExperimentConfig b = quick_config(Variant::R2cp, 11, tmp.sub("b"));
  const RunRecord ra = run_experiment(a);
  const RunRecord rb = run_experiment(b);
  CHECK(slurp(ra.metrics_csv_path) == slurp(rb.metrics_csv_path));
  CHECK(ra.final_miou() == rb.final_miou());
  REQUIRE(ra.step_losses.size() == rb.step_losses.size());
  for (size_t i = 0; i < ra.step_losses.size(); ++i)
    CHECK(ra.step_losses[i] == rb.step_losses[i]);
}

TEST_CASE("corte-full with a zero weight ceiling degenerates to consistency training") {
  TempDir tmp("bbseg_degeneracy_test");
  ExperimentConfig full = quick_config(Variant::CorteFull, 13, tmp.sub("full"));
  full.lambda_max = 0.0;
  ExperimentConfig cons = quick_config(Variant::R2cpConsistency, 13, tmp.sub("cons"));
  const RunRecord rf = run_experiment(full);
  const RunRecord rc = run_experiment(cons);
  REQUIRE(rf.step_losses.size() == rc.step_losses.size());
  for (size_t i = 0; i < rf.step_losses.size(); ++i)
    CHECK(rf.step_losses[i] == rc.step_losses[i]);  // bitwise
  CHECK(rf.final_miou() == rc.final_miou());
}

TEST_CASE("consistency training with the identity augmentation is plain filtering") {
  TempDir tmp("bbseg_identity_test");
  ExperimentConfig cons = quick_config(Variant::R2cpConsistency, 17, tmp.sub("cons"));
  cons.augment = AugmentSpec{};  // identity
  const ExperimentConfig plain = quick_config(Variant::R2cp, 17, tmp.sub("plain"));
  const RunRecord rc = run_experiment(cons);
  const RunRecord rp = run_experiment(plain);
  REQUIRE(rc.step_losses.size() == rp.step_losses.size());
  for (size_t i = 0; i < rc.step_losses.size(); ++i)
    CHECK(rc.step_losses[i] == rp.step_losses[i]);
}

TEST_CASE("abort and resume reproduces the uninterrupted run") {
  TempDir tmp("bbseg_resume_test");
  const ExperimentConfig whole = quick_config(Variant::CorteFull, 19, tmp.sub("whole"));
  const RunRecord rw = run_experiment(whole);

  const ExperimentConfig parts = quick_config(Variant::CorteFull, 19, tmp.sub("parts"));
  RunOptions first;
  first.stop_after = 15;
  const RunRecord r1 = run_experiment(parts, first);
  CHECK(fs::exists(r1.checkpoint_path));
  RunOptions second;
  second.resume_from = r1.checkpoint_path;
  const RunRecord r2 = run_experiment(parts, second);

  CHECK(slurp(rw.metrics_csv_path) == slurp(r2.metrics_csv_path));
  CHECK(rw.final_miou() == r2.final_miou());
}

TEST_CASE("resume rejects a checkpoint from a different config") {
  TempDir tmp("bbseg_resume_mismatch_test");
  const ExperimentConfig a = quick_config(Variant::R2cp, 23, tmp.sub("a"));
  RunOptions stop;
  stop.stop_after = 10;
  const RunRecord ra = run_experiment(a, stop);

  ExperimentConfig b = quick_config(Variant::R2cp, 24, tmp.sub("b"));  // different seed
  RunOptions resume;
  resume.resume_from = ra.checkpoint_path;
  CHECK_THROWS_AS(run_experiment(b, resume), std::runtime_error);
}

TEST_CASE("a single-variant ablation row equals the plain run") {
  TempDir tmp("bbseg_ablation_test");
  const ExperimentConfig base = quick_config(Variant::Naive, 29, tmp.str());
  const auto rows = run_ablation(base, {Variant::Naive});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].variant == Variant::Naive);

  ExperimentConfig solo = base;
  solo.output_dir = tmp.sub("solo");
  solo.variant = Variant::Naive;
  const RunRecord r = run_experiment(solo);
  CHECK(rows[0].final_miou == r.final_miou());

  const std::string table = slurp(tmp.sub("ablation.csv"));
  CHECK(table.find("variant,final_miou") == 0);
  CHECK(table.find("naive,") != std::string::npos);
}

TEST_CASE("remote and in-process teachers train identically") {
  TempDir tmp("bbseg_transport_test");
  ExperimentConfig local = quick_config(Variant::R2cp, 31, tmp.sub("local"));
  local.total_steps = 20;

  TeacherServer server(local.source_domain, 0);
  ExperimentConfig remote = quick_config(Variant::R2cp, 31, tmp.sub("remote"));
  remote.total_steps = 20;
  remote.teacher.kind = TeacherEndpoint::Kind::Remote;
  remote.teacher.host = "127.0.0.1";
  remote.teacher.port = server.port();

  const RunRecord rl = run_experiment(local);
  const RunRecord rr = run_experiment(remote);
  server.stop();

  REQUIRE(rl.step_losses.size() == rr.step_losses.size());
  for (size_t i = 0; i < rl.step_losses.size(); ++i)
    CHECK(rl.step_losses[i] == rr.step_losses[i]);
  CHECK(rl.final_miou() == rr.final_miou());
  // CSV rows differ only if metrics differ; they must not.
  const std::string a = slurp(rl.metrics_csv_path);
  const std::string b = slurp(rr.metrics_csv_path);
  CHECK(a == b);
}

TEST_CASE("run records carry a full evaluation history") {
  TempDir tmp("bbseg_history_test");
  const ExperimentConfig c = quick_config(Variant::Naive, 37, tmp.sub("run"));
  const RunRecord r = run_experiment(c);
  // Step-0 row plus one row per eval_every boundary (30/10 = 3).
  REQUIRE(r.history.size() == 4);
  CHECK(r.history.front().first == 0);
  CHECK(r.history.back().first == 30);
  CHECK(static_cast<int64_t>(r.step_losses.size()) == c.total_steps);
  CHECK(r.final_miou() == r.history.back().second.miou);
  CHECK(r.config_hash == config_hash(c));
  CHECK(fs::exists(r.checkpoint_path));

  // The metrics CSV mirrors the history row count (plus header).
  std::istringstream csv(slurp(r.metrics_csv_path));
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 5);
}

TEST_CASE("kl-div runs have no mask and full retention") {
  TempDir tmp("bbseg_kl_test");
  const ExperimentConfig c = quick_config(Variant::KlDiv, 41, tmp.sub("run"));
  const RunRecord r = run_experiment(c);
  for (const auto& [step, report] : r.history) {
    if (step == 0) continue;
    CHECK(report.retained_fraction == 1.0);
  }
  CHECK(r.final_miou() > 0.0);
}

TEST_CASE("evaluating zero parameters predicts the lowest class everywhere") {
  const ExperimentConfig c = quick_config(Variant::Naive, 43, "");
  const DomainSpec target = make_shifted_domain(c.source_domain, c.shift.mean_shift,
                                                c.shift.stddev_scale);
  const DatasetHandle test = generate_dataset(target, DatasetRole::TargetTest, 4, 12, 12);
  const MetricsReport r = evaluate_params(StudentParams::zeros(c.student), test);
  // Uniform probabilities tie-break to class 0: accuracy equals its frequency.
  size_t zeros = 0, total = 0;
  for (const auto& s : test.samples) {
    for (uint8_t v : s.labels.data) zeros += (v == 0);
    total += s.labels.pixels();
  }
  CHECK(r.pixel_accuracy ==
        doctest::Approx(static_cast<double>(zeros) / total).epsilon(1e-12));
  CHECK(r.per_class_iou[1] == 0.0);  // class 1 appears in labels, never predicted
}
