#pragma once

// End-to-end experiment: data, baseline, both teachers, students, reports.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dtdbd/checkpoint.hpp"
#include "dtdbd/config.hpp"
#include "dtdbd/data.hpp"
#include "dtdbd/io.hpp"
#include "dtdbd/report.hpp"
#include "dtdbd/training.hpp"

namespace dtdbd {

struct DataSource {
  /// Empty means synthetic.
  std::string path;
  SyntheticSpec synthetic = SyntheticSpec::table1();
  double train_ratio = 0.8, val_ratio = 0.1, test_ratio = 0.1;
};

struct ExperimentConfig {
  DataSource data;
  EncoderConfig encoder;
  TrainConfig baseline;
  TrainConfig teacher;
  TrainConfig student;
  DistillConfig distill;
  DaaConfig daa;
  /// Student modes to train against the same pair of teachers.
  std::vector<TrainMode> student_modes{TrainMode::dtdbd};
  /// Also train a plain DAT teacher for comparison.
  bool dat_baseline = false;
  std::uint64_t seed = 0;
  std::string output_dir;
};

inline const std::vector<std::string>& experiment_config_keys() {
  static const std::vector<std::string> keys{
      "experiment.seed", "experiment.out", "experiment.student_modes", "experiment.dat_baseline",
      "data.path", "data.spec", "data.n", "data.seed", "data.embed_dim", "data.signal_dims", "data.domain_dims",
      "data.signal_separation", "data.noise_sigma", "data.domain_amplitude", "data.train_ratio",
      "data.val_ratio", "data.test_ratio",
      "encoder.kind", "encoder.embed_dim", "encoder.seq_len", "encoder.kernel_widths", "encoder.channels",
      "encoder.mlp_hidden",
      "baseline.epochs", "baseline.learning_rate", "baseline.optimizer", "baseline.batch_size", "baseline.patience",
      "teacher.epochs", "teacher.learning_rate", "teacher.optimizer", "teacher.batch_size", "teacher.patience",
      "student.epochs", "student.learning_rate", "student.optimizer", "student.batch_size", "student.patience",
      "distill.tau", "distill.alpha", "distill.beta", "distill.include_diagonal", "distill.kl_direction",
      "daa.momentum", "daa.initial_omega_add", "daa.omega_s", "daa.omega_min", "daa.omega_max", "daa.sign_flip",
      "daa.normalize_bias"};
  return keys;
}

inline TrainConfig train_config_from(const ConfigDoc& doc, const std::string& section, TrainConfig base) {
  base.epochs = doc.integer(section + ".epochs", base.epochs);
  base.learning_rate = doc.real(section + ".learning_rate", base.learning_rate);
  base.optimizer = optimizer_from_string(doc.str(section + ".optimizer", to_string(base.optimizer)));
  base.batch_size = doc.integer(section + ".batch_size", base.batch_size);
  base.patience = doc.integer(section + ".patience", base.patience);
  return base;
}

/// Builds an experiment from a config document. `seed_fallback` applies when
/// the document has no experiment.seed.
inline ExperimentConfig experiment_from_config(const ConfigDoc& doc, std::uint64_t seed_fallback = 0) {
  if (auto unknown = doc.unknown_keys(experiment_config_keys()); !unknown.empty())
    throw ConfigError("unknown config key '" + unknown.front() + "'");
  ExperimentConfig c;
  c.seed = doc.integer("experiment.seed", seed_fallback);
  c.output_dir = doc.str("experiment.out", "");
  std::vector<std::string> modes;
  for (auto m : c.student_modes) modes.push_back(to_string(m));
  c.student_modes.clear();
  for (const auto& m : doc.strings("experiment.student_modes", modes)) {
    const auto mode = train_mode_from_string(m);
    initial_weights(mode, c.daa);  // rejects non-student modes
    c.student_modes.push_back(mode);
  }
  c.dat_baseline = doc.boolean("experiment.dat_baseline", c.dat_baseline);

  auto& d = c.data;
  d.path = doc.str("data.path", "");
  const auto spec_name = doc.str("data.spec", "table1");
  if (spec_name != "table1") throw ConfigError("unknown synthetic spec '" + spec_name + "'");
  auto& s = d.synthetic;
  s.total_n = doc.integer("data.n", s.total_n);
  s.seed = doc.integer("data.seed", c.seed);
  s.embed_dim = doc.integer("data.embed_dim", s.embed_dim);
  s.signal_dims = doc.integer("data.signal_dims", s.signal_dims);
  s.domain_dims = doc.integer("data.domain_dims", s.domain_dims);
  s.signal_separation = doc.real("data.signal_separation", s.signal_separation);
  s.noise_sigma = doc.real("data.noise_sigma", s.noise_sigma);
  s.domain_amplitude = doc.real("data.domain_amplitude", s.domain_amplitude);
  d.train_ratio = doc.real("data.train_ratio", d.train_ratio);
  d.val_ratio = doc.real("data.val_ratio", d.val_ratio);
  d.test_ratio = doc.real("data.test_ratio", d.test_ratio);

  auto& e = c.encoder;
  e.kind = encoder_kind_from_string(doc.str("encoder.kind", to_string(e.kind)));
  if (e.kind == EncoderKind::mlp) e.embed_dim = s.embed_dim;
  e.embed_dim = doc.integer("encoder.embed_dim", e.embed_dim);
  e.seq_len = doc.integer("encoder.seq_len", e.seq_len);
  e.kernel_widths = doc.integers("encoder.kernel_widths", e.kernel_widths);
  e.channels_per_kernel = doc.integer("encoder.channels", e.channels_per_kernel);
  e.mlp_hidden = doc.integers("encoder.mlp_hidden", e.mlp_hidden);
  e.validate();

  c.baseline = train_config_from(doc, "baseline", c.baseline);
  c.teacher = train_config_from(doc, "teacher", c.teacher);
  c.student = train_config_from(doc, "student", c.student);
  for (auto* t : {&c.baseline, &c.teacher, &c.student}) {
    t->seed = c.seed;
    t->validate();
  }

  auto& k = c.distill;
  k.tau = doc.real("distill.tau", k.tau);
  k.alpha = doc.real("distill.alpha", k.alpha);
  if (doc.has("distill.beta")) k.beta_override = doc.real("distill.beta", 0.0);
  k.include_diagonal = doc.boolean("distill.include_diagonal", k.include_diagonal);
  k.kl_direction = kl_direction_from_string(doc.str("distill.kl_direction", to_string(k.kl_direction)));
  k.validate();

  auto& a = c.daa;
  a.momentum = doc.real("daa.momentum", a.momentum);
  a.initial_omega_add = doc.real("daa.initial_omega_add", a.initial_omega_add);
  a.omega_s = doc.real("daa.omega_s", a.omega_s);
  a.omega_min = doc.real("daa.omega_min", a.omega_min);
  a.omega_max = doc.real("daa.omega_max", a.omega_max);
  a.sign_flip = doc.boolean("daa.sign_flip", a.sign_flip);
  a.normalize_bias = doc.boolean("daa.normalize_bias", a.normalize_bias);
  a.validate();
  return c;
}

struct RunOutcome {
  std::string name;
  TrainResult result;
  MetricsReport test;
};

struct ExperimentResult {
  std::vector<RunOutcome> runs;
  SplitResult data;

  const RunOutcome& run(const std::string& name) const {
    for (const auto& r : runs)
      if (r.name == name) return r;
    throw ContractError("no run named '" + name + "'");
  }
};

inline SplitResult load_experiment_data(const ExperimentConfig& cfg) {
  const Dataset ds = cfg.data.path.empty() ? generate_synthetic(cfg.data.synthetic) : load_dataset(cfg.data.path);
  return split(ds, cfg.data.train_ratio, cfg.data.val_ratio, cfg.data.test_ratio, cfg.seed);
}

inline std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

using Logger = std::function<void(const std::string&)>;

/// Trains every run in memory. Deterministic for a fixed config.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const Logger& log = {}) {
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  ExperimentResult out;
  out.data = load_experiment_data(cfg);
  for (const auto& w : out.data.warnings) say("warning: " + w);
  const auto& [train, val, test, warnings] = out.data;
  say("data: train " + std::to_string(train.size()) + ", val " + std::to_string(val.size()) + ", test " +
      std::to_string(test.size()));
  auto record = [&](std::string name, TrainResult r) {
    auto rep = evaluate(r.best, test);
    say(name + ": best epoch " + std::to_string(r.best_epoch) + " of " + std::to_string(r.history.size()) +
        ", test F1 " + fmt4(rep.overall_f1) + ", Total " + fmt4(rep.total));
    out.runs.push_back({std::move(name), std::move(r), std::move(rep)});
  };

  TrainConfig base = cfg.baseline;
  base.mode = TrainMode::ce_baseline;
  record("ce_baseline", train_ce_baseline(cfg.encoder, train, val, base));

  TrainConfig tc = cfg.teacher;
  if (cfg.dat_baseline) {
    tc.mode = TrainMode::dat;
    record("dat_teacher", train_unbiased_teacher(cfg.encoder, train, val, tc, cfg.distill));
  }
  tc.mode = TrainMode::dat_ie;
  record("unbiased_teacher", train_unbiased_teacher(cfg.encoder, train, val, tc, cfg.distill));
  tc.mode = TrainMode::ce_baseline;
  record("clean_teacher", train_clean_teacher(cfg.encoder, train, val, tc));
  // `runs` grows below; hold copies rather than references.
  const ModelParams unbiased = out.run("unbiased_teacher").result.best;
  const ModelParams clean = out.run("clean_teacher").result.best;

  for (auto mode : cfg.student_modes) {
    TrainConfig sc = cfg.student;
    sc.mode = mode;
    record(std::string("student_") + to_string(mode),
           train_student_dtdbd(cfg.encoder, train, val, unbiased, clean, sc, cfg.distill, cfg.daa));
  }
  return out;
}

inline std::vector<std::string> domain_names(std::size_t k) {
  static const std::vector<std::string> table1{"Science", "Military", "Education", "Disaster", "Politics",
                                               "Health",  "Finance",  "Ent.",      "Society"};
  if (k == table1.size()) return table1;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back("domain" + std::to_string(i));
  return out;
}

/// All runs' per-epoch rows plus a final test row each, prefixed by run name.
inline std::string combined_metrics_csv(const ExperimentResult& r) {
  std::string out = std::string("run,") + kMetricsCsvHeader;
  for (const auto& run : r.runs) {
    std::istringstream rows(metrics_csv(run.result, &run.test));
    std::string line;
    std::getline(rows, line);  // header
    while (std::getline(rows, line)) out += run.name + "," + line + "\n";
  }
  return out;
}

/// Writes checkpoints, metrics, trajectories, reports and the summary table.
/// Timestamps go only to run.log.
inline void write_experiment(const ExperimentResult& r, const std::filesystem::path& dir,
                             const std::string& log_text) {
  namespace fs = std::filesystem;
  for (const auto& run : r.runs) {
    save_checkpoint(run.result.best, dir / "checkpoints" / (run.name + ".json"));
    write_file_atomic(dir / "reports" / (run.name + ".json"), report_to_json(run.test).dump(2) + "\n");
    write_file_atomic(dir / "metrics" / (run.name + ".csv"), metrics_csv(run.result, &run.test));
    if (run.name.rfind("student_", 0) == 0)
      write_file_atomic(dir / "trajectories" / (run.name + ".csv"), trajectory_csv(run.result));
  }
  write_file_atomic(dir / "metrics.csv", combined_metrics_csv(r));
  std::vector<std::pair<std::string, MetricsReport>> rows;
  for (const auto& run : r.runs) rows.emplace_back(run.name, run.test);
  const auto rendered = render_report(rows, domain_names(r.data.test.num_domains));
  write_file_atomic(dir / "summary.md", "# Test-set results\n\n" + rendered.markdown);
  write_file_atomic(dir / "summary.csv", rendered.csv);
  write_file_atomic(dir / "run.log", log_text);
}

}  // namespace dtdbd
