#pragma once

// Command-line front end. Exit status: 0 success, 1 domain error, 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dtdbd/checkpoint.hpp"
#include "dtdbd/config.hpp"
#include "dtdbd/data.hpp"
#include "dtdbd/experiment.hpp"
#include "dtdbd/io.hpp"
#include "dtdbd/report.hpp"
#include "dtdbd/training.hpp"

namespace dtdbd {

namespace cli_detail {

/// DTDBD_SEED when set and numeric, else 0.
inline std::uint64_t env_seed() {
  const char* v = std::getenv("DTDBD_SEED");
  if (!v || !*v) return 0;
  const std::string s(v);
  if (s.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("DTDBD_SEED must be a non-negative integer, got '" + s + "'");
  return std::stoull(s);
}

/// Options shared by every subcommand that reads the experiment config.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "Config file (TOML-style sections)")->check(CLI::ExistingFile);
    app.add_option("--set", overrides, "Override a config value, e.g. --set distill.tau=2");
    app.add_option("--seed", seed, "Global seed (falls back to DTDBD_SEED, then 0)");
  }

  ConfigDoc doc() const {
    ConfigDoc d = config_path.empty() ? ConfigDoc{} : ConfigDoc::load(config_path);
    for (const auto& o : overrides) d.set(o);
    if (seed) d.set("experiment.seed=" + std::to_string(*seed));
    return d;
  }

  ExperimentConfig experiment() const { return experiment_from_config(doc(), env_seed()); }
};

/// Flat-input encoders take their width from the data unless it was configured.
inline EncoderConfig fit_encoder(EncoderConfig enc, const ConfigDoc& doc, const Dataset& ds) {
  if (enc.kind == EncoderKind::mlp && !doc.has("encoder.embed_dim")) enc.embed_dim = ds.feature_size();
  return enc;
}

inline void write_optional(const std::string& path, const std::string& content) {
  if (!path.empty()) write_file_atomic(path, content);
}

inline std::string report_name(const std::string& arg, std::string& path) {
  const auto eq = arg.find('=');
  if (eq != std::string::npos) {
    path = arg.substr(eq + 1);
    return arg.substr(0, eq);
  }
  path = arg;
  return std::filesystem::path(arg).stem().string();
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  using cli_detail::ConfigArgs;
  CLI::App app{"Dual-teacher de-biasing distillation for multi-domain fake news detection"};
  app.name("dtdbd");
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-domain dataset");
  ConfigArgs gen_cfg;
  gen_cfg.attach(*gen);
  std::string gen_spec = "table1", gen_out;
  std::optional<std::size_t> gen_n;
  gen->add_option("--spec", gen_spec, "Synthetic profile")->check(CLI::IsMember({"table1"}));
  gen->add_option("--n", gen_n, "Number of samples");
  gen->add_option("--out", gen_out, "Output JSONL path")->required();

  // train-teacher-unbiased / train-teacher-clean / train-student
  struct TrainArgs {
    ConfigArgs cfg;
    std::string train, val, out, metrics, trajectory, mode;
  };
  auto add_train = [&](const std::string& name, const std::string& help, TrainArgs& a) {
    auto* sc = app.add_subcommand(name, help);
    a.cfg.attach(*sc);
    sc->add_option("--train", a.train, "Training JSONL")->required()->check(CLI::ExistingFile);
    sc->add_option("--val", a.val, "Validation JSONL")->required()->check(CLI::ExistingFile);
    sc->add_option("--out", a.out, "Checkpoint path")->required();
    sc->add_option("--metrics", a.metrics, "Per-epoch metrics CSV");
    return sc;
  };
  TrainArgs tu, tcl, ts;
  tu.mode = "dat_ie";
  ts.mode = "dtdbd";
  auto* unb = add_train("train-teacher-unbiased", "Train the adversarial (unbiased) teacher", tu);
  unb->add_option("--mode", tu.mode, "dat_ie or dat")->check(CLI::IsMember({"dat_ie", "dat"}));
  auto* cln = add_train("train-teacher-clean", "Train the domain-aware clean teacher", tcl);
  auto* stu = add_train("train-student", "Distill both teachers into the student", ts);
  std::string unbiased_path, clean_path;
  stu->add_option("--unbiased", unbiased_path, "Unbiased teacher checkpoint")->required()->check(CLI::ExistingFile);
  stu->add_option("--clean", clean_path, "Clean teacher checkpoint")->required()->check(CLI::ExistingFile);
  stu->add_option("--mode", ts.mode, "Student variant")
      ->check(CLI::IsMember({"dtdbd", "dtdbd_no_daa", "add_only", "dnd_only", "ce_baseline"}));
  stu->add_option("--trajectory", ts.trajectory, "Per-epoch distillation weights CSV");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  std::string ev_model, ev_data, ev_out;
  ev->add_option("--model", ev_model, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "Report JSON (stdout when omitted)");

  // experiment
  auto* ex = app.add_subcommand("experiment", "Run the full pipeline end to end");
  ConfigArgs ex_cfg;
  ex_cfg.attach(*ex);
  std::string ex_out;
  bool ex_force = false;
  ex->add_option("--out", ex_out, "Output directory (overrides experiment.out)");
  ex->add_flag("--force", ex_force, "Allow a non-empty output directory");

  // report
  auto* rep = app.add_subcommand("report", "Render report JSONs as a Markdown and CSV table");
  std::vector<std::string> rep_inputs;
  std::string rep_md, rep_csv;
  rep->add_option("reports", rep_inputs, "Report files, optionally name=path")->required();
  rep->add_option("--md", rep_md, "Markdown output (stdout when omitted)");
  rep->add_option("--csv", rep_csv, "CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) {
      ConfigDoc doc = gen_cfg.doc();
      if (gen_n) doc.set("data.n=" + std::to_string(*gen_n));
      const auto cfg = experiment_from_config(doc, cli_detail::env_seed());
      const auto ds = generate_synthetic(cfg.data.synthetic);
      save_dataset(ds, gen_out);
      out << "wrote " << ds.size() << " samples in " << ds.num_domains << " domains to " << gen_out << "\n";
      return 0;
    }

    auto load_train = [](const TrainArgs& a, ExperimentConfig& cfg, EncoderConfig& enc) {
      const ConfigDoc doc = a.cfg.doc();
      cfg = experiment_from_config(doc, cli_detail::env_seed());
      auto data = std::make_pair(load_dataset(a.train), load_dataset(a.val));
      enc = cli_detail::fit_encoder(cfg.encoder, doc, data.first);
      return data;
    };
    auto finish = [&](const TrainArgs& a, const TrainResult& r, const Dataset& val) {
      save_checkpoint(r.best, a.out);
      const auto rep = evaluate(r.best, val);
      cli_detail::write_optional(a.metrics, metrics_csv(r, &rep));
      out << "best epoch " << r.best_epoch << " of " << r.history.size() << ": val F1 " << fmt4(rep.overall_f1)
          << ", Total " << fmt4(rep.total) << "\n";
    };

    if (unb->parsed()) {
      ExperimentConfig cfg;
      EncoderConfig enc;
      auto [train, val] = load_train(tu, cfg, enc);
      TrainConfig tc = cfg.teacher;
      tc.mode = train_mode_from_string(tu.mode);
      finish(tu, train_unbiased_teacher(enc, train, val, tc, cfg.distill), val);
      return 0;
    }
    if (cln->parsed()) {
      ExperimentConfig cfg;
      EncoderConfig enc;
      auto [train, val] = load_train(tcl, cfg, enc);
      finish(tcl, train_clean_teacher(enc, train, val, cfg.teacher), val);
      return 0;
    }
    if (stu->parsed()) {
      ExperimentConfig cfg;
      EncoderConfig enc;
      auto [train, val] = load_train(ts, cfg, enc);
      TrainConfig sc = cfg.student;
      sc.mode = train_mode_from_string(ts.mode);
      const auto r = train_student_dtdbd(enc, train, val, load_checkpoint(unbiased_path), load_checkpoint(clean_path),
                                         sc, cfg.distill, cfg.daa);
      finish(ts, r, val);
      cli_detail::write_optional(ts.trajectory, trajectory_csv(r));
      return 0;
    }
    if (ev->parsed()) {
      const auto rep = evaluate(load_checkpoint(ev_model), load_dataset(ev_data));
      const std::string text = report_to_json(rep).dump(2) + "\n";
      if (ev_out.empty())
        out << text;
      else
        write_file_atomic(ev_out, text);
      return 0;
    }
    if (ex->parsed()) {
      auto cfg = ex_cfg.experiment();
      if (!ex_out.empty()) cfg.output_dir = ex_out;
      if (cfg.output_dir.empty()) throw ConfigError("experiment needs --out or experiment.out");
      namespace fs = std::filesystem;
      const fs::path dir = cfg.output_dir;
      if (fs::exists(dir) && !fs::is_empty(dir) && !ex_force)
        throw ConfigError("output directory '" + dir.string() + "' is not empty; pass --force to reuse it");
      std::string log_text;
      auto log = [&](const std::string& m) {
        const std::string line = timestamp() + " " + m;
        log_text += line + "\n";
        err << line << "\n";
      };
      log("seed " + std::to_string(cfg.seed));
      const auto result = run_experiment(cfg, log);
      log("writing " + dir.string());
      write_experiment(result, dir, log_text);
      out << "wrote " << dir.string() << "\n";
      return 0;
    }
    if (rep->parsed()) {
      std::vector<std::pair<std::string, MetricsReport>> runs;
      for (const auto& arg : rep_inputs) {
        std::string path;
        std::string name = cli_detail::report_name(arg, path);
        try {
          runs.emplace_back(name, report_from_json(nlohmann::json::parse(read_file(path))));
        } catch (const nlohmann::json::exception& e) {
          throw InputError("report '" + path + "': " + e.what());
        }
      }
      const auto rendered = render_report(runs, domain_names(runs.front().second.per_domain.size()));
      if (rep_md.empty())
        out << rendered.markdown;
      else
        write_file_atomic(rep_md, rendered.markdown);
      cli_detail::write_optional(rep_csv, rendered.csv);
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dtdbd
