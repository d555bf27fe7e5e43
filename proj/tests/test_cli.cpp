#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "dtdbd/cli.hpp"
#include "oracle_models.hpp"

using namespace dtdbd;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dtdbd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("dtdbd_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// Small enough that a whole experiment trains in a few seconds.
const char* kTinyExperiment = R"(
[experiment]
seed = 3
student_modes = ["dtdbd", "add_only"]

[data]
n = 300

[encoder]
kernel_widths = [1, 2]
channels = 4

[baseline]
epochs = 2
learning_rate = 1e-3

[teacher]
epochs = 2
learning_rate = 1e-3

[student]
epochs = 3
learning_rate = 1e-3
)";

}  // namespace

// ---- config ----

TEST(Config, SectionsCommentsAndTypes) {
  auto doc = ConfigDoc::parse_string(
      "# top\n[distill]\ntau = 2.5  # trailing\nkl_direction = \"teacher_as_target\"\n"
      "[encoder]\nkernel_widths = [1, 3]\n[daa]\nsign_flip = true\n");
  EXPECT_DOUBLE_EQ(doc.real("distill.tau", 0), 2.5);
  EXPECT_EQ(doc.str("distill.kl_direction", ""), "teacher_as_target");
  EXPECT_EQ(doc.integers("encoder.kernel_widths", {}), (std::vector<std::size_t>{1, 3}));
  EXPECT_TRUE(doc.boolean("daa.sign_flip", false));
  EXPECT_EQ(doc.integer("missing.key", 7u), 7u);
}

TEST(Config, HashInsideQuotesIsKept) {
  auto doc = ConfigDoc::parse_string("[data]\npath = \"a#b.jsonl\"\n");
  EXPECT_EQ(doc.str("data.path", ""), "a#b.jsonl");
}

TEST(Config, ParseErrorsNameTheLine) {
  for (const auto& [text, line] : std::vector<std::pair<std::string, std::size_t>>{
           {"[a]\nx = 1\n[b\n", 3}, {"[a]\n= 1\n", 2}, {"[a]\nx =\n", 2}, {"[a]\nx = 1\nx = 2\n", 3},
           {"novalue\n", 1}}) {
    try {
      ConfigDoc::parse_string(text);
      FAIL() << "accepted: " << text;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), line) << text;
    }
  }
}

TEST(Config, TypeErrors) {
  auto doc = ConfigDoc::parse_string("[a]\nx = abc\ny = -3\nz = yes\nw = 1, 2\n");
  EXPECT_THROW(doc.real("a.x", 0), ConfigError);
  EXPECT_THROW(doc.integer("a.y", 0), ConfigError);
  EXPECT_THROW(doc.boolean("a.z", false), ConfigError);
  EXPECT_THROW(doc.integers("a.w", {}), ConfigError);
}

TEST(Config, OverridesReplaceValues) {
  auto doc = ConfigDoc::parse_string("[distill]\ntau = 4\n");
  doc.set("distill.tau=1.5");
  doc.set("daa.momentum = 0.5");
  EXPECT_DOUBLE_EQ(doc.real("distill.tau", 0), 1.5);
  EXPECT_DOUBLE_EQ(doc.real("daa.momentum", 0), 0.5);
  EXPECT_THROW(doc.set("no_equals"), ConfigError);
}

TEST(Config, ExperimentRejectsUnknownKeys) {
  EXPECT_THROW(experiment_from_config(ConfigDoc::parse_string("[distill]\ntemperature = 2\n")), ConfigError);
}

TEST(Config, ExperimentFieldsAndSeedFallback) {
  auto doc = ConfigDoc::parse_string(
      "[distill]\ntau = 2\nalpha = 0.5\n[daa]\nmomentum = 0.8\n[student]\nepochs = 7\n"
      "[experiment]\nstudent_modes = [\"add_only\", \"dnd_only\"]\n");
  const auto c = experiment_from_config(doc, 42);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.data.synthetic.seed, 42u);
  EXPECT_EQ(c.student.seed, 42u);
  EXPECT_DOUBLE_EQ(c.distill.tau, 2.0);
  EXPECT_DOUBLE_EQ(c.distill.beta(), 0.1);
  EXPECT_DOUBLE_EQ(c.daa.momentum, 0.8);
  EXPECT_EQ(c.student.epochs, 7u);
  EXPECT_EQ(c.student_modes, (std::vector<TrainMode>{TrainMode::add_only, TrainMode::dnd_only}));

  doc.set("experiment.seed=9");
  EXPECT_EQ(experiment_from_config(doc, 42).seed, 9u);
  doc.set("experiment.student_modes=[\"dat\"]");
  EXPECT_THROW(experiment_from_config(doc), ConfigError);
}

// ---- checkpoint and report files ----

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir;
  EncoderConfig c;
  c.kernel_widths = {1, 2};
  c.channels_per_kernel = 3;
  c.domain_embedding = 5;
  const auto p = init_params(c, 4, 17);
  save_checkpoint(p, dir / "m.json");
  const auto q = load_checkpoint(dir / "m.json");
  EXPECT_EQ(q.num_domains, 4u);
  EXPECT_EQ(q.config.domain_embedding, 5u);
  ASSERT_EQ(q.tensors.size(), p.tensors.size());
  for (const auto& [name, t] : p.tensors) EXPECT_EQ(q.tensors.at(name).values(), t.values()) << name;
}

TEST(Checkpoint, ShapeMismatchRejected) {
  auto j = checkpoint_to_json(dtdbd::testing::label_oracle_model(2));
  j["params"][param_names::label_bias]["shape"] = Shape{3};
  EXPECT_THROW(checkpoint_from_json(j), ParseError);
  j.erase("params");
  EXPECT_THROW(checkpoint_from_json(j), ParseError);
}

TEST(Report, JsonRoundTrip) {
  const auto ds = dtdbd::testing::two_domain_toy();
  const auto r = evaluate(dtdbd::testing::domain_split_model(), ds);
  const auto back = report_from_json(report_to_json(r));
  EXPECT_EQ(back.fned, r.fned);
  EXPECT_EQ(back.fped, r.fped);
  EXPECT_EQ(back.per_domain.size(), 2u);
  EXPECT_EQ(back.per_domain[1].fnr, r.per_domain[1].fnr);
}

TEST(Report, PerfectRunRendersOnes) {
  const auto r = evaluate(dtdbd::testing::label_oracle_model(3), dtdbd::testing::leaked_label_dataset(3, 4));
  const auto out = render_report({std::pair<std::string, MetricsReport>{"oracle", r}});
  EXPECT_NE(out.markdown.find("| oracle | 1.0000 | 1.0000 | 1.0000 | 1.0000 | 0.0000 | 0.0000 | 0.0000 |"),
            std::string::npos)
      << out.markdown;
  EXPECT_NE(out.csv.find("oracle,1.0000,1.0000,1.0000,1.0000,0.0000,0.0000,0.0000"), std::string::npos) << out.csv;
}

TEST(Report, TwoRunsShareHeaderAndTotalIsSum) {
  const auto ds = dtdbd::testing::two_domain_toy();
  const auto a = evaluate(dtdbd::testing::domain_split_model(), ds);
  auto b = a;
  b.fned = 0.25;
  b.fped = 0.5;
  b.total = 99.0;  // ignored: the table recomputes it
  const auto out = render_report({{std::string("a"), a}, {std::string("b"), b}}, {"x", "y"});
  std::istringstream lines(out.csv);
  std::string header, row_a, row_b;
  std::getline(lines, header);
  std::getline(lines, row_a);
  std::getline(lines, row_b);
  EXPECT_EQ(header, "Run,x,y,F1,FNED,FPED,Total");
  EXPECT_EQ(row_b.substr(row_b.rfind(',') + 1), "0.7500");
  EXPECT_EQ(row_a.substr(row_a.rfind(',') + 1), "2.0000");
}

TEST(Report, DomainCountMismatch) {
  const auto a = evaluate(dtdbd::testing::domain_split_model(), dtdbd::testing::two_domain_toy());
  const auto b = evaluate(dtdbd::testing::label_oracle_model(3), dtdbd::testing::leaked_label_dataset(3, 2));
  EXPECT_THROW(render_report({{std::string("a"), a}, {std::string("b"), b}}), InputError);
}

// ---- command line ----

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"no-such-command"}).code, 2);
  EXPECT_EQ(cli({"gen-data", "--out", "x.jsonl", "--bogus"}).code, 2);
  EXPECT_EQ(cli({"gen-data"}).code, 2);
  EXPECT_EQ(cli({"gen-data", "--spec", "other", "--out", "x.jsonl"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, GenDataWritesNineDomainHeader) {
  TempDir dir;
  const auto r = cli({"gen-data", "--spec", "table1", "--n", "900", "--seed", "7", "--out", dir / "d.jsonl"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto header = nlohmann::json::parse(read_file(dir / "d.jsonl").substr(0, read_file(dir / "d.jsonl").find('\n')));
  EXPECT_EQ(header.at("num_domains"), 9);
  const auto ds = load_dataset(dir / "d.jsonl");
  EXPECT_EQ(ds.size(), 900u);
  auto spec = SyntheticSpec::table1(900, 7);
  EXPECT_EQ(ds, generate_synthetic(spec));
}

TEST(Cli, SeedFallsBackToEnvironment) {
  TempDir dir;
  ::setenv("DTDBD_SEED", "21", 1);
  const auto r = cli({"gen-data", "--n", "100", "--out", dir / "d.jsonl"});
  ::unsetenv("DTDBD_SEED");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_dataset(dir / "d.jsonl"), generate_synthetic(SyntheticSpec::table1(100, 21)));

  ::setenv("DTDBD_SEED", "not-a-number", 1);
  EXPECT_EQ(cli({"gen-data", "--n", "100", "--out", dir / "e.jsonl"}).code, 1);
  ::unsetenv("DTDBD_SEED");
}

TEST(Cli, DomainErrorsExitOne) {
  TempDir dir;
  EXPECT_EQ(cli({"gen-data", "--n", "20", "--out", dir / "d.jsonl"}).code, 1);  // too small for 9 domains
  EXPECT_EQ(cli({"gen-data", "--n", "100", "--set", "distill.nonsense=1", "--out", dir / "d.jsonl"}).code, 1);
  write_file_atomic(dir / "bad.json", "{not json");
  write_file_atomic(dir / "d.jsonl", dataset_to_jsonl(dtdbd::testing::leaked_label_dataset(2, 3)));
  EXPECT_EQ(cli({"evaluate", "--model", dir / "bad.json", "--data", dir / "d.jsonl"}).code, 1);
}

TEST(Cli, EvaluateOracleCheckpointIsUnbiased) {
  TempDir dir;
  save_checkpoint(dtdbd::testing::label_oracle_model(3), dir / "oracle.json");
  save_dataset(dtdbd::testing::leaked_label_dataset(3, 5), dir / "test.jsonl");
  const auto r = cli({"evaluate", "--model", dir / "oracle.json", "--data", dir / "test.jsonl", "--out",
                      dir / "report.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_file(dir / "report.json"));
  EXPECT_EQ(j.at("fned").get<double>(), 0.0);
  EXPECT_EQ(j.at("fped").get<double>(), 0.0);
  EXPECT_EQ(j.at("overall_f1").get<double>(), 1.0);
}

TEST(Cli, ReportSubcommand) {
  TempDir dir;
  const auto rep = evaluate(dtdbd::testing::domain_split_model(), dtdbd::testing::two_domain_toy());
  write_file_atomic(dir / "a.json", report_to_json(rep).dump());
  const auto r = cli({"report", "base=" + (dir / "a.json"), dir / "a.json", "--csv", dir / "t.csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("| base |"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("| a |"), std::string::npos) << r.out;
  EXPECT_EQ(read_file(dir / "t.csv").substr(0, 4), "Run,");
}

TEST(Cli, TrainingSubcommandsChain) {
  TempDir dir;
  write_file_atomic(dir / "exp.toml", kTinyExperiment);
  const auto sp = split(generate_synthetic(SyntheticSpec::table1(300, 4)), 0.8, 0.1, 0.1, 4);
  save_dataset(sp.train, dir / "train.jsonl");
  save_dataset(sp.val, dir / "val.jsonl");
  const std::vector<std::string> common{"--config", dir / "exp.toml", "--train", dir / "train.jsonl", "--val",
                                        dir / "val.jsonl"};
  auto with = [&](std::vector<std::string> head, std::vector<std::string> tail) {
    head.insert(head.end(), common.begin(), common.end());
    head.insert(head.end(), tail.begin(), tail.end());
    return cli(head);
  };
  auto r = with({"train-teacher-unbiased"}, {"--out", dir / "u.json", "--metrics", dir / "u.csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  r = with({"train-teacher-clean"}, {"--out", dir / "c.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GT(load_checkpoint(dir / "c.json").config.domain_embedding, 0u);
  r = with({"train-student"}, {"--unbiased", dir / "u.json", "--clean", dir / "c.json", "--out", dir / "s.json",
                               "--trajectory", dir / "traj.csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "s.json"));
  EXPECT_TRUE(fs::exists(dir / "traj.csv"));

  // A student whose encoder differs from the unbiased teacher's is refused.
  r = with({"train-student"}, {"--unbiased", dir / "u.json", "--clean", dir / "c.json", "--out", dir / "s2.json",
                               "--set", "encoder.channels=5"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("encoder"), std::string::npos) << r.err;
}

TEST(Cli, ExperimentWritesArtifactsDeterministically) {
  TempDir dir;
  write_file_atomic(dir / "exp.toml", kTinyExperiment);
  auto r = cli({"experiment", "--config", dir / "exp.toml", "--out", dir / "run1"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"metrics.csv", "summary.md", "summary.csv", "run.log", "checkpoints/unbiased_teacher.json",
                        "checkpoints/clean_teacher.json", "checkpoints/student_dtdbd.json",
                        "checkpoints/student_add_only.json", "reports/student_dtdbd.json",
                        "trajectories/student_dtdbd.csv", "metrics/ce_baseline.csv"})
    EXPECT_TRUE(fs::exists(dir.path() / "run1" / f)) << f;
  EXPECT_NE(read_file(dir / "run1/summary.md").find("| student_dtdbd |"), std::string::npos);

  // Non-empty output directory needs --force.
  EXPECT_EQ(cli({"experiment", "--config", dir / "exp.toml", "--out", dir / "run1"}).code, 1);

  r = cli({"experiment", "--config", dir / "exp.toml", "--out", dir / "run2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(dir / "run1/metrics.csv"), read_file(dir / "run2/metrics.csv"));
  EXPECT_EQ(read_file(dir / "run1/summary.md"), read_file(dir / "run2/summary.md"));

  r = cli({"experiment", "--config", dir / "exp.toml", "--out", dir / "run2", "--force", "--seed", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(read_file(dir / "run1/metrics.csv"), read_file(dir / "run2/metrics.csv"));
}
