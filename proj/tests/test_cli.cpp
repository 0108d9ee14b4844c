#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "modgen/checkpoint.hpp"
#include "modgen/config.hpp"
#include "modgen/dataset.hpp"
#include "modgen/sweep.hpp"
#include "scratch.hpp"

namespace modgen {
namespace {

namespace fs = std::filesystem;
using testing::ScratchDir;
using testing::slurp;

const fs::path kTiny = fs::path(MODGEN_TEST_DATA_DIR) / "tiny.cfg";

struct CliResult {
  int code = -1;
  std::string out, err;
};

// Runs the CLI with stdout and stderr captured to files in `dir`.
CliResult cli(const fs::path& dir, const std::string& args) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("'") + MODGEN_CLI_PATH + "' " + args + " >'" + out.string() + "' 2>'" +
                          err.string() + "'";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string tiny() { return "--config '" + kTiny.string() + "'"; }

// One-line, machine-parseable reason on stderr.
void expect_reason(const CliResult& r, const std::string& kind) {
  EXPECT_EQ(r.err.rfind("modgen: error[" + kind + "]: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new ScratchDir("cli");
    const CliResult r = cli(dir_->path(), "make-toy " + tiny() + " --out '" + toy().string() + "'");
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path toy() { return dir_->path() / "toy"; }
  static fs::path out(const std::string& name) { return dir_->path() / name; }
  static std::string root() { return "--root '" + toy().string() + "'"; }
  static std::string to(const std::string& name) { return "--out '" + out(name).string() + "'"; }

  static ScratchDir* dir_;
};

ScratchDir* Cli::dir_ = nullptr;

TEST_F(Cli, MakeToyThenExtractPassesValidation) {
  EXPECT_EQ(scan_dataset(toy()).items.size(), 18u);
  const CliResult r = cli(dir_->path(), "extract " + tiny() + " " + root());
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(scan_dataset(toy()).items.size(), 18u);
}

TEST_F(Cli, HelpListsEveryConfigKey) {
  const CliResult r = cli(dir_->path(), "--help");
  EXPECT_EQ(r.code, 0);
  for (const auto& k : config_keys()) EXPECT_NE(r.out.find("  " + k.name + " = "), std::string::npos) << k.name;
}

TEST_F(Cli, OverrideIsRecordedAndRunDirectoryIsComplete) {
  const CliResult r = cli(dir_->path(), "train " + tiny() + " --set lambda_d=0 " + root() + " " + to("train"));
  ASSERT_EQ(r.code, 0) << r.err;
  const Json m = read_json(out("train") / "manifest.json");
  EXPECT_EQ(m.at("config").at("lambda_d").get<std::string>(), "0");
  EXPECT_EQ(m.at("extra").at("epochs_done").get<int>(), 2);
  EXPECT_NE(slurp(out("train") / "config.txt").find("lambda_d = 0\n"), std::string::npos);
  for (const char* f : {"metrics.csv", "epoch_summary.csv", "checkpoints/epoch_002/state.json", "dg/manifest.json",
                        "ac/manifest.json", "dc/manifest.json"})
    EXPECT_TRUE(fs::exists(out("train") / f)) << f;
  EXPECT_EQ(read_csv_rows(out("train") / "metrics.csv").size(), 4u);
  EXPECT_NE(r.out.find("balanced accuracy"), std::string::npos);
}

TEST_F(Cli, RerunFromTheRecordedConfigIsByteIdentical) {
  ASSERT_EQ(cli(dir_->path(), "train " + tiny() + " " + root() + " " + to("first")).code, 0);
  const std::string cfg = (out("first") / "config.txt").string();
  ASSERT_EQ(cli(dir_->path(), "train --config '" + cfg + "' " + root() + " " + to("again")).code, 0);
  EXPECT_EQ(slurp(out("first") / "metrics.csv"), slurp(out("again") / "metrics.csv"));
  EXPECT_EQ(slurp(out("first") / "dg" / "params.bin"), slurp(out("again") / "dg" / "params.bin"));
}

TEST_F(Cli, EvalAndDumpEmbeddings) {
  ASSERT_EQ(cli(dir_->path(), "train " + tiny() + " " + root() + " " + to("for_eval")).code, 0);
  const CliResult e = cli(dir_->path(), "eval " + tiny() + " " + root() + " --ac '" + (out("for_eval") / "ac").string() +
                                      "' " + to("eval"));
  ASSERT_EQ(e.code, 0) << e.err;
  const Json j = read_json(out("eval") / "eval.json");
  EXPECT_EQ(j.at("n_samples").get<int>(), 9);
  EXPECT_EQ(j.at("domain").get<std::string>(), "real");

  const CliResult d = cli(dir_->path(), "dump-embeddings " + tiny() + " " + root() + " --dg '" +
                                      (out("for_eval") / "dg").string() + "' " + to("dump"));
  ASSERT_EQ(d.code, 0) << d.err;
  // 9 synthetic videos x 2 frames x (4 source + 4 novel) labels.
  EXPECT_EQ(read_csv_rows(out("dump") / "embeddings.csv").size(), 144u);
}

TEST_F(Cli, SweepWritesFifteenRowsIndependentOfJobs) {
  const CliResult a = cli(dir_->path(), "sweep " + tiny() + " " + root() + " " + to("sweep1"));
  ASSERT_EQ(a.code, 0) << a.err;
  const auto rows = read_csv_rows(out("sweep1") / "sweep_table.csv");
  ASSERT_EQ(rows.size(), 15u);
  for (const auto& row : rows) EXPECT_EQ(row.at(3), "ok") << row.at(1);
  // The second sweep reuses the first one's domain classifier.
  const CliResult b = cli(dir_->path(), "sweep " + tiny() + " " + root() + " --dc '" + (out("sweep1") / "dc").string() +
                                      "' --jobs 2 " + to("sweep2"));
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(out("sweep1") / "sweep_table.csv"), slurp(out("sweep2") / "sweep_table.csv"));
  EXPECT_EQ(slurp(out("sweep1") / "sweep_runs.csv"), slurp(out("sweep2") / "sweep_runs.csv"));
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  const CliResult unknown = cli(dir_->path(), "train " + tiny() + " --set lamda_d=1 " + root() + " " + to("bad1"));
  EXPECT_EQ(unknown.code, 2);
  expect_reason(unknown, "config");
  EXPECT_NE(unknown.err.find("lamda_d"), std::string::npos);
  EXPECT_EQ(cli(dir_->path(), "frobnicate").code, 2);
  EXPECT_EQ(cli(dir_->path(), "train " + tiny() + " --set alpha=3 " + root() + " " + to("bad2")).code, 2);
  // A combo the classifier was not trained for.
  ASSERT_EQ(cli(dir_->path(), "pretrain-ac " + tiny() + " " + root() + " " + to("ac_all")).code, 0);
  const CliResult combo = cli(dir_->path(), "eval " + tiny() + " --set combo=rgb " + root() + " --ac '" +
                                          (out("ac_all") / "ac").string() + "' " + to("bad3"));
  EXPECT_EQ(combo.code, 2);
  expect_reason(combo, "config");
}

TEST_F(Cli, DataErrorsExitThree) {
  const CliResult missing = cli(dir_->path(), "pretrain-dc " + tiny() + " --root '" + out("nowhere").string() + "' " +
                                            to("bad4"));
  EXPECT_EQ(missing.code, 3);
  expect_reason(missing, "data");
  const CliResult resume = cli(dir_->path(), "train " + tiny() + " --resume " + root() + " " + to("never_trained"));
  EXPECT_EQ(resume.code, 3);
  expect_reason(resume, "data");
}

TEST_F(Cli, NonFiniteDomainClassifierExitsFour) {
  ASSERT_EQ(cli(dir_->path(), "pretrain-dc " + tiny() + " " + root() + " " + to("dc")).code, 0);
  CheckpointInfo info;
  DC dc = load_checkpoint<DC>(out("dc") / "dc", &info);
  dc.params().var(0).mutable_value()[0] = std::numeric_limits<float>::quiet_NaN();
  save_checkpoint(out("nan_dc"), dc, info);
  const CliResult r = cli(dir_->path(), "train " + tiny() + " " + root() + " --dc '" + out("nan_dc").string() + "' " +
                                      to("nan_run"));
  EXPECT_EQ(r.code, 4);
  expect_reason(r, "numerical");
  EXPECT_TRUE(fs::exists(out("nan_run") / "nan_dump.json"));
}

TEST(ShippedConfigs, ResolveCleanly) {
  for (const char* name : {"toy.cfg", "joint.cfg", "sweep.cfg"}) {
    const TrainConfig c = resolve_config(read_config_file(fs::path(MODGEN_CONFIG_DIR) / name));
    EXPECT_TRUE(c.desk_scale) << name;
    EXPECT_EQ(c.frame_size, 32) << name;
  }
  EXPECT_EQ(resolve_config(read_config_file(fs::path(MODGEN_CONFIG_DIR) / "sweep.cfg")).sweep_seeds.size(), 5u);
}

}  // namespace
}  // namespace modgen
