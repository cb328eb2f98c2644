// Runs the posedist binary end to end on a tiny configuration.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const char* const kTinyConfig = R"(seed = 0
train_count = 120
test_count = 40
multiview_count = 4
encoder_width = 32
encoder_blocks = 1
context_dim = 8
head_hidden = 16
disc_hidden = 16
flow_blocks = 2
coupling_hidden = 16
epochs = 2
batch = 32
data_init = true
init_rows = 64
fit_max_iters = 20
fit_limit = 5
gmm_components = 2
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("posedist_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(POSEDIST_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "run.cfg";
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Cli, UsageExitCodes) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("train --help"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("--no-such-flag gradcheck"), 2);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("eval-min-n --subset bogus"), 2);
}

TEST(Cli, ConfigAndDataErrors) {
  const fs::path dir = scratch("errors");
  EXPECT_EQ(run("-c " + write_config(dir, "epochs = three\n").string() + " -o " + dir.string() + " gen-data"), 3);
  EXPECT_EQ(run("-c " + write_config(dir, "unknown_key = 1\n").string() + " -o " + dir.string() + " gen-data"), 3);
  EXPECT_EQ(run("-o " + dir.string() + " eval-mode"), 4);
  std::ofstream(dir / "broken.jsonl") << "{\"not\": \"a dataset\"}\n";
  EXPECT_EQ(run("-o " + dir.string() + " train --train-data " + (dir / "broken.jsonl").string()), 4);
}

TEST(Cli, GradcheckWritesCsv) {
  const fs::path dir = scratch("gradcheck");
  ASSERT_EQ(run("-o " + dir.string() + " gradcheck"), 0);
  const std::string csv = slurp(dir / "gradcheck.csv");
  EXPECT_EQ(csv.rfind("name,", 0), 0u);
  EXPECT_EQ(csv.find(",false"), std::string::npos);
}

TEST(Cli, PipelineIsDeterministic) {
  std::string outputs[2];
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = scratch("pipeline" + std::to_string(rep));
    const std::string base = "-c " + write_config(dir, kTinyConfig).string() + " -o " + dir.string() + " ";
    ASSERT_EQ(run(base + "gen-data"), 0);
    for (const char* f : {"train.jsonl", "test.jsonl", "multiview.jsonl"}) ASSERT_TRUE(fs::exists(dir / f)) << f;
    ASSERT_EQ(run(base + "train"), 0);
    ASSERT_TRUE(fs::exists(dir / "model.ckpt"));
    ASSERT_TRUE(fs::exists(dir / "model_last.ckpt"));
    ASSERT_EQ(run(base + "eval-mode"), 0);
    ASSERT_EQ(run(base + "eval-min-n --n 1,2,4"), 0);
    ASSERT_EQ(run(base + "fit"), 0);
    ASSERT_EQ(run(base + "fuse"), 0);
    ASSERT_EQ(run(base + "sample --index 3 --count 4"), 0);
    for (const char* f : {"metrics.csv", "eval_mode.csv", "min_of_n.csv", "fit.csv", "samples.csv"}) {
      const std::string text = slurp(dir / f);
      EXPECT_FALSE(text.empty()) << f;
      outputs[rep] += text;
    }
    EXPECT_EQ(slurp(dir / "eval_mode_summary.csv").rfind("method,", 0), 0u);
  }
  EXPECT_EQ(outputs[0], outputs[1]);
}

TEST(Cli, SeedOverrideChangesData) {
  const fs::path a = scratch("seed_a"), b = scratch("seed_b");
  ASSERT_EQ(run("-c " + write_config(a, kTinyConfig).string() + " -o " + a.string() + " gen-data --split test"), 0);
  ASSERT_EQ(run("-c " + write_config(b, kTinyConfig).string() + " -s 5 -o " + b.string() + " gen-data --split test"), 0);
  EXPECT_NE(slurp(a / "test.jsonl"), slurp(b / "test.jsonl"));
  EXPECT_FALSE(fs::exists(a / "train.jsonl"));
}
