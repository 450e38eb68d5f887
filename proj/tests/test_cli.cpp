#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <sys/wait.h>

namespace {

namespace fs = std::filesystem;

struct CliRun {
  int status = -1;
  std::string output;
};

CliRun ltg(const std::string& args) {
  const std::string cmd = std::string(LTG_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) r.output += buf;
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ltg_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kSmallWorld = "--set n_train=40 --set n_test=12";

TEST(Cli, GenDataIsByteIdentical) {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  ASSERT_EQ(ltg("gen-data --seed 7 --out " + a.string() + " " + kSmallWorld).status, 0);
  ASSERT_EQ(ltg("gen-data --seed 7 --out " + b.string() + " " + kSmallWorld).status, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  }
  EXPECT_GE(files, 2u);
}

TEST(Cli, EvalOnMissingFileNamesThePath) {
  const auto d = scratch("missing");
  ASSERT_EQ(ltg("gen-data --seed 1 --out " + d.string() + " " + kSmallWorld).status, 0);
  const std::string missing = (d / "nope.jsonl").string();
  const CliRun r = ltg("eval --data " + d.string() + " --predictions " + missing);
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find(missing), std::string::npos) << r.output;
}

TEST(Cli, UnknownConfigKeyFails) {
  const CliRun r = ltg("gen-data --seed 1 --out " + scratch("badkey").string() + " --set n_trian=3");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("n_trian"), std::string::npos) << r.output;
}

TEST(Cli, GradcheckPasses) {
  const CliRun r = ltg("gradcheck --coords 100");
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("max relative error"), std::string::npos) << r.output;
}

std::string pipeline(const fs::path& root) {
  const std::string d = (root / "data").string(), m = (root / "model").string();
  const std::string small = " --set alm_train.epochs=1 --set agm_train.epochs=1";
  if (ltg("gen-data --seed 3 --out " + d + " " + kSmallWorld).status != 0) return "gen-data failed";
  if (ltg("train-alm --data " + d + " --out " + m + small + " --seed 2").status != 0) return "train-alm failed";
  if (ltg("train-agm --data " + d + " --alm " + m + "/alm.ckpt --out " + m + small + " --seed 2").status != 0)
    return "train-agm failed";
  if (ltg("predict --data " + d + " --alm " + m + "/alm.ckpt --agm " + m + "/agm.ckpt --out " + m + "/pred.jsonl")
          .status != 0)
    return "predict failed";
  if (ltg("eval --data " + d + " --predictions " + m + "/pred.jsonl --out " + m).status != 0) return "eval failed";
  return slurp(m + "/alm_log.jsonl") + slurp(m + "/agm_log.jsonl") + slurp(m + "/pred.jsonl") +
         slurp(m + "/report.json");
}

TEST(Cli, PipelineRerunIsBitIdentical) {
  const std::string a = pipeline(scratch("pipe_a")), b = pipeline(scratch("pipe_b"));
  ASSERT_GT(a.size(), 100u) << a;
  EXPECT_EQ(a, b);
}

TEST(Cli, OutputRootFromEnvironment) {
  const auto root = scratch("root");
  ::setenv("LTG_OUTPUT_ROOT", root.c_str(), 1);
  const CliRun r = ltg("gen-data --seed 2 --out rel " + kSmallWorld);
  ::unsetenv("LTG_OUTPUT_ROOT");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_TRUE(fs::exists(root / "rel"));
}

}  // namespace
