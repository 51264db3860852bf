#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sys/wait.h>

#include "support/tempdir.hpp"

using ccg::testing::TempDir;

namespace {

struct CliRun {
  int code = -1;
  std::string output;  // stdout and stderr
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(CCG_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::vector<std::string> lines(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

// Small and fast; the contract does not depend on model size.
const char* kSmall = "--set tiny_channels=4,8,8,8 --set hidden_width=8 --set epochs=1";

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("ccg_cli");
    const CliRun r = run("synth --seed 7 --n-train 12 --n-test 6 --out " + (dir_->path() / "data").string());
    ASSERT_EQ(r.code, 0) << r.output;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string data() { return (dir_->path() / "data").string(); }
  static std::filesystem::path path(const std::string& name) { return dir_->path() / name; }

  static TempDir* dir_;
};

TempDir* CliPipeline::dir_ = nullptr;

}  // namespace

TEST(Cli, UnknownFlagOrSubcommandExitsTwoWithUsage) {
  CliRun r = run("train --bogus 1 --data-dir x --out y");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("Usage"), std::string::npos) << r.output;
  r = run("frobnicate");
  EXPECT_EQ(r.code, 2);
  r = run("");
  EXPECT_EQ(r.code, 2);
  r = run("eval --data-dir x --out y");  // --checkpoint is required
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, RuntimeErrorsExitOne) {
  TempDir dir("ccg_cli_err");
  EXPECT_EQ(run("train --data-dir " + (dir / "nothing").string() + " --out " + (dir / "o").string()).code, 1);
  EXPECT_EQ(run("train --set no_such_key=1 --data-dir x --out y").code, 1);
}

TEST_F(CliPipeline, SynthWritesBothSplits) {
  EXPECT_EQ(lines(path("data/train/Data_Entry.csv")).size(), 13u);
  EXPECT_EQ(lines(path("data/test/Data_Entry.csv")).size(), 7u);
}

TEST_F(CliPipeline, TrainEvalViz) {
  const std::string out = path("run").string();
  CliRun r = run("train --data-dir " + data() + " --out " + out + " --seed 3 " + kSmall);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(lines(path("run/train_log.jsonl")).size(), 6u);
  ASSERT_TRUE(std::filesystem::exists(path("run/last.ckpt")));
  EXPECT_TRUE(std::filesystem::exists(path("run/config.txt")));

  r = run("eval --checkpoint " + path("run/last.ckpt").string() + " --data-dir " + data() + " --out " +
          path("eval").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto csv = lines(path("eval/accuracy.csv"));
  ASSERT_FALSE(csv.empty());
  EXPECT_EQ(csv[0], "T,class,accuracy,n");
  for (const char* t : {"0.1,", "0.3,", "0.5,", "0.7,"}) {
    EXPECT_TRUE(std::any_of(csv.begin(), csv.end(), [&](const std::string& l) { return l.rfind(std::string(t) + "mean,", 0) == 0; }))
        << t;
  }
  EXPECT_TRUE(std::filesystem::exists(path("eval/accuracy.txt")));

  r = run("viz --limit 3 --checkpoint " + path("run/last.ckpt").string() + " --data-dir " + data() + " --out " +
          path("viz").string());
  ASSERT_EQ(r.code, 0) << r.output;
  int pngs = 0;
  for (const auto& e : std::filesystem::directory_iterator(path("viz"))) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, 3);
}

TEST_F(CliPipeline, BaselineAblationLogsOnlyBaseLoss) {
  const CliRun r = run("train --ablation baseline --data-dir " + data() + " --out " + path("base").string() + " " + kSmall);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto log = lines(path("base/train_log.jsonl"));
  ASSERT_FALSE(log.empty());
  for (const auto& line : log) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_GT(j.at("l_base").get<double>(), 0.0);
    EXPECT_EQ(j.at("l_ir").get<double>(), 0.0);
    EXPECT_EQ(j.at("l_ik").get<double>(), 0.0);
    EXPECT_EQ(j.at("l_kr").get<double>(), 0.0);
  }
}

TEST_F(CliPipeline, ConfigFileAndResume) {
  {
    std::ofstream(path("small.cfg")) << "# test settings\ntiny_channels = 4,8,8,8\nhidden_width = 8\nepochs = 2\n";
  }
  const std::string common = "--config " + path("small.cfg").string() + " --data-dir " + data();
  CliRun r = run("train " + common + " --out " + path("cfg").string() + " --max-steps 6");
  ASSERT_EQ(r.code, 0) << r.output;
  r = run("train " + common + " --out " + path("cfg").string() + " --resume " + path("cfg/epoch_1.ckpt").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(lines(path("cfg/train_log.jsonl")).size(), 12u);
}
