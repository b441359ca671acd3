#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ajepa/cli.hpp"

namespace ajepa {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("ajepa_cli_" + std::string(
        ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string path(const std::string& rel) const { return (root_ / rel).string(); }

  std::string write_small_config() const {
    const std::string p = path("small.txt");
    std::ofstream(p) << "n_mels = 64\n"
                        "target_frames = 64\n"
                        "patch_height = 8\n"
                        "patch_width = 8\n"
                        "patch_len = 64\n"
                        "embed_dim = 16\n"
                        "enc_depth = 1\n"
                        "n_heads = 2\n"
                        "pred_depth = 1\n"
                        "pred_dim = 8\n"
                        "total_steps = 6\n"
                        "warmup_steps = 1\n"
                        "batch_size = 4\n"
                        "ft_epochs = 1\n"
                        "ft_batch_size = 4\n"
                        "probe_epochs = 2\n";
    return p;
  }

  fs::path root_;
};

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  const Result sub_help = run_cli({"pretrain", "--help"});
  EXPECT_EQ(sub_help.code, 0);
  EXPECT_NE(sub_help.out.find("--data"), std::string::npos);
  EXPECT_EQ(run_cli({}).code, 1);
  const Result unknown = run_cli({"frobnicate"});
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.err.find("unknown subcommand"), std::string::npos);
  EXPECT_EQ(run_cli({"pretrain", "--out", path("x")}).code, 1);
  EXPECT_EQ(run_cli({"finetune", "--data", path("d"), "--out", path("x")}).code, 1);
  EXPECT_EQ(run_cli({"probe", "--data", path("d"), "--out", path("x")}).code, 1);
  EXPECT_EQ(run_cli({"probe", "--data", path("d"), "--out", path("x"), "--init", "a", "--random-init"}).code, 1);
  EXPECT_EQ(run_cli({"masks", "--grid", "8by8"}).code, 1);
  EXPECT_EQ(run_cli({"masks", "--mode", "diagonal"}).code, 1);
}

TEST_F(CliTest, RuntimeErrorsExitWithTwo) {
  const Result r = run_cli({"pretrain", "--data", path("missing"), "--out", path("run")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing"), std::string::npos);
  std::ofstream(path("bad.txt")) << "bogus = 1\n";
  EXPECT_EQ(run_cli({"masks", "--config", path("bad.txt"), "--out", path("m.pgm")}).code, 2);
}

TEST_F(CliTest, MasksWritesPlanAndRaster) {
  const Result r = run_cli({"masks", "--grid", "8x8", "--mode", "block", "--seed", "3", "--out", path("m.pgm")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("grid 8x8"), std::string::npos);
  EXPECT_NE(r.out.find("mode block"), std::string::npos);
  EXPECT_NE(r.out.find("target0 "), std::string::npos);
  const std::string pgm = slurp(path("m.pgm"));
  EXPECT_EQ(pgm.rfind("P5\n64 64\n255\n", 0), 0u);
  EXPECT_EQ(run_cli({"masks", "--grid", "8x8", "--mode", "block", "--seed", "3", "--out", path("m.pgm")}).out,
            r.out);
}

TEST_F(CliTest, GenDataAndDumpSpec) {
  Result r = run_cli({"gen-data", "--out", path("data"), "--classes", "2", "--clips-per-class", "2",
                      "--duration", "0.5", "--seed", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("wrote 4 clips"), std::string::npos);
  const std::string wav = path("data/class1/class1_000.wav");
  ASSERT_TRUE(fs::exists(wav));
  r = run_cli({"dump-spec", "--wav", wav, "--out", path("s.pgm")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("s.pgm")).rfind("P5\n128 128\n255\n", 0), 0u);
  r = run_cli({"dump-spec", "--wav", wav, "--out", path("raw.pgm"), "--raw"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("raw.pgm")).rfind("P5\n", 0), 0u);
}

TEST_F(CliTest, PretrainFinetuneProbeEvalPipeline) {
  const std::string cfg = write_small_config();
  ASSERT_EQ(run_cli({"gen-data", "--out", path("data"), "--classes", "2", "--clips-per-class", "5",
                     "--duration", "0.8"}).code,
            0);
  Result r = run_cli({"pretrain", "--data", path("data"), "--config", cfg, "--out", path("run"),
                      "--checkpoint-every", "3", "--log-every", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("run/checkpoint.ajepa")));
  EXPECT_TRUE(fs::exists(path("run/checkpoint_step000003.ajepa")));
  EXPECT_TRUE(fs::exists(path("run/config.txt")));
  const std::string csv = slurp(path("run/pretrain_loss.csv"));
  EXPECT_EQ(csv.rfind("step,loss,f_s,mode_tf_fraction,lr\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);

  // Resuming a finished run leaves its checkpoint unchanged.
  const std::string before = slurp(path("run/checkpoint.ajepa"));
  r = run_cli({"pretrain", "--data", path("data"), "--out", path("run"), "--resume", path("run/checkpoint.ajepa")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("run/checkpoint.ajepa")), before);

  r = run_cli({"finetune", "--data", path("data"), "--init", path("run/checkpoint.ajepa"), "--out", path("ft")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("ft/finetune.ajepa")));
  EXPECT_EQ(slurp(path("ft/finetune_metrics.csv")).rfind("epoch,train_loss,eval_accuracy,eval_map\n", 0), 0u);

  r = run_cli({"probe", "--data", path("data"), "--init", path("run/checkpoint.ajepa"), "--out", path("probe")});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string probe_csv = slurp(path("probe/finetune_metrics.csv"));
  EXPECT_EQ(std::count(probe_csv.begin(), probe_csv.end(), '\n'), 3);

  r = run_cli({"probe", "--data", path("data"), "--random-init", "--config", cfg, "--out", path("rand")});
  ASSERT_EQ(r.code, 0) << r.err;

  r = run_cli({"eval", "--data", path("data"), "--ckpt", path("ft/finetune.ajepa")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("accuracy ", 0), 0u);
  EXPECT_NE(r.out.find("\nmap "), std::string::npos);

  // A pretraining checkpoint has no classifier head.
  EXPECT_EQ(run_cli({"eval", "--data", path("data"), "--ckpt", path("run/checkpoint.ajepa")}).code, 2);
}

}  // namespace
}  // namespace ajepa
