#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const char* bin = std::getenv("CTR_FORGE_BIN");
    ASSERT_NE(bin, nullptr) << "CTR_FORGE_BIN is not set";
    bin_ = bin;
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("ctr_forge_cli_" + std::string(info->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt";
    const std::string cmd = bin_ + " " + args + " > " + out.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    return r;
  }

  // A quick run on the separable generator.
  Result train_small(const fs::path& out) {
    return run("train --synthetic separable --epochs 3 --embed-dim 4 --heads 1 --cin-layers 4 "
               "--dnn-layers 8 --train-batch 256 --out " + out.string());
  }

  std::string bin_;
  fs::path dir_;
};

double field(const std::string& text, const std::string& key) {
  const auto pos = text.rfind(key + "=");
  if (pos == std::string::npos) return NAN;
  return std::stod(text.substr(pos + key.size() + 1));
}

}  // namespace

TEST_F(CliTest, TrainWritesRunDirectory) {
  const auto run_dir = dir_ / "run1";
  const auto r = train_small(run_dir);
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"manifest.txt", "metrics.csv", "best.ckpt", "final.ckpt", "vocab.tsv", "test.tsv"})
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  EXPECT_NE(r.out.find("best epoch"), std::string::npos) << r.out;
  const std::string csv = slurp(run_dir / "metrics.csv");
  EXPECT_EQ(csv.rfind("epoch,train_logloss,eval_auc,eval_logloss,lr,seconds\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST_F(CliTest, MissingDataFileExitsTwo) {
  const auto r = run("train --data " + (dir_ / "missing.tsv").string() + " --out " + (dir_ / "x").string());
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("missing.tsv"), std::string::npos) << r.out;
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run("train --synthetic separable").code, 2);
  EXPECT_EQ(run("bogus-command").code, 2);
  EXPECT_EQ(run("train --synthetic nope --out " + (dir_ / "y").string()).code, 2);
  std::ofstream(dir_ / "bad.cfg") << "learning_rate = 0.1\n";
  EXPECT_EQ(run("train --config " + (dir_ / "bad.cfg").string() + " --out " + (dir_ / "z").string()).code, 2);
}

TEST_F(CliTest, ManifestReplayGivesIdenticalMetrics) {
  ASSERT_EQ(train_small(dir_ / "a").code, 0);
  const auto r = run("train --config " + (dir_ / "a" / "manifest.txt").string() + " --out " + (dir_ / "b").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(dir_ / "a" / "metrics.csv"), slurp(dir_ / "b" / "metrics.csv"));
}

TEST_F(CliTest, FlagsOverrideConfigFile) {
  std::ofstream(dir_ / "c.cfg") << "synthetic = separable\nepochs = 5\nembed_dim = 4\nheads = 1\n"
                                   "cin_layers = 4\ndnn_layers = 8\n";
  const auto r = run("train --config " + (dir_ / "c.cfg").string() + " --epochs 1 --out " + (dir_ / "r").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string manifest = slurp(dir_ / "r" / "manifest.txt");
  EXPECT_NE(manifest.find("epochs = 1\n"), std::string::npos) << manifest;
  EXPECT_NE(manifest.find("embed_dim = 4\n"), std::string::npos) << manifest;
}

TEST_F(CliTest, EvalMatchesBestCsvRow) {
  const auto run_dir = dir_ / "run";
  ASSERT_EQ(train_small(run_dir).code, 0);
  const auto r = run("eval --run " + run_dir.string());
  ASSERT_EQ(r.code, 0) << r.out;

  std::istringstream csv(slurp(run_dir / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  double best_auc = NAN, best_ll = INFINITY;
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
    if (v[3] < best_ll) {
      best_ll = v[3];
      best_auc = v[2];
    }
  }
  EXPECT_NEAR(field(r.out, "auc"), best_auc, 1e-12) << r.out;
  EXPECT_NEAR(field(r.out, "logloss"), best_ll, 1e-12) << r.out;
}

TEST_F(CliTest, CorruptedCheckpointExitsTwo) {
  const auto run_dir = dir_ / "run";
  ASSERT_EQ(train_small(run_dir).code, 0);
  std::string bytes = slurp(run_dir / "best.ckpt");
  bytes[0] = 'X';
  std::ofstream(dir_ / "bad.ckpt", std::ios::binary) << bytes;
  const auto r = run("eval --checkpoint " + (dir_ / "bad.ckpt").string() + " --vocab " +
                     (run_dir / "vocab.tsv").string() + " --data " + (run_dir / "test.tsv").string());
  EXPECT_EQ(r.code, 2) << r.out;
}

TEST_F(CliTest, SingleClassEvalExitsThree) {
  const auto run_dir = dir_ / "run";
  ASSERT_EQ(train_small(run_dir).code, 0);
  std::istringstream in(slurp(run_dir / "test.tsv"));
  std::ofstream neg(dir_ / "neg.tsv");
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("0\t", 0) == 0) neg << line << '\n';
  neg.close();
  const auto r = run("eval --run " + run_dir.string() + " --data " + (dir_ / "neg.tsv").string());
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_NE(r.out.find("metric"), std::string::npos) << r.out;
}

TEST_F(CliTest, SweepOneValueOneRow) {
  const auto r = run("sweep --synthetic separable --param lr --values 0.05 --epochs 1 --embed-dim 4 --heads 1 "
                     "--cin-layers 4 --dnn-layers 8 --out " + (dir_ / "s").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string csv = slurp(dir_ / "s" / "sweep.csv");
  EXPECT_EQ(csv.rfind("param,value,best_auc,best_logloss,epochs_run\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST_F(CliTest, SweepUnknownParamExitsTwo) {
  const auto r = run("sweep --synthetic separable --param dropout --values 0.1 --out " + (dir_ / "s").string());
  EXPECT_EQ(r.code, 2) << r.out;
}

TEST_F(CliTest, GradcheckExitCodes) {
  const auto ok = run("gradcheck");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("max_rel_error="), std::string::npos);
  EXPECT_EQ(run("gradcheck --tol 1e-12").code, 1);
  EXPECT_EQ(run("gradcheck --corrupt").code, 1);
}
