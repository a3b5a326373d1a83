#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "commands.hpp"

namespace fs = std::filesystem;
using drio::cli::run;

namespace {

fs::path workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / ("drio_cli_test_" + std::to_string(getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string capture(const std::string& cmd) {
  std::string out;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  pclose(pipe);
  return out;
}

int cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "drio");
  return run(args);
}

// Small masked dataset shared by the tests.
fs::path dataset() {
  static const fs::path d = [] {
    const fs::path p = workdir() / "data";
    EXPECT_EQ(cli_run({"synth", "--out", p.string(), "--n", "20", "--d", "2", "--t", "6", "--seed", "3"}), 0);
    EXPECT_EQ(cli_run({"mask", "--data", p.string(), "--mechanism", "mnar", "--ratio", "0.3", "--seed", "1"}), 0);
    return p;
  }();
  return d;
}

std::vector<std::string> quick_train(const fs::path& out) {
  return {"train", "--data", dataset().string(), "--out", out.string(), "--epochs", "2", "--batch-size", "8",
          "--hidden-dim", "4", "--layers", "1", "--inner-steps", "2"};
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli_run({}), 1);
  EXPECT_EQ(cli_run({"frobnicate"}), 1);
  EXPECT_EQ(cli_run({"synth"}), 1);  // --out required
  EXPECT_EQ(cli_run({"synth", "--out", (workdir() / "x").string(), "--n", "abc"}), 1);
  EXPECT_EQ(cli_run({"train", "--data", (workdir() / "absent").string(), "--out", (workdir() / "r").string()}), 1);
  EXPECT_EQ(cli_run({"mask", "--data", dataset().string(), "--ratio", "1.5"}), 1);
  EXPECT_EQ(cli_run({"mask", "--data", dataset().string(), "--mechanism", "mar"}), 1);
}

TEST(Cli, HelpShowsDefaults) {
  const std::string help = capture(std::string(DRIO_BINARY) + " train --help");
  EXPECT_NE(help.find("--alpha"), std::string::npos);
  EXPECT_NE(help.find("0.5"), std::string::npos);
  EXPECT_NE(help.find("--input-drop"), std::string::npos);
  EXPECT_EQ(std::system((std::string(DRIO_BINARY) + " --help > /dev/null").c_str()), 0);
}

TEST(Cli, EvalWithoutMaskExitsOne) {
  const fs::path raw = workdir() / "raw";
  ASSERT_EQ(cli_run({"synth", "--out", raw.string(), "--n", "12", "--d", "2", "--t", "4"}), 0);
  const fs::path run_dir = workdir() / "raw_run";
  ASSERT_EQ(cli_run({"train", "--data", raw.string(), "--out", run_dir.string(), "--epochs", "1", "--hidden-dim", "3"}),
            0);
  const std::string out = capture(std::string(DRIO_BINARY) + " eval --data " + raw.string() + " --params " +
                                  (run_dir / "params.bin").string());
  EXPECT_NE(out.find("no artificial mask"), std::string::npos);
  EXPECT_EQ(cli_run({"eval", "--data", raw.string(), "--params", (run_dir / "params.bin").string()}), 1);
}

TEST(Cli, TrainWritesRunDirectory) {
  const fs::path out = workdir() / "run";
  ASSERT_EQ(cli_run(quick_train(out)), 0);
  for (const char* f : {"params.bin", "normalizer.bin", "loss_history.csv", "config.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_FALSE(fs::exists(workdir() / "run.partial"));
  EXPECT_NE(slurp(out / "manifest.json").find("\"status\": \"ok\""), std::string::npos);
  const std::string hist = slurp(out / "loss_history.csv");
  EXPECT_EQ(hist.substr(0, hist.find('\n')), "epoch,batch,recon,sinkhorn,total");
  // 20 samples, 14 for training, batches of 8: 2 per epoch.
  EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 5);
}

TEST(Cli, RerunIsByteIdentical) {
  const fs::path a = workdir() / "rep_a", b = workdir() / "rep_b";
  ASSERT_EQ(cli_run(quick_train(a)), 0);
  ASSERT_EQ(cli_run(quick_train(b)), 0);
  EXPECT_EQ(slurp(a / "params.bin"), slurp(b / "params.bin"));
  EXPECT_EQ(slurp(a / "loss_history.csv"), slurp(b / "loss_history.csv"));
  // Rerunning into the same directory replaces it.
  ASSERT_EQ(cli_run(quick_train(a)), 0);
  EXPECT_EQ(slurp(a / "params.bin"), slurp(b / "params.bin"));
  auto seeded = quick_train(b);
  seeded.insert(seeded.end(), {"--seed", "5"});
  ASSERT_EQ(cli_run(seeded), 0);
  EXPECT_NE(slurp(a / "params.bin"), slurp(b / "params.bin"));
}

TEST(Cli, RefusesForeignOutputDirectory) {
  const fs::path out = workdir() / "foreign";
  fs::create_directories(out);
  std::ofstream(out / "notes.txt") << "keep me";
  EXPECT_EQ(cli_run(quick_train(out)), 1);
  EXPECT_EQ(slurp(out / "notes.txt"), "keep me");
}

TEST(Cli, ConfigPrecedence) {
  const fs::path cfg = workdir() / "cfg.json";
  std::ofstream(cfg) << R"({"alpha": 0.25, "gamma": 3})";
  const fs::path a = workdir() / "prec_a", b = workdir() / "prec_b";
  auto args = quick_train(a);
  args.insert(args.end(), {"--config", cfg.string()});
  ASSERT_EQ(cli_run(args), 0);
  const std::string ca = slurp(a / "config.json");
  EXPECT_NE(ca.find("\"alpha\": 0.25"), std::string::npos);
  EXPECT_NE(ca.find("\"gamma\": 3.0"), std::string::npos);
  args = quick_train(b);
  args.insert(args.end(), {"--config", cfg.string(), "--alpha", "0.75"});
  ASSERT_EQ(cli_run(args), 0);
  const std::string cb = slurp(b / "config.json");
  EXPECT_NE(cb.find("\"alpha\": 0.75"), std::string::npos);
  EXPECT_NE(cb.find("\"gamma\": 3.0"), std::string::npos);

  std::ofstream(workdir() / "bad.json") << R"({"alpah": 1})";
  args = quick_train(workdir() / "prec_c");
  args.insert(args.end(), {"--config", (workdir() / "bad.json").string()});
  EXPECT_EQ(cli_run(args), 1);
}

TEST(Cli, ThreadsEnvironmentOverride) {
  unsetenv("DRIO_THREADS");
  EXPECT_EQ(drio::cli::resolve_threads(3), 3u);
  setenv("DRIO_THREADS", "2", 1);
  EXPECT_EQ(drio::cli::resolve_threads(3), 2u);
  setenv("DRIO_THREADS", "zero", 1);
  EXPECT_EQ(drio::cli::resolve_threads(3), 3u);
  unsetenv("DRIO_THREADS");
}

TEST(Cli, FullPipeline) {
  const fs::path run_dir = workdir() / "pipe";
  ASSERT_EQ(cli_run(quick_train(run_dir)), 0);
  const std::string params = (run_dir / "params.bin").string();

  ASSERT_EQ(cli_run({"eval", "--data", dataset().string(), "--params", params, "--baseline", "mean", "--label", "drio"}),
            0);
  const std::string csv = slurp(run_dir / "eval.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,split,mse_missing,w2,recon_mse_observed,n_eval_entries");
  EXPECT_NE(csv.find("\ndrio,test,"), std::string::npos);
  EXPECT_NE(csv.find("\nmean,test,"), std::string::npos);
  EXPECT_TRUE(fs::exists(run_dir / "pareto.md"));
  EXPECT_TRUE(fs::exists(run_dir / "manifest.eval.json"));
  const std::string first = csv;
  ASSERT_EQ(cli_run({"eval", "--data", dataset().string(), "--params", params, "--baseline", "mean", "--label", "drio"}),
            0);
  EXPECT_EQ(slurp(run_dir / "eval.csv"), first);

  const fs::path imputed = workdir() / "imputed.bin";
  ASSERT_EQ(cli_run({"impute", "--data", dataset().string(), "--params", params, "--out", imputed.string()}), 0);
  EXPECT_EQ(fs::file_size(imputed), 20u * 2u * 6u * 8u);
  EXPECT_TRUE(fs::exists(workdir() / "imputed.bin.manifest.json"));

  const fs::path grid = workdir() / "grid.json";
  std::ofstream(grid) << R"({"alphas": [0.5, 1.0], "gammas": [1.0], "epochs": 1, "hidden_dim_unused": 0})";
  EXPECT_EQ(cli_run({"cv", "--data", dataset().string(), "--grid", grid.string(), "--out",
                  (workdir() / "cv_bad").string()}),
            1);
  std::ofstream(grid, std::ios::trunc) << R"({"alphas": [0.5, 1.0], "gammas": [1.0], "epochs": 1,
                                             "backbone": {"hidden_dim": 3, "layers": 1}})";
  const fs::path cv_a = workdir() / "cv_a", cv_b = workdir() / "cv_b";
  ASSERT_EQ(cli_run({"cv", "--data", dataset().string(), "--grid", grid.string(), "--out", cv_a.string(), "--mode",
                  "oracle"}),
            0);
  setenv("DRIO_THREADS", "2", 1);
  ASSERT_EQ(cli_run({"cv", "--data", dataset().string(), "--grid", grid.string(), "--out", cv_b.string(), "--mode",
                  "oracle"}),
            0);
  unsetenv("DRIO_THREADS");
  for (const char* f : {"cv_results.csv", "selected.json", "best_config.json", "params.bin", "normalizer.bin"}) {
    EXPECT_EQ(slurp(cv_a / f), slurp(cv_b / f)) << f;
  }
  const std::string results = slurp(cv_a / "cv_results.csv");
  EXPECT_EQ(std::count(results.begin(), results.end(), '\n'), 3);
}
