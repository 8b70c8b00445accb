// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <fstream>
#include <set>

#include "quantsep/quantsep.hpp"
#include "test_util.hpp"

namespace {

using namespace quantsep;
namespace fs = std::filesystem;

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = cat(QUANTSEP_CLI, " ", args, " >", log.string(), " 2>&1");
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json tiny_config(const fs::path& out) {
  return {{"schema_version", 1},
          {"out", out.string()},
          {"data", {{"scenes", 40}}},
          {"model", {{"tcn_blocks", 1}, {"blocks_per_tcn", 2}, {"bottleneck", 16}, {"hidden", 32}}},
          {"train", {{"epochs", 2}}},
          {"sensitivity", {{"hutchinson_samples", 2}}},
          {"nas", {{"steps", 20}}},
          {"evaluate", {{"timing_runs", 1}}}};
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& j) {
  const fs::path p = dir / name;
  write_json(p.string(), j);
  return p;
}

std::map<std::string, std::string> stage_status(const fs::path& out) {
  std::map<std::string, std::string> m;
  const json run = read_json((out / "run.json").string());
  for (const auto& s : run.at("stages")) m[s.at("stage").get<std::string>()] = s.at("status").get<std::string>();
  return m;
}

std::string report_bytes(const fs::path& out) {
  std::string all;
  for (const char* f : {"summary.json", "summary.csv", "precision_profile.csv"}) all += read_file((out / "reports" / f).string());
  return all;
}

// One shared pipeline run; tests that need a fresh directory make their own.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = qs_test::scratch_dir("cli");
    out_ = dir_ / "run";
    config_ = write_config(dir_, "tiny.json", tiny_config(out_));
    first_exit_ = run_cli(cat("pipeline --config ", config_.string()), dir_ / "first.log");
    first_reports_ = first_exit_ == 0 ? report_bytes(out_) : "";
    first_status_ = first_exit_ == 0 ? stage_status(out_) : decltype(first_status_){};
  }
  static inline fs::path dir_, out_, config_;
  static inline int first_exit_ = -1;
  static inline std::string first_reports_;
  static inline std::map<std::string, std::string> first_status_;
};

TEST_F(Cli, PipelineSucceedsAndWritesProvenance) {
  ASSERT_EQ(first_exit_, 0) << read_file((dir_ / "first.log").string());
  EXPECT_GT(first_status_.size(), 30u);
  for (const auto& [stage, status] : first_status_) EXPECT_EQ(status, "ran") << stage;
  const json run = read_json((out_ / "run.json").string());
  EXPECT_EQ(run.at("command"), "pipeline");
  EXPECT_EQ(run.at("config_sha256"), sha256_hex(read_file(config_.string())));
  EXPECT_EQ(run.at("checkpoint_hash"), read_json((out_ / "model" / "checkpoint.json").string()).at("blob_sha256"));
  EXPECT_EQ(run.at("reports").at("summary.csv"), sha256_hex(read_file((out_ / "reports" / "summary.csv").string())));
  EXPECT_TRUE(fs::exists(out_ / "reports" / "timing.json"));
}

TEST_F(Cli, RerunIsFullyCachedAndByteIdentical) {
  ASSERT_EQ(first_exit_, 0);
  ASSERT_EQ(run_cli(cat("pipeline --config ", config_.string()), dir_ / "rerun.log"), 0);
  const auto status = stage_status(out_);
  EXPECT_EQ(status.size(), first_status_.size());
  for (const auto& [stage, s] : status) EXPECT_EQ(s, "cached") << stage;
  EXPECT_EQ(report_bytes(out_), first_reports_);
}

TEST_F(Cli, FreshDirectoryReproducesTheReports) {
  ASSERT_EQ(first_exit_, 0);
  const fs::path other = dir_ / "fresh";
  ASSERT_EQ(run_cli(cat("pipeline --config ", config_.string(), " --out ", other.string()), dir_ / "fresh.log"), 0);
  EXPECT_EQ(report_bytes(other), first_reports_);
}

TEST_F(Cli, BudgetChangeRerunsOnlyDownstreamStages) {
  ASSERT_EQ(first_exit_, 0);
  const fs::path copy = dir_ / "budget";
  fs::copy(out_, copy, fs::copy_options::recursive);
  auto j = tiny_config(copy);
  j["alloc"] = {{"budgets", {4.0, 6.0}}};
  const auto cfg = write_config(dir_, "budget.json", j);
  ASSERT_EQ(run_cli(cat("pipeline --config ", cfg.string()), dir_ / "budget.log"), 0);
  const auto status = stage_status(copy);
  for (const auto& [stage, s] : status) {
    const bool downstream = stage.rfind("allocate-", 0) == 0 || stage.rfind("nas-search-", 0) == 0 ||
                            stage.rfind("quantize-", 0) == 0 || stage.rfind("evaluate-", 0) == 0 || stage == "report";
    if (!downstream) {
      EXPECT_EQ(s, "cached") << stage;
    }
    if (stage.find("avg6") != std::string::npos) {
      EXPECT_EQ(s, "ran") << stage;
    }
    if (stage.find("avg4") != std::string::npos || stage.find("uniform") != std::string::npos) {
      EXPECT_EQ(s, "cached") << stage;
    }
  }
  EXPECT_EQ(status.at("report"), "ran");
  EXPECT_EQ(status.at("train"), "cached");
  EXPECT_EQ(status.at("sensitivity-Hes"), "cached");
}

TEST_F(Cli, ReportShowsUniformRowsAndFeasibleAllocations) {
  ASSERT_EQ(first_exit_, 0);
  std::ifstream csv(out_ / "reports" / "precision_profile.csv");
  std::string header, line;
  std::getline(csv, header);
  std::vector<std::string> cols;
  std::stringstream hs(header);
  for (std::string cell; std::getline(hs, cell, ',');) cols.push_back(cell);
  const auto col = std::find(cols.begin(), cols.end(), "uniform-4") - cols.begin();
  ASSERT_LT(static_cast<std::size_t>(col), cols.size());
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::vector<std::string> cells;
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    EXPECT_EQ(cells.at(col), "4") << line;
    ++rows;
  }
  EXPECT_EQ(rows, 6u);
  for (const char* name : {"kl-avg4", "hes-avg4", "nas-avg4"}) {
    const json a = read_json((out_ / "assignments" / (std::string(name) + ".json")).string());
    EXPECT_LE(a.at("average_bits").get<double>(), 4.0) << name;
    for (const auto& [id, n] : a.at("bits").items()) EXPECT_GE(n.get<int>(), 2) << name << " " << id;
  }
}

TEST_F(Cli, MixtureBaselineEqualsInputSiSnr) {
  ASSERT_EQ(first_exit_, 0);
  const json manifest = read_json((out_ / "data" / "manifest.json").string());
  const json mix = read_json((out_ / "evaluation" / "mixture.json").string());
  std::map<std::string, std::pair<double, int>> buckets;
  double total = 0.0;
  int n = 0;
  for (const auto& s : manifest.at("scenes")) {
    if (s.at("split") != "test") continue;
    const auto est = wav::read((out_ / "data" / s.at("files").at("mixture").get<std::string>()).string()).channels.at(0);
    const auto ref = wav::read((out_ / "data" / s.at("files").at("target").get<std::string>()).string()).channels.at(0);
    // Zero-mean projection in double precision.
    double me = 0.0, mt = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) me += est[i], mt += ref[i];
    me /= double(ref.size());
    mt /= double(ref.size());
    double dot = 0.0, tt = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) dot += (est[i] - me) * (ref[i] - mt), tt += (ref[i] - mt) * (ref[i] - mt);
    double sig = 0.0, err = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double s_t = dot / tt * (ref[i] - mt);
      sig += s_t * s_t;
      err += (est[i] - me - s_t) * (est[i] - me - s_t);
    }
    const double v = 10.0 * std::log10(sig / err);
    const std::string bucket = mixgen::kBucketNames[mixgen::angle_bucket(s.at("doa_difference_deg").get<double>())];
    buckets[bucket].first += v;
    buckets[bucket].second += 1;
    total += v;
    ++n;
  }
  ASSERT_GT(n, 0);
  EXPECT_NEAR(mix.at("mean").at("si_snr").get<double>(), total / n, 1e-6);
  EXPECT_EQ(mix.at("mean").at("improvement").get<double>(), 0.0);
  for (const auto& [b, acc] : buckets)
    EXPECT_NEAR(mix.at("buckets").at(b).at("si_snr").get<double>(), acc.first / acc.second, 1e-6) << b;
}

TEST_F(Cli, EvaluatePackedFile) {
  ASSERT_EQ(first_exit_, 0);
  const auto packed = out_ / "packed" / "uniform-8.qsep";
  EXPECT_EQ(run_cli(cat("evaluate --config ", config_.string(), " --model ", packed.string()), dir_ / "file.log"), 0)
      << read_file((dir_ / "file.log").string());
  const json j = read_json((out_ / "evaluation" / "file-uniform-8.json").string());
  const json sys = read_json((out_ / "evaluation" / "uniform-8.json").string());
  EXPECT_EQ(j.at("mean").at("si_snr"), sys.at("mean").at("si_snr"));
  EXPECT_EQ(run_cli(cat("simulate --config ", config_.string(), " --model ", packed.string()), dir_ / "bad.log"), 2);
}

TEST_F(Cli, SeedOverrideChangesTheCheckpoint) {
  ASSERT_EQ(first_exit_, 0);
  const fs::path other = dir_ / "seed";
  ASSERT_EQ(run_cli(cat("train --config ", config_.string(), " --seed 99 --out ", other.string()), dir_ / "seed.log"), 0);
  const json a = read_json((out_ / "run.json").string()), b = read_json((other / "run.json").string());
  EXPECT_NE(a.at("checkpoint_hash"), b.at("checkpoint_hash"));
  EXPECT_EQ(b.at("seed"), 99);
  EXPECT_FALSE(fs::exists(other / "reports"));
}

TEST(CliErrors, ConfigErrorsExitWithTwo) {
  const auto dir = qs_test::scratch_dir("cli_errors");
  auto typo = tiny_config(dir / "out");
  typo["train"]["epoch"] = 3;
  const auto typo_cfg = write_config(dir, "typo.json", typo);
  EXPECT_EQ(run_cli(cat("train --config ", typo_cfg.string()), dir / "typo.log"), 2);
  EXPECT_NE(read_file((dir / "typo.log").string()).find("train.epoch"), std::string::npos);

  auto budget = tiny_config(dir / "out");
  budget["alloc"] = {{"budgets", {1.5}}};
  EXPECT_EQ(run_cli(cat("allocate --config ", write_config(dir, "budget.json", budget).string()), dir / "b.log"), 2);
  EXPECT_NE(read_file((dir / "b.log").string()).find("minimum achievable is 2"), std::string::npos);

  write_file((dir / "broken.json").string(), "{\"seed\": ");
  EXPECT_EQ(run_cli(cat("simulate --config ", (dir / "broken.json").string()), dir / "broken.log"), 2);
  EXPECT_EQ(run_cli(cat("simulate --config ", (dir / "missing.json").string()), dir / "missing.log"), 2);
  EXPECT_EQ(run_cli(cat("bogus --config ", typo_cfg.string()), dir / "cmd.log"), 2);
  EXPECT_EQ(run_cli("simulate", dir / "noconfig.log"), 2);
  EXPECT_FALSE(fs::exists(dir / "out" / "model"));
}

TEST(CliErrors, DivergentTrainingExitsWithThree) {
  const auto dir = qs_test::scratch_dir("cli_numerical");
  auto j = tiny_config(dir / "out");
  j["data"]["scenes"] = 20;
  j["train"] = {{"epochs", 1}, {"lr", 1e30}, {"clip_norm", 0.0}};
  const auto cfg = write_config(dir, "diverge.json", j);
  EXPECT_EQ(run_cli(cat("train --config ", cfg.string()), dir / "log"), 3) << read_file((dir / "log").string());
  EXPECT_NE(read_file((dir / "log").string()).find("stage 'train'"), std::string::npos);
}

}  // namespace
