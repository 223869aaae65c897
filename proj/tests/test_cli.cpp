#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ensdens/ensdens.hpp"

namespace fs = std::filesystem;
using namespace ensdens;

namespace {

const std::string kCli = ENSDENS_CLI_PATH;
const std::string kData = ENSDENS_TEST_DATA;

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ensdens_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("fit"), 2);
  EXPECT_EQ(run("fit --data /nonexistent.csv"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, MalformedCsvExitsTwo) {
  const auto dir = scratch("malformed");
  write(dir / "bad.csv", "1,2\n3,x\n5,6\n");
  EXPECT_EQ(run("fit --data " + (dir / "bad.csv").string() + " --out " + dir.string()), 2);
  EXPECT_FALSE(fs::exists(dir / "pool.json"));
}

TEST(Cli, OneColumnData) {
  const auto dir = scratch("onecol");
  std::ostringstream csv;
  Rng rng(1);
  for (int i = 0; i < 120; ++i) csv << (i % 2 ? 4.0 : -4.0) + rng.normal() << "\n";
  write(dir / "x.csv", csv.str());
  const std::string data = " --data " + (dir / "x.csv").string() + " --out " + dir.string();
  ASSERT_EQ(run("fit --k-max 3" + data), 0);
  const auto pool = pool_from_json(read_json_file((dir / "pool.json").string()));
  EXPECT_EQ(pool.models.front().dim(), 1);
  ASSERT_EQ(run("ensemble --pool " + (dir / "pool.json").string() + data), 0);
  ASSERT_EQ(run("cluster --pool " + (dir / "pool.json").string() + " --weights " + (dir / "weights.json").string() +
                data),
            0);
  const auto part = partition_from_json(read_json_file((dir / "partition.json").string()));
  ASSERT_GE(part.k_hat(), 2);
  EXPECT_NEAR(std::abs(part.modes[0].location(0)), 4.0, 0.5);
  EXPECT_NEAR(std::abs(part.modes[1].location(0)), 4.0, 0.5);
  EXPECT_LT(part.modes[0].location(0) * part.modes[1].location(0), 0.0);
  EXPECT_FALSE(fs::exists(dir / "density_grid.csv"));
}

TEST(Cli, IrisStagesAreDeterministic) {
  const std::string iris = kData + "/iris.csv";
  std::string outputs[2];
  for (int rep = 0; rep < 2; ++rep) {
    const auto dir = scratch("iris" + std::to_string(rep));
    const std::string common = " --data " + iris + " --out " + dir.string();
    ASSERT_EQ(run("fit" + common), 0);
    ASSERT_EQ(run("ensemble --penalty bic --pool " + (dir / "pool.json").string() + common), 0);
    ASSERT_EQ(run("cluster --pool " + (dir / "pool.json").string() + " --weights " +
                  (dir / "weights.json").string() + common),
              0);
    ASSERT_EQ(run("evaluate --partition " + (dir / "partition.json").string() + " --truth " + kData +
                  "/iris_species.csv --out " + dir.string()),
              0);
    for (const char* f : {"pool.json", "fit_report.csv", "weights.json", "partition.json", "metrics.json"})
      outputs[rep] += slurp(dir / f);

    const auto pool = pool_from_json(read_json_file((dir / "pool.json").string()));
    EXPECT_EQ(pool.models.front().size(), 2);
    const auto weights = read_json_file((dir / "weights.json").string());
    EXPECT_NEAR(weights.at("lambda").get<double>(), 2.505, 0.0005);
    EXPECT_EQ(weights.at("schema_version"), kSchemaVersion);
    const auto metrics = read_json_file((dir / "metrics.json").string());
    EXPECT_EQ(metrics.at("k_true"), 3);
  }
  EXPECT_EQ(outputs[0], outputs[1]);
}

TEST(Cli, ManualZeroPenaltyAndCv) {
  const auto dir = scratch("lambda");
  const auto sample = sample_scenario(scenario("M2"), 150, 3);
  std::ostringstream csv;
  csv << "x,y\n";
  for (Eigen::Index i = 0; i < sample.data.rows(); ++i) csv << sample.data(i, 0) << "," << sample.data(i, 1) << "\n";
  write(dir / "x.csv", csv.str());
  const std::string common = " --header --data " + (dir / "x.csv").string() + " --out " + dir.string();
  ASSERT_EQ(run("fit --k-max 3" + common), 0);
  const std::string pool = " --pool " + (dir / "pool.json").string();
  ASSERT_EQ(run("ensemble --lambda 0" + pool + common), 0);
  const auto w = read_json_file((dir / "weights.json").string());
  EXPECT_EQ(w.at("loglik").get<double>(), w.at("penalized_loglik").get<double>());

  ASSERT_EQ(run("ensemble --penalty cv --seed 4 --cv-grid 0.1:10:7" + pool + common), 0);
  const std::string first = slurp(dir / "weights.json");
  ASSERT_EQ(run("ensemble --penalty cv --seed 4 --cv-grid 0.1:10:7" + pool + common), 0);
  EXPECT_EQ(first, slurp(dir / "weights.json"));
  EXPECT_EQ(read_json_file((dir / "weights.json").string()).at("cv").at("table").size(), 7u);
  EXPECT_EQ(run("ensemble --penalty cv --cv-grid 3:1:7" + pool + common), 2);

  ASSERT_EQ(run("cluster --grid-resolution 20 --weights " + (dir / "weights.json").string() + pool + common), 0);
  const std::string grid = slurp(dir / "density_grid.csv");
  EXPECT_EQ(grid.substr(0, 12), "x,y,density\n");
  EXPECT_EQ(std::count(grid.begin(), grid.end(), '\n'), 1 + 400);
}

TEST(Cli, DimensionMismatchIsAUsageError) {
  const auto dir = scratch("mismatch");
  write(dir / "a.csv", "1,2\n2,3\n3,1\n4,4\n5,2\n6,1\n");
  write(dir / "b.csv", "1\n2\n3\n");
  ASSERT_EQ(run("fit --k-max 1 --data " + (dir / "a.csv").string() + " --out " + dir.string()), 0);
  EXPECT_EQ(run("ensemble --pool " + (dir / "pool.json").string() + " --data " + (dir / "b.csv").string() +
                " --out " + dir.string()),
            2);
}

TEST(Cli, EvaluateAgainstItselfAndLengthMismatch) {
  const auto dir = scratch("evaluate");
  Partition p;
  p.labels = {1, 1, 2, 2, 2};
  p.modes = {Mode{Vector::Zero(1), 0.0, 2}, Mode{Vector::Ones(1), -1.0, 3}};
  p.merge_tol = 0.1;
  write_json_file((dir / "p.json").string(), partition_to_json(p));
  write(dir / "same.csv", "a\na\nb\nb\nb\n");
  write(dir / "short.csv", "a\nb\n");
  ASSERT_EQ(run("evaluate --partition " + (dir / "p.json").string() + " --truth " + (dir / "same.csv").string() +
                " --out " + dir.string()),
            0);
  EXPECT_EQ(read_json_file((dir / "metrics.json").string()).at("ari").get<double>(), 1.0);
  EXPECT_EQ(run("evaluate --partition " + (dir / "p.json").string() + " --truth " + (dir / "short.csv").string() +
                " --out " + dir.string()),
            2);
}

TEST(Cli, SimulateAndReportAreReproducible) {
  const auto dir = scratch("simulate");
  write(dir / "plan.txt",
        "scenarios = M1\nB = 2\nn = 80\nmethods = SB, lambda_AIC\nk_max = 2\nn_init = 1\nise_resolution = 40\n");
  ASSERT_EQ(run("simulate --plan " + (dir / "plan.txt").string() + " --seed 9 --out " + dir.string()), 0);
  const std::string first = slurp(dir / "results.csv");
  ASSERT_EQ(run("simulate --plan " + (dir / "plan.txt").string() + " --seed 9 --out " + dir.string()), 0);
  EXPECT_EQ(first, slurp(dir / "results.csv"));
  const auto from_run = slurp(dir / "summary.json");
  fs::remove(dir / "summary.json");
  ASSERT_EQ(run("report --results " + (dir / "results.csv").string() + " --out " + dir.string()), 0);
  EXPECT_EQ(slurp(dir / "summary.json"), from_run);
  write(dir / "bad_plan.txt", "B = -1\n");
  EXPECT_EQ(run("simulate --plan " + (dir / "bad_plan.txt").string() + " --out " + dir.string()), 2);
}
