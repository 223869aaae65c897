#include <gtest/gtest.h>

#include <sstream>

#include "ensdens/ensdens.hpp"

using namespace ensdens;

namespace {

ExperimentPlan tiny_plan() {
  std::istringstream in(R"(# small plan
scenarios = M1, M2
B = 2
n = 100
methods = SB, SB-NP, lambda_BIC, lambda_CV
seed = 5
k_max = 3
n_init = 2
ise_resolution = 60
)");
  return parse_plan(in);
}

}  // namespace

TEST(Plan, ParsesKeysAndLists) {
  const auto plan = tiny_plan();
  EXPECT_EQ(plan.scenarios, (std::vector<std::string>{"M1", "M2"}));
  EXPECT_EQ(plan.replicates, 2);
  EXPECT_EQ(plan.sample_sizes, (std::vector<std::size_t>{100}));
  EXPECT_EQ(plan.methods.size(), 4u);
  EXPECT_EQ(plan.fit.k_max, 3);
  EXPECT_EQ(plan.ise_resolution, 60);
}

TEST(Plan, RejectsUnknownKeysAndBadValues) {
  std::istringstream unknown("colour = blue\n");
  EXPECT_THROW(parse_plan(unknown), ParseError);
  std::istringstream bad("B = many\n");
  EXPECT_THROW(parse_plan(bad), ParseError);
  std::istringstream scen("scenarios = M9\n");
  EXPECT_THROW(parse_plan(scen), UsageError);
  std::istringstream method("methods = SB, kde\n");
  EXPECT_THROW(parse_plan(method), ParseError);
}

TEST(Experiment, RowsAndMissingCells) {
  const auto plan = tiny_plan();
  const auto rows = run_experiment(plan);
  ASSERT_EQ(rows.size(), 2u * 2u * 4u);
  for (const auto& r : rows) {
    EXPECT_TRUE(r.error.empty()) << r.error;
    EXPECT_TRUE(r.ari.has_value());
    EXPECT_EQ(r.ise.has_value(), r.method != Method::SB_NP);
    EXPECT_EQ(r.lambda.has_value(), r.method == Method::LambdaBIC || r.method == Method::LambdaCV);
    if (r.method == Method::LambdaBIC) EXPECT_DOUBLE_EQ(*r.lambda, lambda_bic(100));
  }
  EXPECT_EQ(rows.front().scenario, "M1");
  EXPECT_EQ(rows.back().scenario, "M2");
  EXPECT_EQ(rows[0].seed, replicate_seed(5, "M1", 100, 1));
}

TEST(Experiment, ResultsAreReproducible) {
  const auto plan = tiny_plan();
  EXPECT_EQ(results_csv(run_experiment(plan)), results_csv(run_experiment(plan)));
}

TEST(Experiment, ResultsCsvRoundTripAndSummary) {
  const auto rows = run_experiment(tiny_plan());
  const auto text = results_csv(rows);
  std::istringstream in(text);
  const auto back = parse_results_csv(in);
  ASSERT_EQ(back.size(), rows.size());
  EXPECT_EQ(results_csv(back), text);

  const auto summary = summarize(rows);
  EXPECT_EQ(summary.at("schema_version"), kSchemaVersion);
  ASSERT_EQ(summary.at("tables").size(), 2u);
  const auto& first = summary.at("tables")[0];
  EXPECT_EQ(first.at("scenario"), "M1");
  EXPECT_EQ(first.at("rows").size(), 4u);
  EXPECT_TRUE(first.at("rows")[1].at("mise_x1000").is_null());
  EXPECT_EQ(first.at("rows")[0].at("replicates"), 2);
}

TEST(Experiment, MalformedResultsAreReported) {
  std::istringstream in("header\nM1,100,SB,1,,1,1,,5\nM1,x,SB,1,,1,1,,5\nM1,100,SB\n");
  try {
    parse_results_csv(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.lines(), (std::vector<std::size_t>{3, 4}));
  }
}
