#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace ensdens;
using namespace testing_support;

TEST(CsvMatrix, ParsesWithAndWithoutHeader) {
  std::istringstream plain("1,2\n3,4\n\n5,6\n");
  const Matrix a = parse_csv_matrix(plain, false);
  EXPECT_EQ(a.rows(), 3);
  EXPECT_EQ(a(2, 1), 6.0);
  std::istringstream headed("x,y\n1.5, -2e-3\n");
  const Matrix b = parse_csv_matrix(headed, true);
  EXPECT_EQ(b.rows(), 1);
  EXPECT_EQ(b(0, 1), -2e-3);
}

TEST(CsvMatrix, ReportsEveryMalformedLine) {
  std::istringstream in("1,2\n3,abc\n4,5\n6\n7,nan\n");
  try {
    parse_csv_matrix(in, false);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.lines(), (std::vector<std::size_t>{2, 4, 5}));
  }
  std::istringstream empty("");
  EXPECT_THROW(parse_csv_matrix(empty, false), ParseError);
}

TEST(Json, ModelRoundTrip) {
  Rng rng(1);
  const auto m = random_mixture(3, 2, rng);
  const auto back = model_from_json(model_to_json(m));
  EXPECT_EQ(back.size(), 2);
  EXPECT_EQ(back.structure(), m.structure());
  for (int k = 0; k < 2; ++k) {
    EXPECT_LT((back.component(k).mean() - m.component(k).mean()).norm(), 1e-15);
    EXPECT_LT((back.component(k).covariance() - m.component(k).covariance()).norm(), 1e-15);
  }
  EXPECT_TRUE(std::isnan(back.loglik()));
}

TEST(Json, PoolRoundTripKeepsRanking) {
  FitConfig cfg;
  cfg.k_max = 3;
  cfg.ensemble_size = 5;
  const auto sample = sample_scenario(scenario("M2"), 200, 2);
  const auto pool = fit_grid(sample.data, cfg);
  const auto j = pool_to_json(pool, 200);
  EXPECT_EQ(j.at("schema_version"), kSchemaVersion);
  const auto back = pool_from_json(j);
  ASSERT_EQ(back.models.size(), pool.models.size());
  EXPECT_EQ(back.ensemble_size, 5);
  for (std::size_t r = 0; r < pool.models.size(); ++r) EXPECT_EQ(back.models[r].bic(), pool.models[r].bic());
  auto broken = j;
  std::swap(broken["models"][0], broken["models"][1]);
  EXPECT_THROW(pool_from_json(broken), ParseError);
}

TEST(Json, PartitionRoundTrip) {
  Partition p;
  p.labels = {1, 2, 2};
  p.modes = {Mode{Vector::Zero(2), -1.0, 1}, Mode{Vector::Ones(2), -2.0, 2}};
  p.method_tag = "modal-em";
  p.merge_tol = 0.01;
  const auto back = partition_from_json(partition_to_json(p));
  EXPECT_EQ(back.labels, p.labels);
  EXPECT_EQ(back.k_hat(), 2);
  EXPECT_EQ(back.modes[1].basin_size, 2);
  auto bad = partition_to_json(p);
  bad["labels"] = {1, 3};
  EXPECT_THROW(partition_from_json(bad), ParseError);
}

TEST(Json, WeightsRoundTrip) {
  WeightFit fit;
  fit.alpha = Vector::Constant(2, 0.5);
  fit.lambda = 2.5;
  fit.loglik = -10;
  fit.penalized_loglik = -20;
  fit.iterations = 3;
  fit.converged = true;
  const auto j = weights_to_json(fit);
  EXPECT_EQ(j.at("dropped_models").size(), 0u);
  const auto back = weights_from_json(j);
  EXPECT_EQ(back.alpha, fit.alpha);
  EXPECT_EQ(back.lambda, 2.5);
}
