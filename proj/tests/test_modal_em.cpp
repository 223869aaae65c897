#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <queue>
#include <vector>

#include "test_support.hpp"

using namespace ensdens;
using namespace testing_support;

namespace {

GaussianMixture spherical_mixture(const std::vector<Vector>& means, double sd) {
  std::vector<GaussianComponent> comps;
  for (const auto& m : means) comps.emplace_back(m, sd * sd * Matrix::Identity(m.size(), m.size()));
  return GaussianMixture(comps, Vector::Constant(static_cast<Eigen::Index>(means.size()), 1.0 / means.size()),
                         CovarianceStructure::VII);
}

// Hill climbing on the linear-domain density with a numerical gradient and
// a shrinking step; independent of the MEM update.
Vector gradient_ascent_oracle(const GaussianMixture& m, Vector x) {
  auto logf = [&](const Vector& y) { return std::log(linear_mixture_density(y, m)); };
  double step = 0.1;
  for (int iter = 0; iter < 200000 && step > 1e-12; ++iter) {
    const Vector g = numeric_gradient(logf, x, 1e-6);
    if (g.norm() < 1e-9) break;
    const Vector next = x + step * g;
    if (logf(next) > logf(x)) {
      x = next;
      step *= 1.2;
    } else {
      step *= 0.5;
    }
  }
  return x;
}

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

}  // namespace

TEST(MemAscend, SingleComponentJumpsToTheMean) {
  const auto m = spherical_mixture({v2(1.0, -2.0)}, 0.7);
  const ModalMixture mm(m);
  const auto step = mm.step(v2(5.0, 5.0));
  EXPECT_LT((step.next - v2(1.0, -2.0)).norm(), 1e-12);
  const auto r = mem_ascend(v2(5.0, 5.0), m);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.path_length, 2);
}

TEST(MemAscend, SeparatedMeansAreFixedPoints) {
  const auto m = spherical_mixture({v2(-10, 0), v2(10, 0)}, 1.0);
  for (const auto& start : {v2(-10, 0), v2(10, 0)}) {
    const auto r = mem_ascend(start, m);
    EXPECT_TRUE(r.converged);
    EXPECT_LT((r.location - start).norm(), 1e-8);
  }
}

TEST(MemAscend, NonConvergenceIsFlagged) {
  const auto spec = scenario("M2");
  const auto r = mem_ascend(v2(2.5, -2.5), as_gaussian_mixture(spec), 1e-10, 1);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.path_length, 1);
}

TEST(MemAscend, ReachesGradientAscentModesOnM2) {
  const auto truth = as_gaussian_mixture(scenario("M2"));
  std::vector<Vector> oracle_modes;
  for (const auto& start : {v2(-1, -1), v2(1, 1), v2(-2, 2), v2(2, -2), v2(0.1, 0.0), v2(-0.1, 0.0)}) {
    const Vector mode = gradient_ascent_oracle(truth, start);
    bool known = false;
    for (const auto& m : oracle_modes) known = known || (m - mode).norm() < 1e-4;
    if (!known) oracle_modes.push_back(mode);
  }
  ASSERT_EQ(oracle_modes.size(), 2u);
  // Grid points on the anti-diagonal ascend to the saddle at the origin;
  // the clustering pass perturbs those off it.
  Matrix starts(400, 2);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) starts.row(i * 20 + j) = v2(-3.0 + 6.0 * i / 19, -3.0 + 6.0 * j / 19).transpose();
  const auto clustering = modal_cluster(starts, truth);
  for (int p = 0; p < 400; ++p) {
    ASSERT_TRUE(clustering.converged[p]);
    double best = 1e300;
    for (const auto& m : oracle_modes) best = std::min(best, (m - clustering.endpoints[p]).norm());
    EXPECT_LT(best, 1e-3) << "start " << starts.row(p);
  }
}

TEST(MemAscend, LogDensityNondecreasingAlongRandomPaths) {
  Rng rng(1);
  for (int path = 0; path < 500; ++path) {
    const int d = 1 + static_cast<int>(rng.below(3));
    std::vector<GaussianMixture> models;
    const int m = 1 + static_cast<int>(rng.below(3));
    for (int j = 0; j < m; ++j) models.push_back(random_mixture(d, 1 + static_cast<int>(rng.below(4)), rng));
    const auto flat = flatten_ensemble(EnsembleDensity(models, random_simplex(m, rng)));
    std::vector<double> trace;
    mem_ascend(random_vector(d, rng, 3.0), ModalMixture(flat), 1e-10, 10000, &trace);
    for (std::size_t t = 1; t < trace.size(); ++t)
      ASSERT_GE(trace[t], trace[t - 1] - 1e-10) << "path " << path << " step " << t;
  }
}

TEST(ModalCluster, ModesAreFixedPointsWithVanishingGradient) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_mixture(2, 4, rng, 2.5);
    Matrix x(60, 2);
    for (int i = 0; i < 60; ++i) x.row(i) = random_vector(2, rng, 3.0).transpose();
    const auto part = find_partition(x, EnsembleDensity({m}, Vector::Ones(1)));
    const ModalMixture mm(m);
    int total = 0;
    for (const auto& mode : part.modes) {
      const auto s = mm.step(mode.location);
      EXPECT_LT((s.next - mode.location).norm(), 1e-8);
      EXPECT_LT(s.gradient.norm(), 1e-5);
      const Vector numeric = numeric_gradient([&](const Vector& y) { return mm.log_density(y); }, mode.location);
      EXPECT_LT(numeric.norm(), 1e-5);
      total += mode.basin_size;
    }
    EXPECT_EQ(total, 60);
    for (std::size_t k = 1; k < part.modes.size(); ++k)
      EXPECT_GE(part.modes[k - 1].log_density, part.modes[k].log_density);
  }
}

TEST(ModalCluster, UnimodalDensityGivesOneCluster) {
  const auto spec = scenario("M1");
  const auto sample = sample_scenario(spec, 300, 3);
  const auto part = find_partition(sample.data, EnsembleDensity({as_gaussian_mixture(spec)}, Vector::Ones(1)));
  EXPECT_EQ(part.k_hat(), 1);
  for (int l : part.labels) EXPECT_EQ(l, 1);
}

TEST(ModalCluster, SeparatedComponentsMatchMapLabels) {
  const auto m = spherical_mixture({v2(0, 0), v2(12, 0), v2(0, 12)}, 1.0);
  Rng rng(4);
  Matrix x(150, 2);
  for (int i = 0; i < 150; ++i) x.row(i) = (m.component(i % 3).mean() + random_vector(2, rng)).transpose();
  const auto part = find_partition(x, EnsembleDensity({m}, Vector::Ones(1)));
  EXPECT_EQ(part.k_hat(), 3);
  EXPECT_EQ(adjusted_rand_index(part.labels, map_classify(x, m).labels), 1.0);
}

TEST(ModalCluster, InvariantToObservationOrder) {
  const auto spec = scenario("M3");
  const auto sample = sample_scenario(spec, 200, 5);
  const EnsembleDensity ens({as_gaussian_mixture(spec)}, Vector::Ones(1));
  const auto a = find_partition(sample.data, ens);
  std::vector<Eigen::Index> perm(200);
  for (Eigen::Index i = 0; i < 200; ++i) perm[i] = (i * 37) % 200;
  Matrix shuffled(200, 2);
  for (Eigen::Index i = 0; i < 200; ++i) shuffled.row(i) = sample.data.row(perm[i]);
  const auto b = find_partition(shuffled, ens);
  std::vector<int> a_perm(200);
  for (Eigen::Index i = 0; i < 200; ++i) a_perm[i] = a.labels[perm[i]];
  EXPECT_EQ(adjusted_rand_index(a_perm, b.labels), 1.0);
  EXPECT_EQ(a.k_hat(), b.k_hat());
}

TEST(ModalCluster, MergeToleranceDefaultsToDataScale) {
  const auto sample = sample_scenario(scenario("M2"), 100, 6);
  const auto part = find_partition(sample.data, EnsembleDensity({as_gaussian_mixture(scenario("M2"))}, Vector::Ones(1)));
  EXPECT_NEAR(part.merge_tol, default_merge_tol(sample.data), 1e-15);
  ModalOptions opts;
  opts.merge_tol = 0.5;
  EXPECT_EQ(find_partition(sample.data, EnsembleDensity({as_gaussian_mixture(scenario("M2"))}, Vector::Ones(1)), opts)
                .merge_tol,
            0.5);
}

TEST(ModalCluster, SingleLinkageChainsNearbyEndpoints) {
  const std::vector<Vector> pts{v2(0, 0), v2(0.9, 0), v2(1.8, 0), v2(5, 5), v2(5, 5.5)};
  const auto g = detail::single_linkage(pts, 1.0);
  EXPECT_EQ(g, (std::vector<int>{0, 0, 0, 1, 1}));
}

TEST(PredictLabels, TrainingPointsAndModesKeepTheirLabels) {
  const auto spec = scenario("M2");
  const auto sample = sample_scenario(spec, 150, 7);
  const EnsembleDensity ens({as_gaussian_mixture(spec)}, Vector::Ones(1));
  const auto ctx = PartitionContext::build(sample.data, ens);
  const auto& part = ctx.clustering.partition;
  EXPECT_EQ(predict_labels(sample.data, ctx), part.labels);
  Matrix at_modes(part.k_hat(), 2);
  for (int k = 0; k < part.k_hat(); ++k) at_modes.row(k) = part.modes[k].location.transpose();
  const auto labels = predict_labels(at_modes, ctx);
  for (int k = 0; k < part.k_hat(); ++k) EXPECT_EQ(labels[k], k + 1);
}

TEST(PredictLabels, M2GridSplitsIntoTwoConnectedBasins) {
  const auto spec = scenario("M2");
  const auto truth = as_gaussian_mixture(spec);
  const auto sample = sample_scenario(spec, 200, 8);
  const auto ctx = PartitionContext::build(sample.data, EnsembleDensity({truth}, Vector::Ones(1)));
  ASSERT_EQ(ctx.clustering.partition.k_hat(), 2);
  const int r = 30;
  // Offset grid: no node lies on the anti-diagonal x + y = 0, which is the
  // basin boundary since M2 is symmetric under reflection across it.
  Matrix grid(r * r, 2);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j)
      grid.row(i * r + j) = v2(-2.95 + 6.0 * i / (r - 1), -2.95 + 6.0 * j / (r - 1)).transpose();
  const auto labels = predict_labels(grid, ctx);

  const Vector oracle_a = gradient_ascent_oracle(truth, v2(-0.6, -0.6));
  const Vector oracle_b = gradient_ascent_oracle(truth, v2(0.6, 0.6));
  for (int p = 0; p < r * r; ++p) {
    ASSERT_GE(labels[p], 1);
    ASSERT_LE(labels[p], 2);
    const Vector& mode = ctx.clustering.partition.modes[labels[p] - 1].location;
    const Vector& oracle = grid(p, 0) + grid(p, 1) < 0 ? oracle_a : oracle_b;
    EXPECT_LT((mode - oracle).norm(), 1e-3) << grid.row(p);
  }

  std::vector<int> seen(r * r, 0);
  int components = 0;
  for (int start = 0; start < r * r; ++start) {
    if (seen[start]) continue;
    ++components;
    std::queue<int> q;
    q.push(start);
    seen[start] = 1;
    while (!q.empty()) {
      const int p = q.front();
      q.pop();
      const int i = p / r, j = p % r;
      const int nb[4][2] = {{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
      for (const auto& c : nb) {
        if (c[0] < 0 || c[0] >= r || c[1] < 0 || c[1] >= r) continue;
        const int qn = c[0] * r + c[1];
        if (!seen[qn] && labels[qn] == labels[p]) {
          seen[qn] = 1;
          q.push(qn);
        }
      }
    }
  }
  EXPECT_EQ(components, 2);
}
