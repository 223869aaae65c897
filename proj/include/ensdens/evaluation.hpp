#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ensdens/error.hpp"
#include "ensdens/mixture.hpp"

namespace ensdens {

/// Cross-tabulation of two labelings. Rows follow the sorted distinct values
/// of the first labeling, columns those of the second.
struct ContingencyTable {
  std::vector<int> row_labels;
  std::vector<int> col_labels;
  std::vector<std::vector<std::int64_t>> counts;
  std::vector<std::int64_t> row_sums;
  std::vector<std::int64_t> col_sums;
  std::int64_t total = 0;

  static ContingencyTable build(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw UsageError("contingency table: label vectors differ in length");
    ContingencyTable t;
    std::map<int, std::size_t> rows, cols;
    for (int v : a) rows.emplace(v, 0);
    for (int v : b) cols.emplace(v, 0);
    for (auto& [label, idx] : rows) {
      idx = t.row_labels.size();
      t.row_labels.push_back(label);
    }
    for (auto& [label, idx] : cols) {
      idx = t.col_labels.size();
      t.col_labels.push_back(label);
    }
    t.counts.assign(rows.size(), std::vector<std::int64_t>(cols.size(), 0));
    t.row_sums.assign(rows.size(), 0);
    t.col_sums.assign(cols.size(), 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto r = rows[a[i]], c = cols[b[i]];
      ++t.counts[r][c];
      ++t.row_sums[r];
      ++t.col_sums[c];
    }
    t.total = static_cast<std::int64_t>(a.size());
    return t;
  }
};

inline double choose2(std::int64_t k) { return 0.5 * static_cast<double>(k) * static_cast<double>(k - 1); }

/// Hubert-Arabie adjusted Rand index. When the expected and maximum index
/// coincide (both labelings all-one-cluster or both all-singletons) the
/// labelings are identical and 1 is returned.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw UsageError("adjusted_rand_index: label vectors differ in length");
  if (a.size() < 2) throw UsageError("adjusted_rand_index: need at least two observations");
  const auto t = ContingencyTable::build(a, b);
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& row : t.counts)
    for (auto c : row) index += choose2(c);
  for (auto r : t.row_sums) sum_a += choose2(r);
  for (auto c : t.col_sums) sum_b += choose2(c);
  const double expected = sum_a * sum_b / choose2(t.total);
  const double maximum = 0.5 * (sum_a + sum_b);
  if (maximum == expected) return 1.0;
  return (index - expected) / (maximum - expected);
}

/// Tensor-product grid for trapezoid integration.
struct IseGrid {
  std::vector<std::pair<double, double>> bounds;
  int resolution = 400;

  void validate() const {
    if (bounds.empty()) throw UsageError("IseGrid: no dimensions");
    if (resolution < 2) throw UsageError("IseGrid: resolution must be >= 2");
    for (auto [lo, hi] : bounds)
      if (!(lo < hi)) throw UsageError("IseGrid: need lo < hi in every dimension");
  }

  int dim() const { return static_cast<int>(bounds.size()); }

  double step(int j) const { return (bounds[j].second - bounds[j].first) / (resolution - 1); }

  double cell_volume() const {
    double v = 1.0;
    for (int j = 0; j < dim(); ++j) v *= step(j);
    return v;
  }

  std::size_t node_count() const {
    std::size_t c = 1;
    for (int j = 0; j < dim(); ++j) c *= static_cast<std::size_t>(resolution);
    return c;
  }

  /// All nodes as rows, last coordinate varying fastest.
  Matrix nodes() const {
    validate();
    Matrix out(static_cast<Eigen::Index>(node_count()), dim());
    std::vector<int> idx(dim(), 0);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      for (int j = 0; j < dim(); ++j) out(r, j) = bounds[j].first + idx[j] * step(j);
      for (int j = dim() - 1; j >= 0; --j) {
        if (++idx[j] < resolution) break;
        idx[j] = 0;
      }
    }
    return out;
  }

  /// Trapezoid weights matching nodes().
  Vector weights() const {
    validate();
    Vector w(static_cast<Eigen::Index>(node_count()));
    std::vector<int> idx(dim(), 0);
    const double vol = cell_volume();
    for (Eigen::Index r = 0; r < w.size(); ++r) {
      double f = vol;
      for (int j = 0; j < dim(); ++j)
        if (idx[j] == 0 || idx[j] == resolution - 1) f *= 0.5;
      w(r) = f;
      for (int j = dim() - 1; j >= 0; --j) {
        if (++idx[j] < resolution) break;
        idx[j] = 0;
      }
    }
    return w;
  }

  /// Box of mean +- width * sd per coordinate.
  static IseGrid around(const Vector& mean, const Vector& sd, double width = 6.0, int resolution = 400) {
    IseGrid g;
    g.resolution = resolution;
    for (Eigen::Index j = 0; j < mean.size(); ++j)
      g.bounds.emplace_back(mean(j) - width * sd(j), mean(j) + width * sd(j));
    return g;
  }

  bool covers(const Vector& mean, const Vector& sd, double width = 6.0) const {
    for (int j = 0; j < dim(); ++j)
      if (bounds[j].first > mean(j) - width * sd(j) * (1 - 1e-12) ||
          bounds[j].second < mean(j) + width * sd(j) * (1 - 1e-12))
        return false;
    return true;
  }
};

/// Trapezoid integral of (est - truth)^2 from density values at the grid
/// nodes, summed in node order.
inline double ise_from_values(const Vector& est, const Vector& truth, const IseGrid& grid) {
  const Vector w = grid.weights();
  if (est.size() != w.size() || truth.size() != w.size())
    throw UsageError("ise: value vectors do not match grid");
  double acc = 0.0;
  for (Eigen::Index r = 0; r < w.size(); ++r) {
    const double diff = est(r) - truth(r);
    acc += w(r) * diff * diff;
  }
  return acc;
}

/// ISE between two densities given as log-density-of-rows callables.
inline double ise(const std::function<Vector(const Matrix&)>& est_log_density,
                  const std::function<Vector(const Matrix&)>& truth_log_density, const IseGrid& grid) {
  const Matrix nodes = grid.nodes();
  return ise_from_values(est_log_density(nodes).array().exp(), truth_log_density(nodes).array().exp(), grid);
}

inline double ise(const GaussianMixture& est, const std::function<Vector(const Matrix&)>& truth,
                  const IseGrid& grid) {
  return ise([&](const Matrix& x) { return est.log_density_rows(x); }, truth, grid);
}

inline double ise(const EnsembleDensity& est, const std::function<Vector(const Matrix&)>& truth,
                  const IseGrid& grid) {
  return ise([&](const Matrix& x) { return est.log_density_rows(x); }, truth, grid);
}

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
};

/// Sample mean and standard deviation (divisor n - 1; zero for one value).
inline Summary mise_summary(const std::vector<double>& values) {
  if (values.empty()) throw UsageError("mise_summary: empty input");
  Summary s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace ensdens
