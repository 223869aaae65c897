#pragma once

// Modal EM on a flattened Gaussian mixture and the partition it induces.
//
// The ascent runs on the component-level mixture sum_j w_j phi_j, where the
// location update has the closed form
//   x <- (sum_j p_j S_j^-1)^-1 sum_j p_j S_j^-1 mu_j,
// with p_j the posterior weight of component j at the current x. Each step
// does not decrease the density.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ensdens/error.hpp"
#include "ensdens/mixture.hpp"
#include "ensdens/parallel.hpp"
#include "ensdens/partition.hpp"
#include "ensdens/rng.hpp"

namespace ensdens {

struct ModalOptions {
  double rel_tol = 1e-10;
  int max_iter = 10000;
  std::optional<double> merge_tol;  // default: 1e-2 * geometric mean of coordinate sds
  std::uint64_t seed = 0;           // saddle perturbations
};

/// Precomputed precision form of a mixture for repeated MEM steps.
class ModalMixture {
 public:
  explicit ModalMixture(const GaussianMixture& flat) : dim_(flat.dim()) {
    const auto k = flat.size();
    precisions_.reserve(k);
    shifted_.reserve(k);
    means_.reserve(k);
    log_consts_.resize(k);
    for (int j = 0; j < k; ++j) {
      const auto& c = flat.component(j);
      const Matrix eye = Matrix::Identity(dim_, dim_);
      const Matrix linv = c.cholesky().triangularView<Eigen::Lower>().solve(eye);
      Matrix precision = linv.transpose() * linv;
      precision = 0.5 * (precision + precision.transpose());
      shifted_.push_back(precision * c.mean());
      precisions_.push_back(std::move(precision));
      means_.push_back(c.mean());
      log_consts_(j) = flat.log_weights()(j) - 0.5 * (dim_ * kLog2Pi + c.log_det());
    }
  }

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(means_.size()); }

  /// log w_j + log phi_j(x) for every component.
  Vector component_terms(const Vector& x) const {
    Vector terms(size());
    for (int j = 0; j < size(); ++j) {
      const Vector diff = x - means_[j];
      terms(j) = log_consts_(j) - 0.5 * diff.dot(precisions_[j] * diff);
    }
    return terms;
  }

  double log_density(const Vector& x) const { return log_sum_exp(component_terms(x)); }

  struct Step {
    Vector next;
    Vector gradient;  // gradient of log f at the input point
    double log_density;
  };

  Step step(const Vector& x) const {
    const Vector terms = component_terms(x);
    const double lse = log_sum_exp(terms);
    Matrix a = Matrix::Zero(dim_, dim_);
    Vector b = Vector::Zero(dim_);
    for (int j = 0; j < size(); ++j) {
      const double p = std::exp(terms(j) - lse);
      if (p == 0.0) continue;
      a.noalias() += p * precisions_[j];
      b.noalias() += p * shifted_[j];
    }
    Step s;
    s.log_density = lse;
    s.gradient = b - a * x;
    s.next = a.llt().solve(b);
    return s;
  }

  Vector gradient(const Vector& x) const { return step(x).gradient; }

  /// Hessian of log f at x.
  Matrix hessian(const Vector& x) const {
    const Vector terms = component_terms(x);
    const double lse = log_sum_exp(terms);
    Matrix h = Matrix::Zero(dim_, dim_);
    Vector g = Vector::Zero(dim_);
    for (int j = 0; j < size(); ++j) {
      const double p = std::exp(terms(j) - lse);
      if (p == 0.0) continue;
      const Vector gj = precisions_[j] * (means_[j] - x);
      h.noalias() += p * (gj * gj.transpose() - precisions_[j]);
      g.noalias() += p * gj;
    }
    return h - g * g.transpose();
  }

  /// True unless x is a strict local maximum (up to round-off).
  bool needs_nudge(const Vector& x) const {
    const auto s = step(x);
    if (s.gradient.norm() > 1e-5) return true;
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(hessian(x), Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    return ev.maxCoeff() > -1e-9 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  }

 private:
  int dim_;
  std::vector<Matrix> precisions_;
  std::vector<Vector> shifted_;
  std::vector<Vector> means_;
  Vector log_consts_;
};

struct AscentResult {
  Vector location;
  int path_length = 0;
  bool converged = false;
  double log_density = 0.0;
};

/// MEM ascent from x0. Stops when ||x_{r+1} - x_r|| < rel_tol (1 + ||x_r||).
/// If `path_log_density` is given it receives log f along the path,
/// starting at x0.
inline AscentResult mem_ascend(const Vector& x0, const ModalMixture& mixture, double rel_tol = 1e-10,
                               int max_iter = 10000, std::vector<double>* path_log_density = nullptr) {
  if (x0.size() != mixture.dim()) throw UsageError("mem_ascend: dimension mismatch");
  AscentResult r;
  Vector x = x0;
  if (path_log_density) path_log_density->clear();
  for (int iter = 0; iter < max_iter; ++iter) {
    auto s = mixture.step(x);
    if (path_log_density) path_log_density->push_back(s.log_density);
    const double moved = (s.next - x).norm();
    const double scale = 1.0 + x.norm();
    x = std::move(s.next);
    r.path_length = iter + 1;
    if (moved < rel_tol * scale) {
      r.converged = true;
      break;
    }
  }
  r.location = x;
  r.log_density = mixture.log_density(x);
  if (path_log_density) path_log_density->push_back(r.log_density);
  return r;
}

inline AscentResult mem_ascend(const Vector& x0, const GaussianMixture& flat, double rel_tol = 1e-10,
                               int max_iter = 10000) {
  return mem_ascend(x0, ModalMixture(flat), rel_tol, max_iter);
}

/// Geometric mean of the per-coordinate sample standard deviations.
inline double data_scale(const Matrix& data) {
  if (data.rows() < 2) return 1.0;
  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Eigen::RowVectorXd sd =
      ((data.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(data.rows() - 1)).cwiseSqrt();
  double log_sum = 0.0;
  int positive = 0;
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (sd(j) > 0.0) {
      log_sum += std::log(sd(j));
      ++positive;
    }
  return positive == 0 ? 1.0 : std::exp(log_sum / positive);
}

inline double default_merge_tol(const Matrix& data) { return 1e-2 * data_scale(data); }

namespace detail {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Single-linkage groups of points within `tol`; returns a group id per
// point, ids numbered by first appearance.
inline std::vector<int> single_linkage(const std::vector<Vector>& points, double tol) {
  const std::size_t n = points.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return points[a](0) < points[b](0); });
  UnionFind uf(n);
  for (std::size_t a = 0; a < n; ++a) {
    const auto& pa = points[order[a]];
    for (std::size_t b = a + 1; b < n; ++b) {
      const auto& pb = points[order[b]];
      if (pb(0) - pa(0) > tol) break;
      if ((pa - pb).norm() <= tol) uf.unite(order[a], order[b]);
    }
  }
  std::vector<int> group(n, -1), id_of_root(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto root = uf.find(i);
    if (id_of_root[root] < 0) id_of_root[root] = next++;
    group[i] = id_of_root[root];
  }
  return group;
}

}  // namespace detail

/// A modal partition together with the ascent endpoint of every
/// observation, needed to label new points consistently.
struct ModalClustering {
  Partition partition;
  std::vector<Vector> endpoints;
  std::vector<bool> converged;
};

inline ModalClustering modal_cluster(const Matrix& data, const GaussianMixture& flat,
                                     const ModalOptions& options = {}) {
  if (data.cols() != flat.dim()) throw UsageError("find_partition: dimension mismatch");
  if (data.rows() == 0) throw UsageError("find_partition: empty data");
  const ModalMixture mixture(flat);
  const double scale = data_scale(data);
  const double merge_tol = options.merge_tol.value_or(1e-2 * scale);
  if (!(merge_tol > 0.0)) throw UsageError("find_partition: merge tolerance must be positive");

  const auto n = static_cast<std::size_t>(data.rows());
  std::vector<AscentResult> ascents(n);
  parallel_for(n, [&](std::size_t i) {
    auto r = mem_ascend(data.row(static_cast<Eigen::Index>(i)).transpose(), mixture, options.rel_tol,
                        options.max_iter);
    // Stalled on a ridge or saddle: nudge and retry.
    Rng rng(derive_seed(options.seed, {static_cast<std::uint64_t>(i)}));
    for (int attempt = 0; attempt < 3 && r.converged && mixture.needs_nudge(r.location); ++attempt) {
      Vector dir(flat.dim());
      for (auto& v : dir) v = rng.normal();
      const Vector start = r.location + (1e-4 * scale / dir.norm()) * dir;
      r = mem_ascend(start, mixture, options.rel_tol, options.max_iter);
    }
    ascents[i] = std::move(r);
  });

  ModalClustering out;
  Partition& p = out.partition;
  p.method_tag = "modal-em";
  p.merge_tol = merge_tol;
  out.endpoints.reserve(n);
  out.converged.reserve(n);
  std::vector<Vector> good;
  std::vector<std::size_t> good_index;
  for (std::size_t i = 0; i < n; ++i) {
    out.endpoints.push_back(ascents[i].location);
    out.converged.push_back(ascents[i].converged);
    if (ascents[i].converged) {
      good.push_back(ascents[i].location);
      good_index.push_back(i);
    }
  }
  if (good.empty()) throw PipelineError("no mode ascent converged");

  const auto group = detail::single_linkage(good, merge_tol);
  const int groups = *std::max_element(group.begin(), group.end()) + 1;
  std::vector<std::size_t> representative(groups, n);
  for (std::size_t g = 0; g < good.size(); ++g) {
    auto& rep = representative[group[g]];
    if (rep == n || ascents[good_index[g]].log_density > ascents[rep].log_density) rep = good_index[g];
  }
  std::vector<int> order(groups);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return ascents[representative[a]].log_density > ascents[representative[b]].log_density;
  });
  std::vector<int> label_of_group(groups);
  for (int rank = 0; rank < groups; ++rank) {
    label_of_group[order[rank]] = rank + 1;
    const auto& rep = ascents[representative[order[rank]]];
    p.modes.push_back(Mode{rep.location, rep.log_density, 0});
  }

  p.labels.assign(n, 0);
  for (std::size_t g = 0; g < good.size(); ++g) p.labels[good_index[g]] = label_of_group[group[g]];
  std::size_t stragglers = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ascents[i].converged) continue;
    ++stragglers;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < p.modes.size(); ++m) {
      const double dist = (p.modes[m].location - ascents[i].location).norm();
      if (dist < best) {
        best = dist;
        p.labels[i] = static_cast<int>(m) + 1;
      }
    }
  }
  if (stragglers > 0)
    p.warnings.push_back(std::to_string(stragglers) +
                         " ascent(s) hit max_iter; assigned to the nearest converged mode");
  for (int label : p.labels) ++p.modes[label - 1].basin_size;
  return out;
}

/// Clusters observations by the mode of the ensemble density they ascend to.
inline Partition find_partition(const Matrix& data, const EnsembleDensity& ens,
                                const ModalOptions& options = {}) {
  return modal_cluster(data, flatten_ensemble(ens), options).partition;
}

/// Everything needed to label points outside the training sample.
struct PartitionContext {
  GaussianMixture flat;
  ModalClustering clustering;
  ModalOptions options;

  static PartitionContext build(const Matrix& data, const EnsembleDensity& ens, ModalOptions options = {}) {
    auto flat = flatten_ensemble(ens);
    auto clustering = modal_cluster(data, flat, options);
    options.merge_tol = clustering.partition.merge_tol;
    return PartitionContext{std::move(flat), std::move(clustering), options};
  }
};

/// Labels new points by ascent. An endpoint within merge_tol of a known mode
/// or of a training endpoint takes that label; endpoints matching neither
/// are grouped by single linkage and get fresh labels after the known ones.
inline std::vector<int> predict_labels(const Matrix& points, const PartitionContext& ctx) {
  const ModalMixture mixture(ctx.flat);
  const auto& part = ctx.clustering.partition;
  const double tol = part.merge_tol;
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<AscentResult> ascents(n);
  parallel_for(n, [&](std::size_t i) {
    ascents[i] = mem_ascend(points.row(static_cast<Eigen::Index>(i)).transpose(), mixture,
                            ctx.options.rel_tol, ctx.options.max_iter);
  });

  std::vector<int> labels(n, 0);
  std::vector<Vector> unmatched;
  std::vector<std::size_t> unmatched_index;
  for (std::size_t i = 0; i < n; ++i) {
    const Vector& e = ascents[i].location;
    double best = std::numeric_limits<double>::infinity();
    int label = 0;
    for (std::size_t m = 0; m < part.modes.size(); ++m) {
      const double dist = (part.modes[m].location - e).norm();
      if (dist < best) {
        best = dist;
        label = static_cast<int>(m) + 1;
      }
    }
    for (std::size_t t = 0; t < ctx.clustering.endpoints.size(); ++t) {
      if (!ctx.clustering.converged[t]) continue;
      const double dist = (ctx.clustering.endpoints[t] - e).norm();
      if (dist < best) {
        best = dist;
        label = part.labels[t];
      }
    }
    if (best <= tol || !ascents[i].converged) {
      labels[i] = label;
    } else {
      unmatched.push_back(e);
      unmatched_index.push_back(i);
    }
  }
  if (!unmatched.empty()) {
    const auto group = detail::single_linkage(unmatched, tol);
    for (std::size_t u = 0; u < unmatched.size(); ++u) labels[unmatched_index[u]] = part.k_hat() + 1 + group[u];
  }
  return labels;
}

}  // namespace ensdens
