#pragma once

// EM fitting of constrained Gaussian mixtures over a (K, structure) grid,
// BIC ranking, and selection of the candidate pool.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ensdens/error.hpp"
#include "ensdens/mixture.hpp"
#include "ensdens/parallel.hpp"
#include "ensdens/partition.hpp"
#include "ensdens/rng.hpp"

namespace ensdens {

struct FitConfig {
  int k_min = 1;
  int k_max = 9;
  std::vector<CovarianceStructure> structures{kAllStructures.begin(), kAllStructures.end()};
  int max_iter = 500;
  double rel_tol = 1e-8;
  int n_init = 5;
  std::uint64_t seed = 0;
  int ensemble_size = 30;

  void validate() const {
    if (k_min < 1 || k_max < k_min) throw UsageError("FitConfig: empty K range");
    if (structures.empty()) throw UsageError("FitConfig: no covariance structures");
    if (max_iter < 1) throw UsageError("FitConfig: max_iter must be positive");
    if (!(rel_tol > 0.0)) throw UsageError("FitConfig: rel_tol must be positive");
    if (n_init < 1) throw UsageError("FitConfig: n_init must be positive");
    if (ensemble_size < 1) throw UsageError("FitConfig: ensemble size must be positive");
  }
};

struct CellReport {
  int k = 0;
  CovarianceStructure structure = CovarianceStructure::VVV;
  bool ok = false;
  double loglik = std::numeric_limits<double>::quiet_NaN();
  double bic = std::numeric_limits<double>::quiet_NaN();
  int nu = 0;
  std::string message;
};

/// Fitted models ranked by descending BIC. Only the first `ensemble_size`
/// enter an ensemble.
struct CandidatePool {
  std::vector<GaussianMixture> models;
  int ensemble_size = 0;
  std::vector<CellReport> cells;

  std::vector<GaussianMixture> ensemble_models() const {
    return {models.begin(), models.begin() + std::min<std::size_t>(ensemble_size, models.size())};
  }
};

/// mclust sign convention: larger is better.
inline double bic(double loglik, int nu, std::size_t n) {
  return 2.0 * loglik - nu * std::log(static_cast<double>(n));
}

inline double bic(const GaussianMixture& model, std::size_t n) {
  return bic(model.loglik(), model.nu(), n);
}

namespace detail {

inline void check_data(const Matrix& data) {
  if (data.rows() == 0 || data.cols() == 0) throw UsageError("empty data matrix");
  if (!data.allFinite()) throw UsageError("data contains non-finite values");
}

struct EmParams {
  Vector weights;
  Matrix means;  // K x d
  std::vector<Matrix> covariances;
};

// Constrained ML covariance update from the weighted scatter matrices.
inline std::vector<Matrix> constrained_covariances(CovarianceStructure s,
                                                   const std::vector<Matrix>& scatter,
                                                   const Vector& nk, double n) {
  const auto k = static_cast<int>(scatter.size());
  const auto d = scatter.front().rows();
  const Matrix eye = Matrix::Identity(d, d);
  std::vector<Matrix> out(k);
  Matrix pooled = Matrix::Zero(d, d);
  for (const auto& w : scatter) pooled += w;

  switch (s) {
    case CovarianceStructure::EII: {
      const double var = pooled.trace() / (n * d);
      for (auto& c : out) c = var * eye;
      break;
    }
    case CovarianceStructure::VII:
      for (int j = 0; j < k; ++j) out[j] = (scatter[j].trace() / (nk(j) * d)) * eye;
      break;
    case CovarianceStructure::EEI: {
      const Matrix diag = (pooled.diagonal() / n).asDiagonal();
      for (auto& c : out) c = diag;
      break;
    }
    case CovarianceStructure::VVI:
      for (int j = 0; j < k; ++j) out[j] = (scatter[j].diagonal() / nk(j)).asDiagonal();
      break;
    case CovarianceStructure::EEE: {
      Matrix common = pooled / n;
      common = 0.5 * (common + common.transpose());
      for (auto& c : out) c = common;
      break;
    }
    case CovarianceStructure::VVV:
      for (int j = 0; j < k; ++j) {
        out[j] = scatter[j] / nk(j);
        out[j] = 0.5 * (out[j] + out[j].transpose());
      }
      break;
  }
  return out;
}

inline EmParams m_step(const Matrix& data, const Matrix& resp, CovarianceStructure s) {
  const auto n = static_cast<double>(data.rows());
  const auto k = resp.cols();
  EmParams p;
  const Vector nk = resp.colwise().sum().transpose();
  for (Eigen::Index j = 0; j < k; ++j)
    if (!(nk(j) >= 0.5))  // pi_k < 1 / (2n)
      throw FitFailure("degenerate component (weight below 1/(2n))");
  p.weights = nk / n;
  p.means = (resp.transpose() * data).array().colwise() / nk.array();
  std::vector<Matrix> scatter(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Matrix centered = data.rowwise() - p.means.row(j);
    scatter[j] = (centered.array().colwise() * resp.col(j).array()).matrix().transpose() * centered;
  }
  p.covariances = constrained_covariances(s, scatter, nk, n);
  return p;
}

// True when the Cholesky factor exists and the squared ratio of its extreme
// diagonal entries (a cheap reciprocal-condition estimate) exceeds 1e-12.
inline bool well_conditioned(const Matrix& cov) {
  if (!cov.allFinite()) return false;
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) return false;
  const Vector diag = Matrix(llt.matrixL()).diagonal();
  if (diag.minCoeff() <= 0.0) return false;
  const double ratio = diag.minCoeff() / diag.maxCoeff();
  return ratio * ratio > 1e-12;
}

// Builds components, spending the run's single regularization retry on the
// first ill-conditioned covariance set.
inline std::vector<GaussianComponent> make_components(const EmParams& p, int& retries_left) {
  const auto d = p.means.cols();
  std::vector<Matrix> covs = p.covariances;
  bool failed = false;
  for (const auto& c : covs) failed = failed || !well_conditioned(c);
  if (failed) {
    if (retries_left <= 0) throw FitFailure("covariance factorization failed");
    --retries_left;
    for (auto& c : covs) {
      if (well_conditioned(c)) continue;
      c.diagonal().array() += 1e-8 * c.trace() / static_cast<double>(d);
      if (!well_conditioned(c)) throw FitFailure("covariance factorization failed after regularization");
    }
  }
  std::vector<GaussianComponent> comps;
  comps.reserve(covs.size());
  for (std::size_t j = 0; j < covs.size(); ++j)
    comps.emplace_back(p.means.row(static_cast<Eigen::Index>(j)).transpose(), std::move(covs[j]));
  return comps;
}

// k-means++ seeding followed by 10 Lloyd iterations; returns hard labels.
inline std::vector<int> kmeans_labels(const Matrix& data, int k, Rng& rng) {
  const auto n = data.rows();
  std::vector<int> labels(n, 0);
  if (k == 1) return labels;
  Matrix centers(k, data.cols());
  centers.row(0) = data.row(static_cast<Eigen::Index>(rng.below(n)));
  Vector dist2 = (data.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = dist2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= dist2(i);
        if (target < 0.0 && dist2(i) > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(n));
    }
    centers.row(c) = data.row(pick);
    dist2 = dist2.cwiseMin((data.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  for (int iter = 0; iter < 10; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double dd = (data.row(i) - centers.row(c)).squaredNorm();
        if (dd < best) {
          best = dd;
          labels[i] = c;
        }
      }
    }
    Matrix sums = Matrix::Zero(k, data.cols());
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[i]) += data.row(i);
      ++counts[labels[i]];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
  }
  return labels;
}

struct EmRun {
  std::optional<GaussianMixture> model;
  std::vector<double> trace;
};

inline EmRun run_em(const Matrix& data, int k, CovarianceStructure s, const FitConfig& cfg,
                    std::uint64_t seed) {
  const auto n = data.rows();
  Rng rng(seed);
  const auto labels = kmeans_labels(data, k, rng);
  Matrix resp = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) resp(i, labels[i]) = 1.0;

  EmRun run;
  EmParams params = m_step(data, resp, s);
  int retries_left = 1;
  double previous = -std::numeric_limits<double>::infinity();
  for (int iter = 0;; ++iter) {
    auto comps = make_components(params, retries_left);
    Matrix logdens(n, k);
    for (int j = 0; j < k; ++j)
      logdens.col(j) = comps[j].log_density_rows(data).array() + std::log(params.weights(j));
    const Vector row_lse = row_log_sum_exp(logdens);
    const double loglik = row_lse.sum();
    if (!std::isfinite(loglik)) throw FitFailure("non-finite log-likelihood");
    run.trace.push_back(loglik);
    const bool converged = iter > 0 && std::abs(loglik - previous) <= cfg.rel_tol * std::abs(loglik);
    if (converged || iter + 1 >= cfg.max_iter) {
      const int nu = free_parameter_count(s, static_cast<int>(data.cols()), k);
      run.model.emplace(std::move(comps), params.weights, s, loglik,
                        bic(loglik, nu, static_cast<std::size_t>(n)));
      return run;
    }
    previous = loglik;
    resp = (logdens.colwise() - row_lse).array().exp();
    params = m_step(data, resp, s);
  }
}

}  // namespace detail

/// Seed of the (K, structure) grid cell.
inline std::uint64_t cell_seed(std::uint64_t seed, int k, CovarianceStructure s) {
  return derive_seed(seed, {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(s)});
}

/// Best-log-likelihood EM fit over `config.n_init` k-means++ starts. Throws
/// FitFailure when every start degenerates. If `loglik_trace` is given it
/// receives the per-iteration log-likelihood of the winning start.
inline GaussianMixture em_fit(const Matrix& data, int k, CovarianceStructure structure,
                              const FitConfig& config, std::vector<double>* loglik_trace = nullptr) {
  detail::check_data(data);
  if (k < 1) throw UsageError("em_fit: K must be positive");
  if (data.rows() <= k) throw UsageError("em_fit: need more observations than components");
  config.validate();

  const std::uint64_t base = cell_seed(config.seed, k, structure);
  // Every start is identical when K = 1.
  const int starts = k == 1 ? 1 : config.n_init;
  std::optional<detail::EmRun> best;
  std::string last_error = "no starts attempted";
  for (int r = 0; r < starts; ++r) {
    try {
      auto run = detail::run_em(data, k, structure, config,
                                derive_seed(base, {static_cast<std::uint64_t>(r)}));
      if (!best || run.model->loglik() > best->model->loglik()) best = std::move(run);
    } catch (const FitFailure& e) {
      last_error = e.what();
    }
  }
  if (!best) throw FitFailure(last_error);
  if (loglik_trace) *loglik_trace = best->trace;
  return std::move(*best->model);
}

/// Stable sort by descending BIC; ties keep their incoming order.
inline void rank_by_bic(std::vector<GaussianMixture>& models) {
  std::stable_sort(models.begin(), models.end(),
                   [](const GaussianMixture& a, const GaussianMixture& b) { return a.bic() > b.bic(); });
}

/// Fits every (K, structure) cell, K-major in the order of config.structures,
/// drops failures, ranks survivors by BIC and keeps the best
/// config.ensemble_size of them.
inline CandidatePool fit_grid(const Matrix& data, const FitConfig& config) {
  detail::check_data(data);
  config.validate();
  std::vector<CellReport> cells;
  for (int k = config.k_min; k <= config.k_max; ++k)
    for (auto s : config.structures) cells.push_back(CellReport{k, s});

  std::vector<std::optional<GaussianMixture>> fitted(cells.size());
  parallel_for(cells.size(), [&](std::size_t i) {
    auto& cell = cells[i];
    cell.nu = free_parameter_count(cell.structure, static_cast<int>(data.cols()), cell.k);
    if (data.rows() <= cell.k) {
      cell.message = "fewer observations than components";
      return;
    }
    try {
      fitted[i].emplace(em_fit(data, cell.k, cell.structure, config));
      cell.ok = true;
      cell.loglik = fitted[i]->loglik();
      cell.bic = fitted[i]->bic();
    } catch (const FitFailure& e) {
      cell.message = e.what();
    }
  });

  CandidatePool pool;
  for (auto& f : fitted)
    if (f) pool.models.push_back(std::move(*f));
  if (pool.models.empty()) throw PipelineError("every grid cell failed to fit");
  rank_by_bic(pool.models);
  if (pool.models.size() > static_cast<std::size_t>(config.ensemble_size))
    pool.models.erase(pool.models.begin() + config.ensemble_size, pool.models.end());
  pool.ensemble_size = static_cast<int>(pool.models.size());
  pool.cells = std::move(cells);
  return pool;
}

/// Keeps the models whose BIC lies within `width` of the best one.
inline CandidatePool occam_window(const CandidatePool& pool, double width = 10.0) {
  if (pool.models.empty()) throw UsageError("occam_window: empty pool");
  CandidatePool out;
  out.cells = pool.cells;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& m : pool.models) best = std::max(best, m.bic());
  for (const auto& m : pool.models)
    if (std::abs(best - m.bic()) <= width) out.models.push_back(m);
  out.ensemble_size = std::min<int>(pool.ensemble_size, static_cast<int>(out.models.size()));
  return out;
}

/// MAP classification. Labels are renumbered over non-empty components in
/// component order; each mode records its component mean.
inline Partition map_classify(const Matrix& data, const GaussianMixture& model) {
  if (data.cols() != model.dim()) throw UsageError("map_classify: dimension mismatch");
  const Matrix logdens = model.weighted_log_densities(data);
  std::vector<int> component(data.rows());
  std::vector<int> counts(model.size(), 0);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    int best = 0;
    for (int k = 1; k < model.size(); ++k)
      if (logdens(i, k) > logdens(i, best)) best = k;
    component[i] = best;
    ++counts[best];
  }
  Partition p;
  p.method_tag = "map";
  std::vector<int> relabel(model.size(), 0);
  for (int k = 0; k < model.size(); ++k) {
    if (counts[k] == 0) continue;
    const Vector& mu = model.component(k).mean();
    p.modes.push_back(Mode{mu, mixture_log_density(mu, model), counts[k]});
    relabel[k] = static_cast<int>(p.modes.size());
  }
  p.labels.reserve(component.size());
  for (int c : component) p.labels.push_back(relabel[c]);
  return p;
}

}  // namespace ensdens
