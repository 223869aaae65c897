#pragma once

// Penalized maximum-likelihood estimation of the ensemble weights alpha.
//
// All routines work on a fixed n x M matrix of log f_m(x_i); the candidate
// models are never refit here. The penalty is lambda * sum_m alpha_m nu_m.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ensdens/error.hpp"
#include "ensdens/gmm_fit.hpp"
#include "ensdens/mixture.hpp"
#include "ensdens/parallel.hpp"
#include "ensdens/rng.hpp"

namespace ensdens {

inline constexpr double kAlphaFloor = 1e-12;
inline constexpr double kDroppedThreshold = 1e-6;

struct PenaltySpec {
  double lambda = 0.0;
  std::vector<int> nu;

  void validate(Eigen::Index models) const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw UsageError("penalty: lambda must be finite and >= 0");
    if (static_cast<Eigen::Index>(nu.size()) != models)
      throw UsageError("penalty: nu length does not match model count");
    for (int v : nu)
      if (v < 1) throw UsageError("penalty: nu entries must be >= 1");
  }

  Vector nu_vector() const {
    Vector v(static_cast<Eigen::Index>(nu.size()));
    for (std::size_t m = 0; m < nu.size(); ++m) v(static_cast<Eigen::Index>(m)) = nu[m];
    return v;
  }
};

inline PenaltySpec penalty_for(const std::vector<GaussianMixture>& models, double lambda) {
  PenaltySpec p{lambda, {}};
  for (const auto& m : models) p.nu.push_back(m.nu());
  return p;
}

inline double lambda_aic() { return 1.0; }

inline double lambda_bic(std::size_t n) {
  if (n < 1) throw UsageError("lambda_bic: n must be positive");
  return 0.5 * std::log(static_cast<double>(n));
}

/// Clamps alpha to the floor and rescales the remaining mass so the vector
/// sums to one.
inline Vector floor_simplex(Vector alpha) {
  const auto m = alpha.size();
  std::vector<bool> pinned(m, false);
  for (Eigen::Index pass = 0; pass <= m; ++pass) {
    bool changed = false;
    for (Eigen::Index j = 0; j < m; ++j)
      if (!pinned[j] && !(alpha(j) >= kAlphaFloor)) {
        pinned[j] = true;
        changed = true;
      }
    double free_mass = 0.0;
    Eigen::Index n_pinned = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (pinned[j]) {
        alpha(j) = kAlphaFloor;
        ++n_pinned;
      } else {
        free_mass += alpha(j);
      }
    }
    if (n_pinned == m) return Vector::Constant(m, 1.0 / m);
    const double scale = (1.0 - n_pinned * kAlphaFloor) / free_mass;
    for (Eigen::Index j = 0; j < m; ++j)
      if (!pinned[j]) alpha(j) *= scale;
    if (!changed) break;
  }
  return alpha;
}

inline void check_alpha(const Vector& alpha, const Matrix& density) {
  if (alpha.size() != density.cols()) throw UsageError("alpha length does not match model count");
  if (!(alpha.array() >= 0.0).all() || std::abs(alpha.sum() - 1.0) > 1e-10)
    throw UsageError("alpha is not on the simplex");
}

/// sum_i log sum_m alpha_m exp(L_im).
inline double loglik_alpha(const Vector& alpha, const Matrix& density) {
  check_alpha(alpha, density);
  const Matrix terms = density.rowwise() + alpha.array().log().matrix().transpose();
  return row_log_sum_exp(terms).sum();
}

inline double penalized_loglik(const Vector& alpha, const Matrix& density, const PenaltySpec& penalty) {
  penalty.validate(density.cols());
  return loglik_alpha(alpha, density) - penalty.lambda * alpha.dot(penalty.nu_vector());
}

/// Posterior model memberships tau (n x M); rows sum to one.
inline Matrix e_step(const Vector& alpha, const Matrix& density) {
  check_alpha(alpha, density);
  const Matrix terms = density.rowwise() + alpha.array().log().matrix().transpose();
  const Vector lse = row_log_sum_exp(terms);
  return (terms.colwise() - lse).array().exp();
}

/// Expected complete-data penalized log-likelihood Q_p(alpha).
inline double q_penalized(const Vector& alpha, const Matrix& tau, const Matrix& density,
                          const PenaltySpec& penalty) {
  double q = 0.0;
  for (Eigen::Index m = 0; m < tau.cols(); ++m) {
    const double total = tau.col(m).sum();
    if (total > 0.0) q += total * std::log(alpha(m));
    for (Eigen::Index i = 0; i < tau.rows(); ++i)
      if (tau(i, m) > 0.0) q += tau(i, m) * density(i, m);
  }
  return q - penalty.lambda * alpha.dot(penalty.nu_vector());
}

struct MStepResult {
  Vector alpha;
  bool fallback = false;  // root search failed; alpha is the unpenalized update
};

/// Maximizes Q_p over the simplex. Stationarity gives
/// alpha_m = T_m / (c + lambda nu_m) with T_m = sum_i tau_mi, where c is the
/// unique root of sum_m alpha_m(c) = 1 on c > -lambda min nu. The root is
/// found by Newton's method started left of it, which is monotone for this
/// convex decreasing function.
inline MStepResult m_step_from_totals(const Vector& totals, const PenaltySpec& penalty) {
  const auto m = totals.size();
  const double n = totals.sum();
  const Vector nu = penalty.nu_vector();
  MStepResult out;
  out.alpha = totals / n;
  if (penalty.lambda == 0.0 || nu.maxCoeff() == nu.minCoeff() || m == 1) {
    out.alpha = floor_simplex(out.alpha);
    return out;
  }

  // Shift so the smallest active offset is zero: solve in t = c + a_min.
  double a_min = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < m; ++j)
    if (totals(j) > 0.0) a_min = std::min(a_min, penalty.lambda * nu(j));
  const Vector offset = (penalty.lambda * nu).array() - a_min;
  double t_lo = 0.0;
  for (Eigen::Index j = 0; j < m; ++j)
    if (totals(j) > 0.0 && offset(j) == 0.0) t_lo = std::max(t_lo, totals(j));

  auto excess = [&](double t, double& slope) {
    double sum = 0.0;
    slope = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (totals(j) <= 0.0) continue;
      const double denom = t + offset(j);
      sum += totals(j) / denom;
      slope -= totals(j) / (denom * denom);
    }
    return sum - 1.0;
  };

  double t = t_lo;
  bool converged = false;
  for (int iter = 0; iter < 200; ++iter) {
    double slope = 0.0;
    const double g = excess(t, slope);
    if (std::abs(g) <= 1e-15) {
      converged = true;
      break;
    }
    const double step = -g / slope;
    const double next = std::min(t + step, n);
    if (std::abs(next - t) <= 1e-15 * std::max(1.0, t)) {
      t = next;
      converged = true;
      break;
    }
    t = next;
  }
  if (!converged) {
    out.alpha = floor_simplex(totals / n);
    out.fallback = true;
    return out;
  }
  Vector alpha(m);
  for (Eigen::Index j = 0; j < m; ++j) alpha(j) = totals(j) > 0.0 ? totals(j) / (t + offset(j)) : 0.0;
  out.alpha = floor_simplex(alpha / alpha.sum());
  return out;
}

inline MStepResult m_step(const Matrix& tau, const Matrix& density, const PenaltySpec& penalty) {
  if (density.cols() != tau.cols() || density.rows() != tau.rows())
    throw UsageError("m_step: tau and density matrix shapes differ");
  penalty.validate(tau.cols());
  return m_step_from_totals(tau.colwise().sum().transpose(), penalty);
}

struct WeightFit {
  Vector alpha;
  double penalized_loglik = 0.0;
  double loglik = 0.0;
  int iterations = 0;
  double lambda = 0.0;
  bool converged = false;
  bool m_step_fallback = false;
  std::vector<double> trace;  // penalized log-likelihood per iterate

  std::vector<int> dropped_models() const {
    std::vector<int> out;
    for (Eigen::Index m = 0; m < alpha.size(); ++m)
      if (alpha(m) < kDroppedThreshold) out.push_back(static_cast<int>(m));
    return out;
  }
};

/// EM on the weights from `init` (uniform when empty) until the relative
/// change of the penalized log-likelihood drops below rel_tol.
inline WeightFit fit_weights(const Matrix& density, const PenaltySpec& penalty,
                             const std::optional<Vector>& init = std::nullopt,
                             double rel_tol = 1e-8, int max_iter = 1000) {
  const auto m = density.cols();
  if (density.rows() < 1 || m < 1) throw UsageError("fit_weights: empty density matrix");
  if (!density.allFinite()) throw UsageError("fit_weights: density matrix must be finite");
  penalty.validate(m);
  if (init) check_alpha(*init, density);
  WeightFit fit;
  fit.lambda = penalty.lambda;
  Vector alpha = init ? floor_simplex(*init) : Vector::Constant(m, 1.0 / m);

  // Row-shifted linear densities: s = F alpha is each row's mixture density
  // over exp(shift), and the model totals of the E-step are
  // alpha .* F^T (1 / s).
  const Vector shift = density.rowwise().maxCoeff();
  const Matrix scaled = (density.colwise() - shift).array().exp().matrix();
  const double shift_total = shift.sum();
  const Vector nu = penalty.nu_vector();
  Vector mix = scaled * alpha;
  auto objective = [&](const Vector& a, const Vector& s) {
    return s.array().log().sum() + shift_total - penalty.lambda * a.dot(nu);
  };

  double current = objective(alpha, mix);
  fit.trace.push_back(current);
  if (m == 1) {
    fit.alpha = alpha;
    fit.penalized_loglik = current;
    fit.loglik = loglik_alpha(alpha, density);
    fit.converged = true;
    return fit;
  }
  Vector best_alpha = alpha;
  double best = current;
  for (int iter = 1; iter <= max_iter; ++iter) {
    const Vector totals = alpha.cwiseProduct(scaled.transpose() * mix.cwiseInverse());
    auto step = m_step_from_totals(totals, penalty);
    fit.m_step_fallback = fit.m_step_fallback || step.fallback;
    alpha = std::move(step.alpha);
    mix.noalias() = scaled * alpha;
    const double next = objective(alpha, mix);
    fit.trace.push_back(next);
    fit.iterations = iter;
    if (next > best) {
      best = next;
      best_alpha = alpha;
    }
    const bool done = std::abs(next - current) <= rel_tol * std::max(1.0, std::abs(next));
    current = next;
    if (done) {
      fit.converged = true;
      break;
    }
  }
  fit.alpha = best_alpha;
  fit.penalized_loglik = penalized_loglik(best_alpha, density, penalty);
  fit.loglik = loglik_alpha(best_alpha, density);
  return fit;
}

struct CvConfig {
  int folds = 5;
  std::vector<double> lambda_grid;
  std::uint64_t seed = 0;
};

struct CvResult {
  double lambda = 0.0;
  std::vector<double> grid;
  std::vector<double> test_loglik;
  std::vector<std::string> warnings;
};

/// `count` log-spaced values on [lo, hi].
inline std::vector<double> log_spaced_grid(double lo, double hi, int count) {
  if (!(lo > 0.0) || !(hi > lo) || count < 2) throw UsageError("lambda grid: need 0 < min < max and count >= 2");
  std::vector<double> grid(count);
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < count; ++i) grid[i] = std::exp(a + (b - a) * i / (count - 1));
  return grid;
}

/// 25 log-spaced values from 0.01 to 4 log(n).
inline std::vector<double> default_lambda_grid(std::size_t n) {
  return log_spaced_grid(0.01, 4.0 * std::log(static_cast<double>(std::max<std::size_t>(n, 2))), 25);
}

/// Fold index per observation: seeded Fisher-Yates shuffle, then a
/// contiguous split with the remainder spread one per leading fold.
inline std::vector<int> fold_assignment(std::size_t n, int folds, std::uint64_t seed) {
  if (folds < 2 || static_cast<std::size_t>(folds) > n) throw UsageError("cv: need 2 <= folds <= n");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<int> fold(n);
  const std::size_t base = n / folds, extra = n % folds;
  std::size_t pos = 0;
  for (int v = 0; v < folds; ++v) {
    const std::size_t size = base + (static_cast<std::size_t>(v) < extra ? 1 : 0);
    for (std::size_t j = 0; j < size; ++j) fold[order[pos++]] = v;
  }
  return fold;
}

inline Matrix select_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

/// Cross-validated lambda on a fixed density matrix: for each lambda the
/// weights are refit on every training fold and scored by held-out
/// log-likelihood. Ties go to the larger lambda.
inline CvResult lambda_cv(const Matrix& density, const std::vector<int>& nu, const CvConfig& cv) {
  const auto n = static_cast<std::size_t>(density.rows());
  const auto m = density.cols();
  const std::vector<double> grid = cv.lambda_grid.empty() ? default_lambda_grid(n) : cv.lambda_grid;
  if (grid.empty()) throw UsageError("cv: empty lambda grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0)) throw UsageError("cv: lambda values must be >= 0");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw UsageError("cv: lambda grid must be strictly increasing");
  }
  const auto fold = fold_assignment(n, cv.folds, cv.seed);

  CvResult result;
  result.grid = grid;
  std::vector<Matrix> train(cv.folds), test(cv.folds);
  for (int v = 0; v < cv.folds; ++v) {
    std::vector<Eigen::Index> tr, te;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == v ? te : tr).push_back(static_cast<Eigen::Index>(i));
    if (static_cast<Eigen::Index>(te.size()) < m)
      result.warnings.push_back("fold " + std::to_string(v + 1) + ": fewer observations than ensemble models");
    train[v] = select_rows(density, tr);
    test[v] = select_rows(density, te);
  }

  const std::size_t jobs = grid.size() * static_cast<std::size_t>(cv.folds);
  std::vector<double> scores(jobs, 0.0);
  parallel_for(jobs, [&](std::size_t job) {
    const std::size_t l = job / cv.folds;
    const int v = static_cast<int>(job % cv.folds);
    const auto fit = fit_weights(train[v], PenaltySpec{grid[l], nu});
    scores[job] = loglik_alpha(fit.alpha, test[v]);
  });

  result.test_loglik.assign(grid.size(), 0.0);
  for (std::size_t job = 0; job < jobs; ++job) result.test_loglik[job / cv.folds] += scores[job];
  std::size_t best = 0;
  for (std::size_t l = 1; l < grid.size(); ++l)
    if (result.test_loglik[l] >= result.test_loglik[best]) best = l;
  result.lambda = grid[best];
  return result;
}

inline CvResult lambda_cv(const Matrix& data, const CandidatePool& pool, const CvConfig& cv) {
  const auto models = pool.ensemble_models();
  return lambda_cv(model_log_density_matrix(data, models), penalty_for(models, 0.0).nu, cv);
}

}  // namespace ensdens
