#pragma once

// Gaussian mixture densities and their convex ensembles.
//
// Every density is evaluated in the log domain; sums over components and
// over models go through log_sum_exp so that large samples and large
// ensembles never underflow.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ensdens/error.hpp"

namespace ensdens {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLog2Pi = 1.8378770664093454836;

inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw UsageError("log_sum_exp: empty input");
  const double top = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - top);
  return top + std::log(acc);
}

template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& values) {
  if (values.size() == 0) throw UsageError("log_sum_exp: empty input");
  const double top = values.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((values.derived().array() - top).exp().sum());
}

// Row-wise log-sum-exp of an n x K matrix.
inline Vector row_log_sum_exp(const Matrix& m) {
  Vector out(m.rows());
  const Vector top = m.rowwise().maxCoeff();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (!std::isfinite(top(i))) {
      out(i) = top(i);
      continue;
    }
    out(i) = top(i) + std::log((m.row(i).array() - top(i)).exp().sum());
  }
  return out;
}

// Volume / shape / orientation constraint codes.
enum class CovarianceStructure { EII, VII, EEI, VVI, EEE, VVV };

inline constexpr std::array<CovarianceStructure, 6> kAllStructures = {
    CovarianceStructure::EII, CovarianceStructure::VII,
    CovarianceStructure::EEI, CovarianceStructure::VVI,
    CovarianceStructure::EEE, CovarianceStructure::VVV};

inline std::string_view to_string(CovarianceStructure s) {
  switch (s) {
    case CovarianceStructure::EII: return "EII";
    case CovarianceStructure::VII: return "VII";
    case CovarianceStructure::EEI: return "EEI";
    case CovarianceStructure::VVI: return "VVI";
    case CovarianceStructure::EEE: return "EEE";
    case CovarianceStructure::VVV: return "VVV";
  }
  return "?";
}

inline CovarianceStructure parse_structure(std::string_view name) {
  for (auto s : kAllStructures)
    if (to_string(s) == name) return s;
  throw UsageError("unknown covariance structure '" + std::string(name) + "'");
}

/// Number of free covariance parameters for K components in dimension d.
inline int covariance_parameter_count(CovarianceStructure s, int d, int k) {
  const int full = d * (d + 1) / 2;
  switch (s) {
    case CovarianceStructure::EII: return 1;
    case CovarianceStructure::VII: return k;
    case CovarianceStructure::EEI: return d;
    case CovarianceStructure::VVI: return k * d;
    case CovarianceStructure::EEE: return full;
    case CovarianceStructure::VVV: return k * full;
  }
  return 0;
}

/// Mixing proportions + means + covariance parameters.
inline int free_parameter_count(CovarianceStructure s, int d, int k) {
  return (k - 1) + k * d + covariance_parameter_count(s, d, k);
}

/// One multivariate normal with a cached Cholesky factor.
class GaussianComponent {
 public:
  GaussianComponent(Vector mean, Matrix covariance)
      : mean_(std::move(mean)), covariance_(std::move(covariance)) {
    const auto d = mean_.size();
    if (d == 0) throw UsageError("GaussianComponent: zero dimension");
    if (covariance_.rows() != d || covariance_.cols() != d)
      throw UsageError("GaussianComponent: covariance shape does not match mean");
    if (!mean_.allFinite() || !covariance_.allFinite())
      throw UsageError("GaussianComponent: non-finite parameters");
    const double scale = covariance_.cwiseAbs().maxCoeff();
    if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw UsageError("GaussianComponent: covariance is not symmetric");
    Eigen::LLT<Matrix> llt(covariance_);
    if (llt.info() != Eigen::Success)
      throw UsageError("GaussianComponent: covariance is not positive definite");
    chol_ = llt.matrixL();
    if ((chol_.diagonal().array() <= 0.0).any())
      throw UsageError("GaussianComponent: covariance is not positive definite");
    log_det_ = 2.0 * chol_.diagonal().array().log().sum();
  }

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return covariance_; }
  /// Lower-triangular L with covariance = L L^T.
  const Matrix& cholesky() const { return chol_; }
  double log_det() const { return log_det_; }

  double log_density(const Eigen::Ref<const Vector>& x) const {
    if (x.size() != mean_.size())
      throw UsageError("gaussian_log_density: dimension mismatch");
    const Vector z = chol_.triangularView<Eigen::Lower>().solve(x - mean_);
    return -0.5 * (dim() * kLog2Pi + log_det_ + z.squaredNorm());
  }

  /// Log density of every row of `rows` (n x d).
  Vector log_density_rows(const Matrix& rows) const {
    if (rows.cols() != mean_.size())
      throw UsageError("gaussian_log_density: dimension mismatch");
    Matrix centered = (rows.rowwise() - mean_.transpose()).transpose();
    chol_.triangularView<Eigen::Lower>().solveInPlace(centered);
    const double base = dim() * kLog2Pi + log_det_;
    return (-0.5 * (centered.colwise().squaredNorm().array() + base)).transpose();
  }

 private:
  Vector mean_;
  Matrix covariance_;
  Matrix chol_;
  double log_det_ = 0.0;
};

inline double gaussian_log_density(const Eigen::Ref<const Vector>& x,
                                   const GaussianComponent& comp) {
  return comp.log_density(x);
}

/// A finite Gaussian mixture. `nu` is the free-parameter count implied by
/// the structure tag; `loglik` and `bic` are NaN for models not produced by
/// a fit.
class GaussianMixture {
 public:
  GaussianMixture(std::vector<GaussianComponent> components, Vector weights,
                  CovarianceStructure structure,
                  double loglik = std::numeric_limits<double>::quiet_NaN(),
                  double bic = std::numeric_limits<double>::quiet_NaN())
      : components_(std::move(components)),
        weights_(std::move(weights)),
        structure_(structure),
        loglik_(loglik),
        bic_(bic) {
    if (components_.empty()) throw UsageError("GaussianMixture: no components");
    if (weights_.size() != static_cast<Eigen::Index>(components_.size()))
      throw UsageError("GaussianMixture: weight count does not match components");
    const int d = components_.front().dim();
    for (const auto& c : components_)
      if (c.dim() != d) throw UsageError("GaussianMixture: components differ in dimension");
    if (!(weights_.array() > 0.0).all())
      throw UsageError("GaussianMixture: weights must be strictly positive");
    if (std::abs(weights_.sum() - 1.0) > 1e-10)
      throw UsageError("GaussianMixture: weights must sum to one");
    log_weights_ = weights_.array().log();
    nu_ = free_parameter_count(structure_, d, size());
  }

  int size() const { return static_cast<int>(components_.size()); }
  int dim() const { return components_.front().dim(); }
  const std::vector<GaussianComponent>& components() const { return components_; }
  const GaussianComponent& component(int k) const { return components_.at(k); }
  const Vector& weights() const { return weights_; }
  const Vector& log_weights() const { return log_weights_; }
  CovarianceStructure structure() const { return structure_; }
  int nu() const { return nu_; }
  double loglik() const { return loglik_; }
  double bic() const { return bic_; }

  /// n x K matrix of log pi_k + log phi_k(x_i).
  Matrix weighted_log_densities(const Matrix& rows) const {
    if (rows.cols() != dim()) throw UsageError("mixture_log_density: dimension mismatch");
    Matrix out(rows.rows(), size());
    for (int k = 0; k < size(); ++k)
      out.col(k) = components_[k].log_density_rows(rows).array() + log_weights_(k);
    return out;
  }

  Vector log_density_rows(const Matrix& rows) const {
    return row_log_sum_exp(weighted_log_densities(rows));
  }

 private:
  std::vector<GaussianComponent> components_;
  Vector weights_;
  Vector log_weights_;
  CovarianceStructure structure_;
  int nu_ = 0;
  double loglik_;
  double bic_;
};

inline double mixture_log_density(const Eigen::Ref<const Vector>& x,
                                  const GaussianMixture& model) {
  if (x.size() != model.dim()) throw UsageError("mixture_log_density: dimension mismatch");
  Vector terms(model.size());
  for (int k = 0; k < model.size(); ++k)
    terms(k) = model.log_weights()(k) + model.component(k).log_density(x);
  return log_sum_exp(terms);
}

/// Convex combination sum_m alpha_m f_m of fitted mixtures.
class EnsembleDensity {
 public:
  EnsembleDensity(std::vector<GaussianMixture> models, Vector alpha)
      : models_(std::move(models)), alpha_(std::move(alpha)) {
    if (models_.empty()) throw UsageError("EnsembleDensity: no models");
    if (alpha_.size() != static_cast<Eigen::Index>(models_.size()))
      throw UsageError("EnsembleDensity: alpha length does not match model count");
    const int d = models_.front().dim();
    for (const auto& m : models_)
      if (m.dim() != d) throw UsageError("EnsembleDensity: models differ in dimension");
    if (!(alpha_.array() > 0.0).all())
      throw UsageError("EnsembleDensity: alpha must be strictly positive");
    if (std::abs(alpha_.sum() - 1.0) > 1e-10)
      throw UsageError("EnsembleDensity: alpha must sum to one");
    log_alpha_ = alpha_.array().log();
  }

  int size() const { return static_cast<int>(models_.size()); }
  int dim() const { return models_.front().dim(); }
  const std::vector<GaussianMixture>& models() const { return models_; }
  const Vector& alpha() const { return alpha_; }
  const Vector& log_alpha() const { return log_alpha_; }

  Vector log_density_rows(const Matrix& rows) const {
    Matrix terms(rows.rows(), size());
    for (int m = 0; m < size(); ++m)
      terms.col(m) = models_[m].log_density_rows(rows).array() + log_alpha_(m);
    return row_log_sum_exp(terms);
  }

 private:
  std::vector<GaussianMixture> models_;
  Vector alpha_;
  Vector log_alpha_;
};

inline double ensemble_log_density(const Eigen::Ref<const Vector>& x,
                                   const EnsembleDensity& ens) {
  if (x.size() != ens.dim()) throw UsageError("ensemble_log_density: dimension mismatch");
  Vector terms(ens.size());
  for (int m = 0; m < ens.size(); ++m)
    terms(m) = ens.log_alpha()(m) + mixture_log_density(x, ens.models()[m]);
  return log_sum_exp(terms);
}

/// The ensemble as one mixture with sum_m K_m components; component (m, k)
/// carries weight alpha_m * pi_mk. Tagged VVV since the components are
/// unconstrained relative to one another.
inline GaussianMixture flatten_ensemble(const EnsembleDensity& ens) {
  if (ens.size() == 1) return ens.models().front();
  std::vector<GaussianComponent> comps;
  std::vector<double> w;
  for (int m = 0; m < ens.size(); ++m) {
    const auto& model = ens.models()[m];
    for (int k = 0; k < model.size(); ++k) {
      comps.push_back(model.component(k));
      w.push_back(ens.alpha()(m) * model.weights()(k));
    }
  }
  Vector weights = Eigen::Map<Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  return GaussianMixture(std::move(comps), std::move(weights), CovarianceStructure::VVV);
}

/// n x M matrix of log f_m(x_i) for each model in `models`.
inline Matrix model_log_density_matrix(const Matrix& rows,
                                       const std::vector<GaussianMixture>& models) {
  Matrix out(rows.rows(), static_cast<Eigen::Index>(models.size()));
  for (std::size_t m = 0; m < models.size(); ++m)
    out.col(static_cast<Eigen::Index>(m)) = models[m].log_density_rows(rows);
  return out;
}

}  // namespace ensdens
