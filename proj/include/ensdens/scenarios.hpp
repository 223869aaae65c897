#pragma once

// Generative test densities: bivariate Gaussian and skew-normal mixtures.
//
// Skew-normal components use the additive form
//   y = mu + delta |Z0| + Z,   Z0 ~ N(0, 1),  Z ~ N(0, Sigma),
// whose density is
//   2 phi(y; mu, Sigma + delta delta^T) Phi(delta^T B^-1 (y - mu) / sqrt(1 - delta^T B^-1 delta)),
// with B = Sigma + delta delta^T. Its mean is mu + sqrt(2/pi) delta and
// its covariance Sigma + (1 - 2/pi) delta delta^T.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "ensdens/error.hpp"
#include "ensdens/mixture.hpp"
#include "ensdens/rng.hpp"

namespace ensdens {

struct GaussianSpec {
  Vector mean;
  Matrix covariance;
};

struct SkewNormalComponent {
  Vector location;  // mu
  Matrix scale;     // Sigma
  Vector slant;     // delta
};

using ScenarioComponent = std::variant<GaussianSpec, SkewNormalComponent>;

struct ScenarioSpec {
  std::string id;
  std::vector<double> weights;
  std::vector<ScenarioComponent> components;

  int dim() const {
    return std::visit([](const auto& c) -> int {
      if constexpr (std::is_same_v<std::decay_t<decltype(c)>, GaussianSpec>)
        return static_cast<int>(c.mean.size());
      else
        return static_cast<int>(c.location.size());
    }, components.front());
  }
};

/// log Phi(z), accurate in the far left tail.
inline double log_normal_cdf(double z) {
  if (z > -30.0) return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
  const double z2 = z * z;
  return -0.5 * z2 - std::log(-z) - 0.5 * kLog2Pi + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

namespace detail {

inline Vector vec2(double a, double b) { return (Vector(2) << a, b).finished(); }

inline Matrix mat2(double a, double b, double c, double d) {
  return (Matrix(2, 2) << a, b, c, d).finished();
}

// Symmetric-part covariance plus the slant outer product.
inline Matrix skew_total_scale(const SkewNormalComponent& c) { return c.scale + c.slant * c.slant.transpose(); }

}  // namespace detail

inline void validate_scenario(const ScenarioSpec& spec) {
  if (spec.components.empty() || spec.components.size() != spec.weights.size())
    throw UsageError("scenario " + spec.id + ": weights and components differ in length");
  double total = 0.0;
  for (double w : spec.weights) {
    if (!(w > 0.0)) throw UsageError("scenario " + spec.id + ": weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw UsageError("scenario " + spec.id + ": weights must sum to one");
  for (const auto& comp : spec.components) {
    if (const auto* g = std::get_if<GaussianSpec>(&comp)) {
      GaussianComponent check(g->mean, g->covariance);
    } else {
      const auto& s = std::get<SkewNormalComponent>(comp);
      GaussianComponent check(s.location, s.scale);
      const Matrix total_scale = detail::skew_total_scale(s);
      const double q = s.slant.dot(total_scale.llt().solve(s.slant));
      if (!(q < 1.0)) throw UsageError("scenario " + spec.id + ": inadmissible slant");
    }
  }
}

/// The five bivariate simulation densities, parameters as tabulated.
inline ScenarioSpec scenario(const std::string& id) {
  using detail::mat2;
  using detail::vec2;
  ScenarioSpec s;
  s.id = id;
  if (id == "M1") {
    s.weights = {1.0};
    s.components = {GaussianSpec{vec2(0, 0), mat2(1.25, 0.75, 0.75, 1.25)}};
  } else if (id == "M2") {
    s.weights = {0.5, 0.5};
    s.components = {GaussianSpec{vec2(-0.53, -0.53), mat2(0.68, -0.41, -0.41, 0.68)},
                    GaussianSpec{vec2(0.53, 0.53), mat2(0.68, -0.41, -0.41, 0.68)}};
  } else if (id == "M3") {
    s.weights = {0.4, 0.4, 0.2};
    s.components = {GaussianSpec{vec2(-0.85, -0.85), mat2(0.58, -0.35, -0.35, 0.58)},
                    GaussianSpec{vec2(0.85, 0.85), mat2(0.58, -0.35, -0.35, 0.58)},
                    GaussianSpec{vec2(0, 0), mat2(0.16, -0.09, -0.09, 0.16)}};
  } else if (id == "M4") {
    s.weights = {1.0};
    s.components = {SkewNormalComponent{vec2(0, 0), mat2(0.8, -0.4, -0.4, 0.8), vec2(3, 3)}};
  } else if (id == "M5") {
    s.weights = {0.5, 0.5};
    s.components = {SkewNormalComponent{vec2(1, 1), mat2(0.8, -0.4, -0.4, 0.8), vec2(3, 3)},
                    SkewNormalComponent{vec2(-1, -1), mat2(0.8, -0.4, -0.4, 0.8), vec2(-3, -3)}};
  } else {
    throw UsageError("unknown scenario '" + id + "' (expected M1..M5)");
  }
  validate_scenario(s);
  return s;
}

inline const std::vector<std::string>& scenario_ids() {
  static const std::vector<std::string> ids{"M1", "M2", "M3", "M4", "M5"};
  return ids;
}

/// The scenario as a GaussianMixture; only valid for all-Gaussian specs.
inline GaussianMixture as_gaussian_mixture(const ScenarioSpec& spec) {
  std::vector<GaussianComponent> comps;
  for (const auto& c : spec.components) {
    const auto* g = std::get_if<GaussianSpec>(&c);
    if (!g) throw UsageError("scenario " + spec.id + " is not a Gaussian mixture");
    comps.emplace_back(g->mean, g->covariance);
  }
  Vector w = Eigen::Map<const Vector>(spec.weights.data(), static_cast<Eigen::Index>(spec.weights.size()));
  return GaussianMixture(std::move(comps), std::move(w), CovarianceStructure::VVV);
}

inline double skew_normal_log_density(const Vector& y, const SkewNormalComponent& c) {
  const Matrix total_scale = detail::skew_total_scale(c);
  const GaussianComponent base(c.location, total_scale);
  const Eigen::LLT<Matrix> llt(total_scale);
  const Vector solved = llt.solve(c.slant);
  const double q = c.slant.dot(solved);
  const double arg = solved.dot(y - c.location) / std::sqrt(1.0 - q);
  return std::numbers::ln2 + base.log_density(y) + log_normal_cdf(arg);
}

inline Vector true_log_density_rows(const ScenarioSpec& spec, const Matrix& rows) {
  if (rows.cols() != spec.dim()) throw UsageError("true_log_density: dimension mismatch");
  Matrix terms(rows.rows(), static_cast<Eigen::Index>(spec.components.size()));
  for (std::size_t k = 0; k < spec.components.size(); ++k) {
    const double lw = std::log(spec.weights[k]);
    const auto col = static_cast<Eigen::Index>(k);
    if (const auto* g = std::get_if<GaussianSpec>(&spec.components[k])) {
      terms.col(col) = GaussianComponent(g->mean, g->covariance).log_density_rows(rows).array() + lw;
    } else {
      const auto& s = std::get<SkewNormalComponent>(spec.components[k]);
      const Matrix total_scale = detail::skew_total_scale(s);
      const Vector solved = Eigen::LLT<Matrix>(total_scale).solve(s.slant);
      const double norm = std::sqrt(1.0 - s.slant.dot(solved));
      const Vector base = GaussianComponent(s.location, total_scale).log_density_rows(rows);
      const Vector args = ((rows.rowwise() - s.location.transpose()) * solved) / norm;
      for (Eigen::Index i = 0; i < rows.rows(); ++i)
        terms(i, col) = lw + std::numbers::ln2 + base(i) + log_normal_cdf(args(i));
    }
  }
  return row_log_sum_exp(terms);
}

inline double true_log_density(const ScenarioSpec& spec, const Vector& x) {
  return true_log_density_rows(spec, x.transpose())(0);
}

struct Moments {
  Vector mean;
  Matrix covariance;
};

inline Moments component_moments(const ScenarioComponent& comp) {
  if (const auto* g = std::get_if<GaussianSpec>(&comp)) return {g->mean, g->covariance};
  const auto& s = std::get<SkewNormalComponent>(comp);
  const double b = std::sqrt(2.0 / std::numbers::pi);
  return {s.location + b * s.slant, s.scale + (1.0 - b * b) * s.slant * s.slant.transpose()};
}

/// Mean and covariance of the scenario density.
inline Moments scenario_moments(const ScenarioSpec& spec) {
  const int d = spec.dim();
  Moments out{Vector::Zero(d), Matrix::Zero(d, d)};
  for (std::size_t k = 0; k < spec.components.size(); ++k) {
    const auto m = component_moments(spec.components[k]);
    out.mean += spec.weights[k] * m.mean;
    out.covariance += spec.weights[k] * (m.covariance + m.mean * m.mean.transpose());
  }
  out.covariance -= out.mean * out.mean.transpose();
  return out;
}

struct Sample {
  Matrix data;
  std::vector<int> labels;  // 1-based generating component
};

/// Draws n observations: component by weight, then a Cholesky-transformed
/// normal, or for skew-normal components the reflected joint normal draw.
inline Sample sample_scenario(const ScenarioSpec& spec, std::size_t n, std::uint64_t seed) {
  validate_scenario(spec);
  const int d = spec.dim();
  std::vector<Matrix> chol;
  for (const auto& c : spec.components) {
    const Matrix& cov = std::holds_alternative<GaussianSpec>(c) ? std::get<GaussianSpec>(c).covariance
                                                                 : std::get<SkewNormalComponent>(c).scale;
    chol.push_back(Eigen::LLT<Matrix>(cov).matrixL());
  }
  Rng rng(seed);
  Sample out;
  out.data.resize(static_cast<Eigen::Index>(n), d);
  out.labels.resize(n);
  Vector z(d);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t k = 0;
    double cum = spec.weights[0];
    while (u >= cum && k + 1 < spec.weights.size()) cum += spec.weights[++k];
    out.labels[i] = static_cast<int>(k) + 1;
    const auto row = static_cast<Eigen::Index>(i);
    if (const auto* g = std::get_if<GaussianSpec>(&spec.components[k])) {
      for (auto& v : z) v = rng.normal();
      out.data.row(row) = (g->mean + chol[k] * z).transpose();
    } else {
      const auto& s = std::get<SkewNormalComponent>(spec.components[k]);
      const double z0 = rng.normal();
      for (auto& v : z) v = rng.normal();
      Vector x = s.slant * z0 + chol[k] * z;  // jointly normal with z0
      if (z0 < 0.0) x = -x;
      out.data.row(row) = (s.location + x).transpose();
    }
  }
  return out;
}

}  // namespace ensdens
