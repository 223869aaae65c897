#pragma once

// Monte Carlo experiment: sample a scenario, fit the candidate grid, run
// every requested clustering method, and score it by ISE and ARI.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "ensdens/ensemble_weights.hpp"
#include "ensdens/evaluation.hpp"
#include "ensdens/gmm_fit.hpp"
#include "ensdens/io.hpp"
#include "ensdens/modal_em.hpp"
#include "ensdens/scenarios.hpp"

namespace ensdens {

enum class Method { SB, SB_NP, LambdaAIC, LambdaBIC, LambdaCV };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::SB: return "SB";
    case Method::SB_NP: return "SB-NP";
    case Method::LambdaAIC: return "lambda_AIC";
    case Method::LambdaBIC: return "lambda_BIC";
    case Method::LambdaCV: return "lambda_CV";
  }
  return "?";
}

inline Method parse_method(const std::string& name) {
  for (auto m : {Method::SB, Method::SB_NP, Method::LambdaAIC, Method::LambdaBIC, Method::LambdaCV})
    if (method_name(m) == name) return m;
  throw UsageError("unknown method '" + name + "'");
}

struct ExperimentPlan {
  std::vector<std::string> scenarios{"M1"};
  int replicates = 1;  // B
  std::vector<std::size_t> sample_sizes{500};
  std::vector<Method> methods{Method::SB, Method::SB_NP, Method::LambdaAIC, Method::LambdaBIC, Method::LambdaCV};
  std::uint64_t seed = 0;
  FitConfig fit;
  int cv_folds = 5;
  int ise_resolution = 400;
  std::string results_path = "results.csv";
  std::string summary_path = "summary.json";

  void validate() const {
    if (scenarios.empty()) throw UsageError("plan: no scenarios");
    for (const auto& s : scenarios) scenario(s);
    if (replicates < 1) throw UsageError("plan: B must be >= 1");
    if (sample_sizes.empty()) throw UsageError("plan: no sample sizes");
    for (auto n : sample_sizes)
      if (n < 50) throw UsageError("plan: sample sizes must be >= 50");
    if (methods.empty()) throw UsageError("plan: no methods");
    if (ise_resolution < 2) throw UsageError("plan: ise_resolution must be >= 2");
    fit.validate();
  }
};

/// One (scenario, n, replicate, method) cell. Empty optionals are missing
/// values: ise for SB-NP (same density as SB), lambda for the single-model
/// methods, everything when the method failed.
struct ResultRow {
  std::string scenario;
  std::size_t n = 0;
  Method method = Method::SB;
  int replicate = 0;
  std::optional<double> ise;
  std::optional<double> ari;
  std::optional<int> k_hat;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  std::string error;
};

inline std::uint64_t replicate_seed(std::uint64_t plan_seed, const std::string& scenario_id, std::size_t n,
                                    int replicate) {
  std::uint64_t sid = 0;
  for (char c : scenario_id) sid = sid * 131 + static_cast<unsigned char>(c);
  return derive_seed(plan_seed, {sid, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(replicate)});
}

/// Default ISE grid: mean +- 6 sd of the true density.
inline IseGrid scenario_grid(const ScenarioSpec& spec, int resolution = 400) {
  const auto mom = scenario_moments(spec);
  return IseGrid::around(mom.mean, mom.covariance.diagonal().cwiseSqrt(), 6.0, resolution);
}

namespace detail {

struct ScenarioTruth {
  ScenarioSpec spec;
  IseGrid grid;
  Matrix nodes;
  Vector density;
};

inline ScenarioTruth make_truth(const std::string& id, int resolution) {
  ScenarioTruth t{scenario(id), {}, {}, {}};
  t.grid = scenario_grid(t.spec, resolution);
  t.nodes = t.grid.nodes();
  t.density = true_log_density_rows(t.spec, t.nodes).array().exp();
  return t;
}

inline void run_replicate(const ScenarioTruth& truth, std::size_t n, int replicate, const ExperimentPlan& plan,
                          std::vector<ResultRow>& rows) {
  const std::uint64_t seed = replicate_seed(plan.seed, truth.spec.id, n, replicate);
  auto blank = [&](Method m) {
    ResultRow r;
    r.scenario = truth.spec.id;
    r.n = n;
    r.method = m;
    r.replicate = replicate;
    r.seed = seed;
    return r;
  };

  const Sample sample = sample_scenario(truth.spec, n, derive_seed(seed, {0}));
  FitConfig fit = plan.fit;
  fit.seed = derive_seed(seed, {1});
  ModalOptions modal;
  modal.seed = derive_seed(seed, {3});

  std::optional<CandidatePool> pool;
  std::string pool_error;
  try {
    pool.emplace(fit_grid(sample.data, fit));
  } catch (const std::exception& e) {
    pool_error = e.what();
  }

  // Per-model densities on the ISE grid and at the sample, computed once.
  std::optional<Matrix> grid_density, sample_density;
  std::vector<GaussianMixture> models;
  if (pool) models = pool->ensemble_models();
  auto grid_values = [&]() -> const Matrix& {
    if (!grid_density) grid_density = model_log_density_matrix(truth.nodes, models).array().exp().matrix();
    return *grid_density;
  };
  auto sample_values = [&]() -> const Matrix& {
    if (!sample_density) sample_density = model_log_density_matrix(sample.data, models);
    return *sample_density;
  };

  for (Method method : plan.methods) {
    ResultRow row = blank(method);
    if (!pool) {
      row.error = pool_error;
      rows.push_back(std::move(row));
      continue;
    }
    try {
      const auto& best = pool->models.front();
      Partition part;
      switch (method) {
        case Method::SB:
          part = map_classify(sample.data, best);
          row.ise = ise_from_values(grid_values().col(0), truth.density, truth.grid);
          break;
        case Method::SB_NP:
          part = modal_cluster(sample.data, best, modal).partition;
          break;
        case Method::LambdaAIC:
        case Method::LambdaBIC:
        case Method::LambdaCV: {
          const auto penalty0 = penalty_for(models, 0.0);
          double lambda = lambda_aic();
          if (method == Method::LambdaBIC) lambda = lambda_bic(n);
          if (method == Method::LambdaCV)
            lambda = lambda_cv(sample_values(), penalty0.nu, CvConfig{plan.cv_folds, {}, derive_seed(seed, {2})})
                         .lambda;
          const auto weights = fit_weights(sample_values(), PenaltySpec{lambda, penalty0.nu});
          const EnsembleDensity ens(models, weights.alpha);
          part = find_partition(sample.data, ens, modal);
          row.ise = ise_from_values(grid_values() * weights.alpha, truth.density, truth.grid);
          row.lambda = lambda;
          break;
        }
      }
      row.ari = adjusted_rand_index(sample.labels, part.labels);
      row.k_hat = part.k_hat();
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
}

}  // namespace detail

/// Rows ordered by scenario, n, replicate, then plan method order.
inline std::vector<ResultRow> run_experiment(const ExperimentPlan& plan) {
  plan.validate();
  std::vector<ResultRow> rows;
  for (const auto& id : plan.scenarios) {
    const auto truth = detail::make_truth(id, plan.ise_resolution);
    for (auto n : plan.sample_sizes)
      for (int b = 1; b <= plan.replicates; ++b) detail::run_replicate(truth, n, b, plan, rows);
  }
  return rows;
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << "scenario,n,method,replicate,ise,ari,k_hat,lambda,seed\n";
  for (const auto& r : rows) {
    out << r.scenario << ',' << r.n << ',' << method_name(r.method) << ',' << r.replicate << ','
        << (r.ise ? format_number(*r.ise) : "") << ',' << (r.ari ? format_number(*r.ari) : "") << ','
        << (r.k_hat ? std::to_string(*r.k_hat) : "") << ',' << (r.lambda ? format_number(*r.lambda) : "") << ','
        << r.seed << '\n';
  }
  return out.str();
}

/// Parses a results table written by results_csv.
inline std::vector<ResultRow> parse_results_csv(std::istream& in) {
  std::vector<ResultRow> rows;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::size_t> bad;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || detail::trim(line).empty()) continue;
    const auto f = detail::split_fields(detail::trim(line));
    if (f.size() != 9) {
      bad.push_back(lineno);
      continue;
    }
    try {
      ResultRow r;
      r.scenario = f[0];
      r.n = std::stoul(f[1]);
      r.method = parse_method(f[2]);
      r.replicate = std::stoi(f[3]);
      if (!f[4].empty()) r.ise = std::stod(f[4]);
      if (!f[5].empty()) r.ari = std::stod(f[5]);
      if (!f[6].empty()) r.k_hat = std::stoi(f[6]);
      if (!f[7].empty()) r.lambda = std::stod(f[7]);
      r.seed = std::stoull(f[8]);
      rows.push_back(std::move(r));
    } catch (const std::exception&) {
      bad.push_back(lineno);
    }
  }
  if (!bad.empty()) {
    std::string msg = "malformed results rows at line(s)";
    for (auto b : bad) msg += " " + std::to_string(b);
    throw ParseError(msg, bad);
  }
  return rows;
}

/// Per (scenario, n, method): MISE x 1000 and ARI as mean (sd), mean K-hat
/// and lambda, in the order rows first appear.
inline json summarize(const std::vector<ResultRow>& rows) {
  struct Acc {
    std::vector<double> ise, ari, k_hat, lambda;
    int failures = 0;
  };
  std::vector<std::tuple<std::string, std::size_t, Method>> keys;
  std::map<std::tuple<std::string, std::size_t, int>, Acc> acc;
  for (const auto& r : rows) {
    const auto key = std::make_tuple(r.scenario, r.n, static_cast<int>(r.method));
    if (!acc.count(key)) keys.emplace_back(r.scenario, r.n, r.method);
    auto& a = acc[key];
    if (r.ise) a.ise.push_back(1000.0 * *r.ise);
    if (r.ari) a.ari.push_back(*r.ari);
    if (r.k_hat) a.k_hat.push_back(*r.k_hat);
    if (r.lambda) a.lambda.push_back(*r.lambda);
    if (!r.ari) ++a.failures;
  }
  auto stat = [](const std::vector<double>& v) -> json {
    if (v.empty()) return nullptr;
    const auto s = mise_summary(v);
    return json{{"mean", s.mean}, {"sd", s.sd}};
  };
  json tables = json::array();
  std::map<std::pair<std::string, std::size_t>, std::size_t> table_index;
  for (const auto& [scen, n, method] : keys) {
    const auto tk = std::make_pair(scen, n);
    if (!table_index.count(tk)) {
      table_index[tk] = tables.size();
      tables.push_back(json{{"scenario", scen}, {"n", n}, {"rows", json::array()}});
    }
    const auto& a = acc[std::make_tuple(scen, n, static_cast<int>(method))];
    tables[table_index[tk]]["rows"].push_back(json{{"method", method_name(method)},
                                                   {"mise_x1000", stat(a.ise)},
                                                   {"ari", stat(a.ari)},
                                                   {"k_hat", stat(a.k_hat)},
                                                   {"lambda", stat(a.lambda)},
                                                   {"replicates", a.ari.size()},
                                                   {"failures", a.failures}});
  }
  return json{{"schema_version", kSchemaVersion}, {"tables", std::move(tables)}};
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  for (auto& item : split_fields(value))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

}  // namespace detail

/// Plan file: `key = value` lines, `#` comments, lists comma-separated.
/// Keys: scenarios, B, n, methods, seed, k_min, k_max, structures, n_init,
/// max_iter, rel_tol, ensemble_size, cv_folds, ise_resolution, results,
/// summary.
inline ExperimentPlan parse_plan(std::istream& in) {
  ExperimentPlan plan;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("plan line " + std::to_string(lineno) + ": expected key = value", {lineno});
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    try {
      if (key == "scenarios") {
        plan.scenarios = detail::split_list(value);
      } else if (key == "B") {
        plan.replicates = std::stoi(value);
      } else if (key == "n") {
        plan.sample_sizes.clear();
        for (const auto& v : detail::split_list(value)) plan.sample_sizes.push_back(std::stoul(v));
      } else if (key == "methods") {
        plan.methods.clear();
        for (const auto& v : detail::split_list(value)) plan.methods.push_back(parse_method(v));
      } else if (key == "seed") {
        plan.seed = std::stoull(value);
      } else if (key == "k_min") {
        plan.fit.k_min = std::stoi(value);
      } else if (key == "k_max") {
        plan.fit.k_max = std::stoi(value);
      } else if (key == "structures") {
        plan.fit.structures.clear();
        for (const auto& v : detail::split_list(value)) plan.fit.structures.push_back(parse_structure(v));
      } else if (key == "n_init") {
        plan.fit.n_init = std::stoi(value);
      } else if (key == "max_iter") {
        plan.fit.max_iter = std::stoi(value);
      } else if (key == "rel_tol") {
        plan.fit.rel_tol = std::stod(value);
      } else if (key == "ensemble_size") {
        plan.fit.ensemble_size = std::stoi(value);
      } else if (key == "cv_folds") {
        plan.cv_folds = std::stoi(value);
      } else if (key == "ise_resolution") {
        plan.ise_resolution = std::stoi(value);
      } else if (key == "results") {
        plan.results_path = value;
      } else if (key == "summary") {
        plan.summary_path = value;
      } else {
        throw ParseError("plan line " + std::to_string(lineno) + ": unknown key '" + key + "'", {lineno});
      }
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError("plan line " + std::to_string(lineno) + ": bad value for '" + key + "': " + e.what(), {lineno});
    }
  }
  plan.validate();
  return plan;
}

}  // namespace ensdens
