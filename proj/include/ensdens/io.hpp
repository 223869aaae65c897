#pragma once

// JSON and CSV serialization of models, pools, weight fits and partitions.

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ensdens/ensemble_weights.hpp"
#include "ensdens/error.hpp"
#include "ensdens/gmm_fit.hpp"
#include "ensdens/mixture.hpp"
#include "ensdens/partition.hpp"
#include "ensdens/scenarios.hpp"

namespace ensdens {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Malformed input file; `lines` lists the offending 1-based line numbers.
class ParseError : public UsageError {
 public:
  ParseError(const std::string& what, std::vector<std::size_t> lines = {})
      : UsageError(what), lines_(std::move(lines)) {}
  const std::vector<std::size_t>& lines() const { return lines_; }

 private:
  std::vector<std::size_t> lines_;
};

namespace detail {

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double number_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline json to_json(const Vector& v) {
  json a = json::array();
  for (double x : v) a.push_back(x);
  return a;
}

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_json(Vector(m.row(i).transpose())));
  return rows;
}

inline Vector vector_from_json(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j.at(i).get<double>();
  return v;
}

inline Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(j.size()) != rows) throw ParseError("matrix has wrong row count");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ParseError("matrix has wrong column count");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

}  // namespace detail

inline json model_to_json(const GaussianMixture& model) {
  json means = json::array(), covs = json::array();
  for (const auto& c : model.components()) {
    means.push_back(detail::to_json(c.mean()));
    covs.push_back(detail::to_json(c.covariance()));
  }
  return json{{"d", model.dim()},
              {"K", model.size()},
              {"structure", std::string(to_string(model.structure()))},
              {"weights", detail::to_json(model.weights())},
              {"means", std::move(means)},
              {"covariances", std::move(covs)},
              {"nu", model.nu()},
              {"loglik", detail::number_or_null(model.loglik())},
              {"bic", detail::number_or_null(model.bic())}};
}

inline GaussianMixture model_from_json(const json& j) {
  try {
    const int d = j.at("d").get<int>();
    const int k = j.at("K").get<int>();
    const auto structure = parse_structure(j.at("structure").get<std::string>());
    const Vector weights = detail::vector_from_json(j.at("weights"));
    const Matrix means = detail::matrix_from_json(j.at("means"), k, d);
    const auto& covs = j.at("covariances");
    if (static_cast<int>(covs.size()) != k) throw ParseError("model: covariance count differs from K");
    std::vector<GaussianComponent> comps;
    for (int c = 0; c < k; ++c)
      comps.emplace_back(means.row(c).transpose(), detail::matrix_from_json(covs.at(c), d, d));
    GaussianMixture model(std::move(comps), weights, structure, detail::number_or_nan(j.value("loglik", json())),
                          detail::number_or_nan(j.value("bic", json())));
    if (j.contains("nu") && j.at("nu").get<int>() != model.nu())
      throw ParseError("model: nu does not match structure, d and K");
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model JSON: ") + e.what());
  }
}

inline json pool_to_json(const CandidatePool& pool, std::size_t n_obs) {
  json models = json::array(), ranking = json::array(), cells = json::array();
  for (std::size_t r = 0; r < pool.models.size(); ++r) {
    const auto& m = pool.models[r];
    models.push_back(model_to_json(m));
    ranking.push_back(json{{"rank", r + 1},
                           {"K", m.size()},
                           {"structure", std::string(to_string(m.structure()))},
                           {"bic", detail::number_or_null(m.bic())}});
  }
  for (const auto& c : pool.cells)
    cells.push_back(json{{"K", c.k},
                         {"structure", std::string(to_string(c.structure))},
                         {"ok", c.ok},
                         {"loglik", detail::number_or_null(c.loglik)},
                         {"bic", detail::number_or_null(c.bic)},
                         {"nu", c.nu},
                         {"message", c.message}});
  return json{{"schema_version", kSchemaVersion},
              {"n", n_obs},
              {"ensemble_size", pool.ensemble_size},
              {"ranking", std::move(ranking)},
              {"models", std::move(models)},
              {"cells", std::move(cells)}};
}

inline CandidatePool pool_from_json(const json& j) {
  try {
    CandidatePool pool;
    for (const auto& m : j.at("models")) pool.models.push_back(model_from_json(m));
    pool.ensemble_size = j.value("ensemble_size", static_cast<int>(pool.models.size()));
    if (pool.models.empty()) throw ParseError("pool: no models");
    if (pool.ensemble_size < 1 || pool.ensemble_size > static_cast<int>(pool.models.size()))
      throw ParseError("pool: ensemble_size out of range");
    for (std::size_t r = 1; r < pool.models.size(); ++r)
      if (pool.models[r].bic() > pool.models[r - 1].bic()) throw ParseError("pool: models not sorted by BIC");
    return pool;
  } catch (const json::exception& e) {
    throw ParseError(std::string("pool JSON: ") + e.what());
  }
}

inline json weights_to_json(const WeightFit& fit) {
  return json{{"schema_version", kSchemaVersion},
              {"alpha", detail::to_json(fit.alpha)},
              {"lambda", fit.lambda},
              {"loglik", fit.loglik},
              {"penalized_loglik", fit.penalized_loglik},
              {"iterations", fit.iterations},
              {"converged", fit.converged},
              {"dropped_models", fit.dropped_models()}};
}

inline WeightFit weights_from_json(const json& j) {
  try {
    WeightFit fit;
    fit.alpha = detail::vector_from_json(j.at("alpha"));
    fit.lambda = j.at("lambda").get<double>();
    fit.loglik = j.at("loglik").get<double>();
    fit.penalized_loglik = j.at("penalized_loglik").get<double>();
    fit.iterations = j.at("iterations").get<int>();
    fit.converged = j.at("converged").get<bool>();
    return fit;
  } catch (const json::exception& e) {
    throw ParseError(std::string("weights JSON: ") + e.what());
  }
}

inline json cv_to_json(const CvResult& cv) {
  json table = json::array();
  for (std::size_t l = 0; l < cv.grid.size(); ++l)
    table.push_back(json{{"lambda", cv.grid[l]}, {"test_loglik", cv.test_loglik[l]}});
  return json{{"lambda_cv", cv.lambda}, {"table", std::move(table)}, {"warnings", cv.warnings}};
}

inline json partition_to_json(const Partition& p) {
  json modes = json::array();
  for (const auto& m : p.modes)
    modes.push_back(json{{"location", detail::to_json(m.location)},
                         {"log_density", m.log_density},
                         {"basin_size", m.basin_size}});
  return json{{"schema_version", kSchemaVersion},
              {"method", p.method_tag},
              {"k_hat", p.k_hat()},
              {"labels", p.labels},
              {"modes", std::move(modes)},
              {"merge_tol", detail::number_or_null(p.merge_tol)},
              {"warnings", p.warnings}};
}

inline Partition partition_from_json(const json& j) {
  try {
    Partition p;
    p.method_tag = j.value("method", std::string());
    p.labels = j.at("labels").get<std::vector<int>>();
    for (const auto& m : j.at("modes"))
      p.modes.push_back(Mode{detail::vector_from_json(m.at("location")), m.at("log_density").get<double>(),
                             m.at("basin_size").get<int>()});
    p.merge_tol = detail::number_or_nan(j.value("merge_tol", json()));
    p.warnings = j.value("warnings", std::vector<std::string>{});
    for (int l : p.labels)
      if (l < 1 || l > p.k_hat()) throw ParseError("partition: label does not index a mode");
    return p;
  } catch (const json::exception& e) {
    throw ParseError(std::string("partition JSON: ") + e.what());
  }
}

inline json scenario_to_json(const ScenarioSpec& spec) {
  json comps = json::array();
  for (std::size_t k = 0; k < spec.components.size(); ++k) {
    json c{{"weight", spec.weights[k]}};
    if (const auto* g = std::get_if<GaussianSpec>(&spec.components[k])) {
      c["family"] = "gaussian";
      c["mean"] = detail::to_json(g->mean);
      c["covariance"] = detail::to_json(g->covariance);
    } else {
      const auto& s = std::get<SkewNormalComponent>(spec.components[k]);
      c["family"] = "skew-normal";
      c["mean"] = detail::to_json(s.location);
      c["covariance"] = detail::to_json(s.scale);
      c["delta"] = detail::to_json(s.slant);
    }
    comps.push_back(std::move(c));
  }
  return json{{"id", spec.id}, {"components", std::move(comps)}};
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

inline void write_json_file(const std::string& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char delim = ',') {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) out.push_back(field);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_double(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  try {
    std::size_t used = 0;
    out = std::stod(t, &used);
    return used == t.size() && std::isfinite(out);
  } catch (...) {
    return false;
  }
}

}  // namespace detail

/// Numeric CSV, comma-delimited, one observation per row. Blank lines are
/// skipped. All malformed lines are reported together.
inline Matrix parse_csv_matrix(std::istream& in, bool header) {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> bad;
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  bool skipped_header = !header;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    if (!skipped_header) {
      skipped_header = true;
      continue;
    }
    const auto fields = detail::split_fields(line);
    std::vector<double> row;
    bool ok = !fields.empty();
    for (const auto& f : fields) {
      double v = 0.0;
      if (!detail::parse_double(f, v)) {
        ok = false;
        break;
      }
      row.push_back(v);
    }
    if (ok && width == 0) width = row.size();
    if (!ok || row.size() != width) {
      bad.push_back(lineno);
      continue;
    }
    rows.push_back(std::move(row));
  }
  if (!bad.empty()) {
    std::string msg = "malformed CSV rows at line(s)";
    for (std::size_t i = 0; i < bad.size() && i < 20; ++i) msg += " " + std::to_string(bad[i]);
    if (bad.size() > 20) msg += " ...";
    throw ParseError(msg, bad);
  }
  if (rows.empty()) throw ParseError("CSV contains no data rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline Matrix read_csv_matrix(const std::string& path, bool header) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  try {
    return parse_csv_matrix(in, header);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.lines());
  }
}

/// One label per line (first column); arbitrary tokens are mapped to
/// 1-based integer codes in order of first appearance.
inline std::vector<int> read_labels(const std::string& path, bool header) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  std::vector<std::string> tokens;
  std::string line;
  bool skipped_header = !header;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    if (!skipped_header) {
      skipped_header = true;
      continue;
    }
    tokens.push_back(detail::trim(detail::split_fields(line).front()));
  }
  std::vector<std::string> seen;
  std::vector<int> labels;
  for (const auto& t : tokens) {
    auto it = std::find(seen.begin(), seen.end(), t);
    if (it == seen.end()) {
      seen.push_back(t);
      it = seen.end() - 1;
    }
    labels.push_back(static_cast<int>(it - seen.begin()) + 1);
  }
  if (labels.empty()) throw ParseError(path + ": no labels");
  return labels;
}

}  // namespace ensdens
