// ensdens: command-line driver for the ensemble clustering pipeline.
//
// Every stage reads and writes files so the stages compose:
//   ensdens fit --data x.csv --out run/
//   ensdens ensemble --pool run/pool.json --data x.csv --penalty bic --out run/
//   ensdens cluster --pool run/pool.json --weights run/weights.json --data x.csv --out run/
//   ensdens evaluate --partition run/partition.json --truth y.csv --out run/
//   ensdens simulate --plan plan.txt --out sim/
//   ensdens report --results sim/results.csv --out sim/
//
// Exit codes: 0 success, 1 pipeline failure, 2 usage or parse error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ensdens/ensdens.hpp"

namespace fs = std::filesystem;
using namespace ensdens;

namespace {

struct Options {
  std::string data, pool, weights, partition, truth, plan, results;
  std::string out = ".";
  bool header = false;

  // fit
  int k_min = 1, k_max = 9, n_init = 5, max_iter = 500, ensemble_size = 30;
  double tol = 1e-8;
  std::vector<std::string> structures;
  double occam = -1.0;

  // ensemble
  std::string penalty = "bic";
  double lambda = -1.0;
  int cv_folds = 5;
  std::string cv_grid;

  // cluster
  double merge_tol = -1.0;
  int max_ascend_iter = 10000;
  int grid_resolution = 100;
  bool single_best = false;

  std::uint64_t seed = 0;
  bool seed_given = false;
};

fs::path output_dir(const Options& o) {
  fs::path dir(o.out);
  fs::create_directories(dir);
  return dir;
}

Matrix load_data(const Options& o) {
  if (o.data.empty()) throw UsageError("--data is required");
  return read_csv_matrix(o.data, o.header);
}

CandidatePool load_pool(const Options& o) {
  if (o.pool.empty()) throw UsageError("--pool is required");
  return pool_from_json(read_json_file(o.pool));
}

std::vector<double> parse_cv_grid(const std::string& text) {
  const auto parts = detail::split_fields(text, ':');
  double lo = 0, hi = 0, count = 0;
  if (parts.size() != 3 || !detail::parse_double(parts[0], lo) || !detail::parse_double(parts[1], hi) ||
      !detail::parse_double(parts[2], count) || count < 2 || count != std::floor(count) || !(lo > 0) || !(hi > lo))
    throw UsageError("--cv-grid expects min:max:count with 0 < min < max and count >= 2");
  return log_spaced_grid(lo, hi, static_cast<int>(count));
}

int cmd_fit(const Options& o) {
  const Matrix data = load_data(o);
  FitConfig cfg;
  cfg.k_min = o.k_min;
  cfg.k_max = o.k_max;
  cfg.n_init = o.n_init;
  cfg.max_iter = o.max_iter;
  cfg.rel_tol = o.tol;
  cfg.ensemble_size = o.ensemble_size;
  cfg.seed = o.seed;
  if (!o.structures.empty()) {
    cfg.structures.clear();
    for (const auto& s : o.structures) cfg.structures.push_back(parse_structure(s));
  }
  auto pool = fit_grid(data, cfg);
  if (o.occam >= 0.0) pool = occam_window(pool, o.occam);

  const auto dir = output_dir(o);
  write_json_file((dir / "pool.json").string(), pool_to_json(pool, static_cast<std::size_t>(data.rows())));

  std::ostringstream report;
  report << "K,structure,status,loglik,bic,nu,message\n";
  for (const auto& c : pool.cells) {
    report << c.k << ',' << to_string(c.structure) << ',' << (c.ok ? "ok" : "failed") << ','
           << (c.ok ? format_number(c.loglik) : "") << ',' << (c.ok ? format_number(c.bic) : "") << ',' << c.nu
           << ',' << '"' << c.message << '"' << '\n';
  }
  write_text_file((dir / "fit_report.csv").string(), report.str());

  const auto& best = pool.models.front();
  std::cout << "best model: K=" << best.size() << " " << to_string(best.structure())
            << " BIC=" << format_number(best.bic()) << "; pool size " << pool.models.size() << "\n";
  return 0;
}

int cmd_ensemble(const Options& o) {
  const auto pool = load_pool(o);
  const Matrix data = load_data(o);
  const auto models = pool.ensemble_models();
  if (data.cols() != models.front().dim()) throw UsageError("data dimension does not match the pool");
  const Matrix density = model_log_density_matrix(data, models);
  const auto nu = penalty_for(models, 0.0).nu;
  const auto n = static_cast<std::size_t>(data.rows());

  double lambda = 0.0;
  json cv_table;
  if (o.lambda >= 0.0) {
    lambda = o.lambda;
  } else if (o.penalty == "aic") {
    lambda = lambda_aic();
  } else if (o.penalty == "bic") {
    lambda = lambda_bic(n);
  } else if (o.penalty == "cv") {
    CvConfig cv{o.cv_folds, {}, o.seed};
    if (!o.cv_grid.empty()) cv.lambda_grid = parse_cv_grid(o.cv_grid);
    const auto result = lambda_cv(density, nu, cv);
    lambda = result.lambda;
    cv_table = cv_to_json(result);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  } else {
    throw UsageError("--penalty must be one of aic, bic, cv");
  }

  const auto fit = fit_weights(density, PenaltySpec{lambda, nu});
  json out = weights_to_json(fit);
  out["penalty"] = o.lambda >= 0.0 ? "manual" : o.penalty;
  if (!cv_table.is_null()) out["cv"] = std::move(cv_table);
  write_json_file((output_dir(o) / "weights.json").string(), out);

  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", lambda);
  std::cout << "lambda=" << buf << " models=" << models.size() << " active="
            << models.size() - fit.dropped_models().size() << (fit.converged ? "" : " (not converged)") << "\n";
  return 0;
}

void write_density_grid(const std::string& path, const EnsembleDensity& ens, const Matrix& data, int resolution) {
  IseGrid grid;
  grid.resolution = resolution;
  for (Eigen::Index j = 0; j < 2; ++j) {
    const double lo = data.col(j).minCoeff(), hi = data.col(j).maxCoeff();
    const double pad = 0.1 * std::max(hi - lo, 1e-8);
    grid.bounds.emplace_back(lo - pad, hi + pad);
  }
  const Matrix nodes = grid.nodes();
  const Vector dens = ens.log_density_rows(nodes).array().exp();
  std::ostringstream out;
  out << "x,y,density\n";
  for (Eigen::Index r = 0; r < nodes.rows(); ++r)
    out << format_number(nodes(r, 0)) << ',' << format_number(nodes(r, 1)) << ',' << format_number(dens(r)) << '\n';
  write_text_file(path, out.str());
}

int cmd_cluster(const Options& o) {
  const auto pool = load_pool(o);
  const Matrix data = load_data(o);
  const auto models = pool.ensemble_models();
  if (data.cols() != models.front().dim()) throw UsageError("data dimension does not match the pool");

  ModalOptions modal;
  modal.max_iter = o.max_ascend_iter;
  modal.seed = o.seed;
  if (o.merge_tol > 0.0) modal.merge_tol = o.merge_tol;

  Partition part;
  std::optional<EnsembleDensity> ens;
  if (o.single_best) {
    part = map_classify(data, models.front());
    ens.emplace(std::vector<GaussianMixture>{models.front()}, Vector::Ones(1));
  } else {
    if (o.weights.empty()) throw UsageError("--weights is required (or pass --single-best)");
    const auto fit = weights_from_json(read_json_file(o.weights));
    if (fit.alpha.size() != static_cast<Eigen::Index>(models.size()))
      throw UsageError("weights do not match the pool's ensemble size");
    ens.emplace(models, fit.alpha);
    part = find_partition(data, *ens, modal);
  }

  const auto dir = output_dir(o);
  write_json_file((dir / "partition.json").string(), partition_to_json(part));
  if (data.cols() == 2) write_density_grid((dir / "density_grid.csv").string(), *ens, data, o.grid_resolution);
  for (const auto& w : part.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "K_hat=" << part.k_hat() << "\n";
  return 0;
}

int cmd_evaluate(const Options& o) {
  if (o.partition.empty() || o.truth.empty()) throw UsageError("--partition and --truth are required");
  const auto part = partition_from_json(read_json_file(o.partition));
  const auto truth = read_labels(o.truth, o.header);
  if (truth.size() != part.labels.size())
    throw UsageError("truth has " + std::to_string(truth.size()) + " labels, partition has " +
                     std::to_string(part.labels.size()));
  const double ari = adjusted_rand_index(truth, part.labels);
  const auto table = ContingencyTable::build(truth, part.labels);
  json out{{"schema_version", kSchemaVersion},
           {"ari", ari},
           {"k_hat", part.k_hat()},
           {"k_true", table.row_labels.size()},
           {"contingency", json{{"rows", table.row_labels}, {"cols", table.col_labels}, {"counts", table.counts}}}};
  write_json_file((output_dir(o) / "metrics.json").string(), out);
  std::cout << "ARI=" << format_number(ari) << " K_hat=" << part.k_hat() << " K_true=" << table.row_labels.size()
            << "\n";
  return 0;
}

void print_summary(const json& summary) {
  for (const auto& t : summary.at("tables")) {
    std::cout << t.at("scenario").get<std::string>() << " n=" << t.at("n").get<std::size_t>() << "\n";
    std::printf("  %-12s %-20s %-20s %s\n", "method", "MISE x 1000", "ARI", "K_hat");
    for (const auto& r : t.at("rows")) {
      auto cell = [](const json& s) -> std::string {
        if (s.is_null()) return "-";
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3f (%.3f)", s.at("mean").get<double>(), s.at("sd").get<double>());
        return buf;
      };
      std::printf("  %-12s %-20s %-20s %s\n", r.at("method").get<std::string>().c_str(),
                  cell(r.at("mise_x1000")).c_str(), cell(r.at("ari")).c_str(), cell(r.at("k_hat")).c_str());
    }
  }
}

int cmd_simulate(const Options& o) {
  if (o.plan.empty()) throw UsageError("--plan is required");
  std::ifstream in(o.plan);
  if (!in) throw UsageError("cannot open " + o.plan);
  auto plan = parse_plan(in);
  if (o.seed_given) plan.seed = o.seed;
  const auto rows = run_experiment(plan);
  std::size_t failures = 0;
  for (const auto& r : rows)
    if (!r.error.empty()) {
      ++failures;
      std::cerr << "failed: " << r.scenario << " n=" << r.n << " " << method_name(r.method) << " b=" << r.replicate
                << ": " << r.error << "\n";
    }
  const auto dir = output_dir(o);
  const std::string table = results_csv(rows);
  write_text_file((dir / plan.results_path).string(), table);
  std::istringstream written(table);
  const auto summary = summarize(parse_results_csv(written));
  write_json_file((dir / plan.summary_path).string(), summary);
  print_summary(summary);
  if (failures == rows.size()) throw PipelineError("every experiment cell failed");
  return 0;
}

int cmd_report(const Options& o) {
  if (o.results.empty()) throw UsageError("--results is required");
  std::ifstream in(o.results);
  if (!in) throw UsageError("cannot open " + o.results);
  const auto summary = summarize(parse_results_csv(in));
  write_json_file((output_dir(o) / "summary.json").string(), summary);
  print_summary(summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble model-based clustering"};
  app.require_subcommand(1);
  Options o;

  auto add_io = [&](CLI::App* sub) {
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
  };
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", o.data, "Numeric CSV, one observation per row")->required()->check(CLI::ExistingFile);
    sub->add_flag("--header", o.header, "Input CSV files have a header line");
  };
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  };

  auto* fit = app.add_subcommand("fit", "Fit the mixture grid and rank it by BIC");
  add_data(fit);
  add_io(fit);
  add_seed(fit);
  fit->add_option("--k-min", o.k_min)->capture_default_str();
  fit->add_option("--k-max", o.k_max)->capture_default_str();
  fit->add_option("--structures", o.structures, "Subset of EII,VII,EEI,VVI,EEE,VVV")->delimiter(',');
  fit->add_option("--n-init", o.n_init, "Random starts per cell")->capture_default_str();
  fit->add_option("--max-iter", o.max_iter)->capture_default_str();
  fit->add_option("--tol", o.tol, "Relative log-likelihood tolerance")->capture_default_str();
  fit->add_option("--ensemble-size", o.ensemble_size, "M, models kept")->capture_default_str();
  fit->add_option("--occam", o.occam, "Keep models within this BIC distance of the best");

  auto* ens = app.add_subcommand("ensemble", "Estimate ensemble weights");
  add_data(ens);
  add_io(ens);
  add_seed(ens);
  ens->add_option("--pool", o.pool)->required()->check(CLI::ExistingFile);
  ens->add_option("--penalty", o.penalty)->check(CLI::IsMember({"aic", "bic", "cv"}))->capture_default_str();
  ens->add_option("--lambda", o.lambda, "Manual penalty, overrides --penalty")->check(CLI::NonNegativeNumber);
  ens->add_option("--cv-folds", o.cv_folds)->capture_default_str();
  ens->add_option("--cv-grid", o.cv_grid, "min:max:count, log-spaced");

  auto* clu = app.add_subcommand("cluster", "Partition by mode ascent on the ensemble density");
  add_data(clu);
  add_io(clu);
  add_seed(clu);
  clu->add_option("--pool", o.pool)->required()->check(CLI::ExistingFile);
  clu->add_option("--weights", o.weights)->check(CLI::ExistingFile);
  clu->add_option("--merge-tol", o.merge_tol)->check(CLI::PositiveNumber);
  clu->add_option("--max-ascend-iter", o.max_ascend_iter)->check(CLI::PositiveNumber)->capture_default_str();
  clu->add_option("--grid-resolution", o.grid_resolution, "Density grid nodes per axis (d = 2)")
      ->check(CLI::Range(2, 2000))
      ->capture_default_str();
  clu->add_flag("--single-best", o.single_best, "MAP classification with the best BIC model");

  auto* sim = app.add_subcommand("simulate", "Run a simulation plan");
  add_io(sim);
  sim->add_option("--plan", o.plan, "key = value plan file")->required()->check(CLI::ExistingFile);
  sim->add_option("--seed", o.seed, "Override the plan seed");

  auto* eva = app.add_subcommand("evaluate", "Compare a partition with reference labels");
  add_io(eva);
  eva->add_option("--partition", o.partition)->required()->check(CLI::ExistingFile);
  eva->add_option("--truth", o.truth)->required()->check(CLI::ExistingFile);
  eva->add_flag("--header", o.header, "Label file has a header line");

  auto* rep = app.add_subcommand("report", "Summarize a results table");
  add_io(rep);
  rep->add_option("--results", o.results)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  o.seed_given = sim->count("--seed") > 0;

  try {
    if (*fit) return cmd_fit(o);
    if (*ens) return cmd_ensemble(o);
    if (*clu) return cmd_cluster(o);
    if (*sim) return cmd_simulate(o);
    if (*eva) return cmd_evaluate(o);
    if (*rep) return cmd_report(o);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
