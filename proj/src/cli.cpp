#include "spdegrf/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace spdegrf {

using json = nlohmann::json;

namespace {

const char* const kFieldNames[kFieldCount] = {"log_kappa2", "log_gamma", "vx", "vy"};

std::filesystem::path output_path(const RunConfig& cfg, const std::string& key,
                                  const std::string& name) {
  if (cfg.has(key)) return cfg.path(key);
  return cfg.path("output_dir", ".") / name;
}

std::uint64_t seed_of(const RunConfig& cfg) {
  return static_cast<std::uint64_t>(cfg.num("seed", 1.0));
}

std::vector<StationRecord> stations_from(const RunConfig& cfg, const std::string& key,
                                         const Grid& grid, std::ostream& log) {
  const StationLoad load = load_stations(cfg.path(key), &grid, cfg.flag("skip_bad", false));
  for (const BadLine& bad : load.rejected) {
    log << cfg.path(key).string() << ": skipped line " << bad.line << ": " << bad.reason << '\n';
  }
  return load.records;
}

FitOptions fit_options(const RunConfig& cfg) {
  FitOptions o;
  o.lbfgs.max_iterations = cfg.integer("max_iterations", o.lbfgs.max_iterations);
  o.lbfgs.gradient_tolerance = cfg.num("gradient_tolerance", o.lbfgs.gradient_tolerance);
  o.nested_stationary_init = cfg.flag("nested_init", true);
  o.standard_errors = cfg.flag("standard_errors", true);
  return o;
}

// "x y; x y; ..." pairs.
std::vector<Point> parse_points(const std::string& text) {
  std::vector<Point> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ';')) {
    std::istringstream pair(item);
    Point p;
    if (!(pair >> p.x >> p.y)) throw InvalidArgumentError("points must be written as 'x y; x y'");
    std::string rest;
    if (pair >> rest) throw InvalidArgumentError("points must be written as 'x y; x y'");
    out.push_back(p);
  }
  return out;
}

std::vector<std::string> covariate_names(const RunConfig& cfg) {
  std::vector<std::string> names;
  const std::string spec = cfg.str("covariates", "none");
  if (spec == "none" || spec.empty()) return names;
  std::istringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item != "intercept" && item != "elevation") {
      throw InvalidArgumentError("unknown covariate '" + item + "' (use intercept, elevation)");
    }
    names.push_back(item);
  }
  return names;
}

Eigen::MatrixXd load_covariate_grid(const RunConfig& cfg, const Grid& grid) {
  const std::vector<std::string> names = covariate_names(cfg);
  Eigen::MatrixXd out(grid.size(), static_cast<Eigen::Index>(names.size()));
  Eigen::VectorXd elev = Eigen::VectorXd::Constant(grid.size(), std::nan(""));
  const bool need_elev = std::find(names.begin(), names.end(), "elevation") != names.end();
  if (need_elev) {
    std::ifstream in(cfg.path("covariate_grid"));
    if (!in) throw Error("cannot open covariate grid " + cfg.path("covariate_grid").string());
    std::string line;
    std::getline(in, line);
    long number = 1;
    while (std::getline(in, line)) {
      ++number;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream row(line);
      Point p;
      double e = 0.0;
      if (!(row >> p.x >> p.y >> e)) {
        throw Error("covariate grid line " + std::to_string(number) + ": expected lon,lat,elev_km");
      }
      elev[grid.locate(p).flat] = e;
    }
    if (!elev.allFinite()) throw Error("covariate grid does not cover every cell");
  }
  for (std::size_t a = 0; a < names.size(); ++a) {
    out.col(static_cast<Eigen::Index>(a)) =
        names[a] == "intercept" ? Eigen::VectorXd::Ones(grid.size()) : elev;
  }
  return out;
}

std::string csv_text(const std::string& header, const std::vector<std::vector<double>>& rows) {
  std::string out = header + '\n';
  for (const auto& r : rows) out += csv_line(r);
  return out;
}

std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

void write_all(const std::vector<std::pair<std::filesystem::path, std::string>>& files,
               std::vector<std::filesystem::path>& written) {
  for (const auto& [path, text] : files) {
    write_file_atomic(path, text);
    written.push_back(path);
  }
}

std::pair<Dataset, std::vector<int>> load_dataset(const RunConfig& cfg, const Grid& grid,
                                                  std::ostream& log) {
  const auto records = stations_from(cfg, "stations", grid, log);
  const auto years = replicate_years(cfg, records);
  return {dataset_from_records(cfg, records, years), years};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config translation

ModelSpec spec_from_config(const RunConfig& cfg) {
  const Grid grid = build_grid({cfg.num("lon_min"), cfg.num("lon_max"), cfg.num("lat_min"),
                                cfg.num("lat_max")},
                               cfg.integer("nx"), cfg.integer("ny"));
  const int k = cfg.integer("basis_k", 4);
  const int l = cfg.integer("basis_l", 2);
  const std::vector<double> log_tau = cfg.list("log_tau", {4.0, 4.0, 4.0, 4.0});
  if (log_tau.size() != 4) throw InvalidArgumentError("log_tau needs four values");
  std::array<double, 4> tau;
  for (int f = 0; f < 4; ++f) tau[f] = std::exp(log_tau[f]);
  return ModelSpec(grid, Basis2D::for_grid(grid, k, l), tau, cfg.num("tau_beta", 1e-4),
                   cfg.flag("stationary", false));
}

RegionRule regions_from_config(const RunConfig& cfg) {
  const std::string split = cfg.str("region_split", "single");
  if (split == "single") return {};
  return {cfg.num("region_split")};
}

std::vector<int> replicate_years(const RunConfig& cfg, const std::vector<StationRecord>& records) {
  const std::string mode = cfg.str("years", "all");
  int lo = std::numeric_limits<int>::min(), hi = std::numeric_limits<int>::max();
  if (mode != "all") {
    const auto dash = mode.find('-', 1);
    try {
      lo = std::stoi(mode.substr(0, dash));
      hi = dash == std::string::npos ? lo : std::stoi(mode.substr(dash + 1));
    } catch (const std::exception&) {
      throw InvalidArgumentError("years must be 'all', a year, or a range like 1971-1985");
    }
  }
  std::set<int> years;
  for (const StationRecord& r : records) {
    if (r.year >= lo && r.year <= hi) years.insert(r.year);
  }
  return {years.begin(), years.end()};
}

Dataset dataset_from_records(const RunConfig& cfg, const std::vector<StationRecord>& records,
                             const std::vector<int>& years) {
  const RegionRule rule = regions_from_config(cfg);
  const std::vector<std::string> names = covariate_names(cfg);
  std::map<int, int> index;
  for (std::size_t t = 0; t < years.size(); ++t) index[years[t]] = static_cast<int>(t);

  Dataset d;
  d.n_replicates = std::max<int>(1, static_cast<int>(years.size()));
  d.n_regions = rule.count();
  std::vector<double> y;
  std::vector<double> x;
  for (const StationRecord& r : records) {
    const auto it = index.find(r.year);
    if (it == index.end()) continue;
    d.locations.push_back({r.lon, r.lat});
    y.push_back(r.value);
    d.replicate.push_back(it->second);
    d.region.push_back(rule.region_of({r.lon, r.lat}));
    for (const std::string& name : names) x.push_back(name == "intercept" ? 1.0 : r.elev_km);
  }
  d.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  d.covariates = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      x.data(), static_cast<Eigen::Index>(y.size()), static_cast<Eigen::Index>(names.size()));
  return d;
}

// ---------------------------------------------------------------------------
// fit.json

std::string fit_to_json(const RunConfig& cfg, const ModelSpec& spec, const Dataset& data,
                        const FitResult& fit, const std::vector<int>& years) {
  const Grid& grid = spec.grid();
  json model;
  model["stationary"] = spec.stationary();
  model["grid"] = {{"lon_min", grid.x_min()}, {"lon_max", grid.x_max()}, {"lat_min", grid.y_min()},
                   {"lat_max", grid.y_max()}, {"nx", grid.nx()},        {"ny", grid.ny()}};
  model["basis"] = {{"k", spec.field_basis().bx().size()},
                    {"l", spec.field_basis().by().size()},
                    {"index", "i * l + j (x-function i, y-function j)"}};
  json log_tau = json::array();
  for (double t : spec.tau()) log_tau.push_back(std::log(t));
  model["log_tau"] = log_tau;
  model["tau_beta"] = spec.tau_beta();
  model["regions"] = data.n_regions;
  const RegionRule rule = regions_from_config(cfg);
  model["region_split"] = rule.split ? json(*rule.split) : json(nullptr);
  model["covariates"] = covariate_names(cfg);
  model["years"] = years;

  json out;
  out["model"] = model;
  out["theta"] = vec(fit.params.to_vector());
  json fields;
  for (int f = 0; f < kFieldCount; ++f) fields[kFieldNames[f]] = vec(fit.params.alpha[f]);
  out["alpha"] = fields;
  out["log_tau_noise"] = vec(fit.params.log_tau_noise);
  out["loglik"] = fit.loglik;
  out["gradient_norm"] = fit.gradient_norm;
  out["iterations"] = fit.iterations;
  out["evaluations"] = fit.evaluations;
  out["converged"] = fit.converged;
  out["message"] = fit.message;
  out["observations"] = data.size();
  if (fit.std_errors) out["std_errors"] = vec(*fit.std_errors);
  if (spec.stationary()) {
    const StationarySummary s = verify_stationary_summary(fit.params);
    out["stationary_summary"] = {
        {"kappa2", s.kappa2},
        {"H", {{s.h(0, 0), s.h(0, 1)}, {s.h(1, 0), s.h(1, 1)}}},
        {"H_over_kappa2",
         {{s.h_over_kappa2(0, 0), s.h_over_kappa2(0, 1)}, {s.h_over_kappa2(1, 0), s.h_over_kappa2(1, 1)}}},
        {"sigma2", s.sigma2},
        {"tau_noise", s.tau_noise}};
  }
  // Wall-clock time breaks byte-identical reruns, so it is opt-in.
  if (cfg.flag("record_timing", false)) out["timing_seconds"] = fit.seconds;
  return out.dump(2) + '\n';
}

NonStatParams params_from_fit_json(const std::filesystem::path& path, const ModelSpec& spec,
                                   int regions) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open fit file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  try {
    const json& model = j.at("model");
    const Grid& grid = spec.grid();
    if (model.at("stationary").get<bool>() != spec.stationary() ||
        model.at("grid").at("nx").get<int>() != grid.nx() ||
        model.at("grid").at("ny").get<int>() != grid.ny() ||
        model.at("basis").at("k").get<int>() != spec.field_basis().bx().size() ||
        model.at("basis").at("l").get<int>() != spec.field_basis().by().size() ||
        model.at("regions").get<int>() != regions) {
      throw InvalidArgumentError(path.string() + " was fitted with a different model layout");
    }
    const std::vector<double> theta = j.at("theta").get<std::vector<double>>();
    return NonStatParams::from_vector(
        Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size())),
        spec.coefficients(), regions);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Subcommands

std::vector<std::filesystem::path> run(const std::string& subcommand, const RunConfig& cfg,
                                       std::ostream& log) {
  std::vector<std::filesystem::path> written;
  const ModelSpec spec = spec_from_config(cfg);
  const Grid& grid = spec.grid();
  const FitOptions options = fit_options(cfg);

  if (subcommand == "fit") {
    const auto [data, years] = load_dataset(cfg, grid, log);
    const FitResult res = fit(spec, data, std::nullopt, options);
    log << "fit: loglik " << format_double(res.loglik) << ", " << res.iterations << " iterations, "
        << res.seconds << " s" << (res.converged ? "" : " (not converged: " + res.message + ")")
        << '\n';
    write_all({{output_path(cfg, "fit_output", "fit.json"), fit_to_json(cfg, spec, data, res, years)}},
              written);
    return written;
  }

  if (subcommand == "predict") {
    const auto [data, years] = load_dataset(cfg, grid, log);
    const NonStatParams params = params_from_fit_json(
        cfg.path("fit", cfg.path("output_dir", ".") / "fit.json"), spec, data.n_regions);
    std::optional<Eigen::MatrixXd> cov_grid;
    if (data.covariate_count() > 0) cov_grid = load_covariate_grid(cfg, grid);
    const PredictionGrid pred = predict_grid(spec, params, data, regions_from_config(cfg), cov_grid);

    const bool many = data.n_replicates > 1;
    std::vector<std::vector<double>> rows;
    for (Eigen::Index t = 0; t < pred.mean.cols(); ++t) {
      for (std::size_t c = 0; c < pred.centers.size(); ++c) {
        const auto i = static_cast<Eigen::Index>(c);
        std::vector<double> row{pred.centers[c].x, pred.centers[c].y, pred.mean(i, t),
                                pred.sd_latent(i, t), pred.sd_obs(i, t)};
        if (many) row.push_back(years[t]);
        rows.push_back(std::move(row));
      }
    }
    const std::string header = many ? "lon,lat,mean,sd_latent,sd_obs,year" : "lon,lat,mean,sd_latent,sd_obs";

    const std::vector<Point> refs = cfg.has("reference_points")
                                        ? parse_points(cfg.str("reference_points"))
                                        : std::vector<Point>{grid.center(grid.ny() / 2, grid.nx() / 2)};
    std::vector<CellIndex> ref_cells;
    for (const Point& p : refs) ref_cells.push_back(grid.locate(p));
    const CovSummary cov = cov_summary(spec, params, ref_cells);
    std::string cov_header = "lon,lat,marginal_sd";
    for (std::size_t r = 0; r < refs.size(); ++r) cov_header += ",corr_" + std::to_string(r + 1);
    std::vector<std::vector<double>> cov_rows;
    for (int c = 0; c < grid.size(); ++c) {
      const Point p = grid.center(CellIndex{c});
      std::vector<double> row{p.x, p.y, cov.marginal_sd[c]};
      for (const auto& corr : cov.correlation) row.push_back(corr[c]);
      cov_rows.push_back(std::move(row));
    }
    write_all({{output_path(cfg, "prediction_output", "prediction.csv"), csv_text(header, rows)},
               {output_path(cfg, "covsummary_output", "covsummary.csv"), csv_text(cov_header, cov_rows)}},
              written);
    return written;
  }

  if (subcommand == "score") {
    Dataset train, test;
    if (cfg.has("test_stations")) {
      auto records = stations_from(cfg, "stations", grid, log);
      const auto test_records = stations_from(cfg, "test_stations", grid, log);
      auto all = records;
      all.insert(all.end(), test_records.begin(), test_records.end());
      const auto years = replicate_years(cfg, all);
      train = dataset_from_records(cfg, records, years);
      test = dataset_from_records(cfg, test_records, years);
    } else {
      const double fraction = cfg.num("holdout", 0.2);
      if (!(fraction > 0.0)) throw InvalidArgumentError("holdout fraction must be positive (empty test set)");
      const auto [data, years] = load_dataset(cfg, grid, log);
      std::tie(train, test) = holdout_split(data, fraction, seed_of(cfg));
    }
    if (test.size() == 0) throw InvalidArgumentError("empty test set");
    const FitResult res = fit(spec, train, std::nullopt, options);
    const ScoreReport score = score_holdout(spec, res.params, train, test);
    json out{{"crps", score.crps},          {"log_score", score.log_score}, {"rmse", score.rmse},
             {"n_train", train.size()},     {"n_test", test.size()},        {"train_loglik", res.loglik},
             {"converged", res.converged}};
    log << "score: crps " << score.crps << ", log-score " << score.log_score << ", rmse "
        << score.rmse << '\n';
    write_all({{output_path(cfg, "scores_output", "scores.json"), out.dump(2) + '\n'}}, written);
    return written;
  }

  if (subcommand == "cv") {
    const auto [data, years] = load_dataset(cfg, grid, log);
    std::vector<LogTau> candidates;
    if (cfg.has("cv_candidates")) {
      std::istringstream in(cfg.str("cv_candidates"));
      std::string item;
      while (std::getline(in, item, ';')) {
        std::istringstream row(item);
        LogTau c;
        if (!(row >> c[0] >> c[1] >> c[2] >> c[3])) {
          throw InvalidArgumentError("cv_candidates must be written as 'a b c d; a b c d'");
        }
        candidates.push_back(c);
      }
    } else {
      candidates = default_cv_grid(cfg.list("cv_values", {2.0, 4.0, 6.0, 8.0}));
    }
    const CvResult cv = cv_penalty_search(spec, data, candidates, cfg.integer("cv_folds", 5),
                                          seed_of(cfg), options);
    json table = json::array();
    for (const CvEntry& e : cv.table) {
      table.push_back({{"log_tau", e.log_tau}, {"score", e.score}, {"fold_scores", e.fold_scores}});
    }
    const CvEntry& best = cv.table[cv.best];
    json out{{"folds", cfg.integer("cv_folds", 5)},
             {"seed", seed_of(cfg)},
             {"candidates", table},
             {"argmin", {{"index", cv.best}, {"log_tau", best.log_tau}, {"score", best.score}}}};
    write_all({{output_path(cfg, "cv_output", "cv.json"), out.dump(2) + '\n'}}, written);
    return written;
  }

  if (subcommand == "simulate") {
    const RegionRule rule = regions_from_config(cfg);
    NonStatParams truth;
    if (cfg.has("truth_fit")) {
      truth = params_from_fit_json(cfg.path("truth_fit"), spec, rule.count());
    } else {
      std::vector<double> log_tau = cfg.list("truth_log_tau");
      if (log_tau.size() == 1 && rule.count() == 2) log_tau.push_back(log_tau[0]);
      if (static_cast<int>(log_tau.size()) != rule.count()) {
        throw InvalidArgumentError("truth_log_tau needs one value per nugget region");
      }
      truth = NonStatParams::constant(spec.coefficients(), cfg.num("truth_log_kappa2"),
                                      cfg.num("truth_log_gamma"), cfg.num("truth_vx", 0.0),
                                      cfg.num("truth_vy", 0.0), log_tau);
    }
    SimulationOptions so;
    so.replicates = cfg.integer("simulate_replicates", 1);
    so.seed = seed_of(cfg);
    so.regions = rule;
    Dataset sim;
    if (cfg.has("simulate_locations")) {
      std::vector<Point> locs;
      std::set<std::pair<double, double>> seen;
      for (const StationRecord& r : stations_from(cfg, "simulate_locations", grid, log)) {
        if (seen.insert({r.lon, r.lat}).second) locs.push_back({r.lon, r.lat});
      }
      sim = simulate_dataset(spec, truth, locs, so);
    } else {
      sim = simulate_dataset(spec, truth, cfg.integer("simulate_stations", 200), so);
    }
    const int first_year = cfg.integer("simulate_first_year", 2000);
    std::vector<StationRecord> out;
    for (int i = 0; i < sim.size(); ++i) {
      out.push_back({sim.locations[i].x, sim.locations[i].y, 0.0, sim.y[i], first_year + sim.replicate[i]});
    }
    const auto path = output_path(cfg, "simulate_output", "stations.csv");
    write_stations(path, out);
    written.push_back(path);
    return written;
  }

  if (subcommand == "variogram") {
    const auto [data, years] = load_dataset(cfg, grid, log);
    const double diag = std::hypot(grid.x_max() - grid.x_min(), grid.y_max() - grid.y_min());
    const double max_dist = cfg.num("variogram_max_dist", 0.5 * diag);
    const double width = cfg.num("variogram_bin_width", max_dist / 30.0);
    std::optional<LongitudeFilter> filter;
    const std::string side = cfg.str("variogram_side", "all");
    if (side != "all") {
      const RegionRule rule = regions_from_config(cfg);
      if (!rule.split) throw InvalidArgumentError("variogram_side needs a region_split threshold");
      if (side != "west" && side != "east") throw InvalidArgumentError("variogram_side must be all, west or east");
      filter = LongitudeFilter{*rule.split, side == "west"};
    }
    const Variogram v = variogram(data, width, max_dist, filter);
    std::vector<std::vector<double>> rows;
    for (std::size_t b = 0; b < v.bin_center.size(); ++b) {
      rows.push_back({v.bin_center[b], v.semivariance[b], static_cast<double>(v.count[b])});
    }
    write_all({{output_path(cfg, "variogram_output", "variogram.csv"),
                csv_text("bin_center,semivariance,count", rows)}},
              written);
    return written;
  }

  if (subcommand == "detrend") {
    const auto records = stations_from(cfg, "stations", grid, log);
    const auto years = replicate_years(cfg, records);
    const Dataset data = dataset_from_records(cfg, records, years);
    const DetrendResult res = detrend(data, spec, options);
    std::vector<StationRecord> resid;
    std::map<int, int> index;
    for (std::size_t t = 0; t < years.size(); ++t) index[years[t]] = static_cast<int>(t);
    int row = 0;
    for (const StationRecord& r : records) {
      if (!index.count(r.year)) continue;
      StationRecord out = r;
      out.value = res.residuals.y[row++];
      resid.push_back(out);
    }
    std::vector<std::vector<double>> mean_rows;
    for (int c = 0; c < grid.size(); ++c) {
      const Point p = grid.center(CellIndex{c});
      mean_rows.push_back({p.x, p.y, res.mean_field[c]});
    }
    const auto resid_path = output_path(cfg, "residual_output", "residuals.csv");
    write_all({{resid_path, stations_csv(resid)},
               {output_path(cfg, "mean_field_output", "mean_field.csv"), csv_text("lon,lat,mean", mean_rows)}},
              written);
    return written;
  }

  throw InvalidArgumentError("unknown subcommand '" + subcommand + "'");
}

}  // namespace spdegrf
