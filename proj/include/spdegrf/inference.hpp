#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spdegrf/model.hpp"

namespace spdegrf {

// ---------------------------------------------------------------------------
// Prediction

/// Predictive means and standard deviations at observation-like sites.
struct PointPrediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd_latent;  // x^T beta + u(s)
  Eigen::VectorXd sd_obs;     // adds the region's nugget variance
};

/// Sites to predict at; covariates must have the training data's width.
struct PredictionSites {
  std::vector<Point> locations;
  Eigen::MatrixXd covariates;
  std::vector<int> replicate;
  std::vector<int> region;

  int size() const { return static_cast<int>(locations.size()); }
  static PredictionSites from_dataset(const Dataset& data);
};

PointPrediction predict_points(const Problem& problem, const NonStatParams& params,
                               const PredictionSites& sites);

/// Per-cell predictions, one column per replicate.
struct PredictionGrid {
  std::vector<Point> centers;
  Eigen::MatrixXd mean;       // cells x T
  Eigen::MatrixXd sd_latent;  // cells x T
  Eigen::MatrixXd sd_obs;     // cells x T
};

/// Predicts at every cell centre. `covariate_grid` (cells x p) is required
/// exactly when the data carry covariates.
PredictionGrid predict_grid(const ModelSpec& spec, const NonStatParams& params,
                            const Dataset& data, const RegionRule& regions,
                            const std::optional<Eigen::MatrixXd>& covariate_grid = std::nullopt);

struct CovSummary {
  Eigen::VectorXd marginal_sd;               // sqrt(diag Q^{-1})
  std::vector<Eigen::VectorXd> correlation;  // one field per reference cell
};

CovSummary cov_summary(const ModelSpec& spec, const NonStatParams& params,
                       std::span<const CellIndex> reference_cells);

// ---------------------------------------------------------------------------
// Scoring

double crps_gaussian(double mu, double sigma, double y);
double mean_crps(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& y);

/// -log pi(test | train, theta), via the difference of two marginal densities.
double log_score_holdout(const ModelSpec& spec, const NonStatParams& params, const Dataset& train,
                         const Dataset& test);

double rmse(const Eigen::VectorXd& predictions, const Eigen::VectorXd& y_test);

struct ScoreReport {
  double crps = 0.0;
  double log_score = 0.0;
  double rmse = 0.0;
};

ScoreReport score_holdout(const ModelSpec& spec, const NonStatParams& params, const Dataset& train,
                          const Dataset& test);

// ---------------------------------------------------------------------------
// Data splitting (by distinct location, so a held-out site is unseen in
// every replicate)

std::vector<int> fold_assignment(const Dataset& data, int folds, std::uint64_t seed);
std::pair<Dataset, Dataset> holdout_split(const Dataset& data, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Variograms

struct LongitudeFilter {
  double threshold = 0.0;
  bool west = true;  // keep x < threshold; otherwise x >= threshold
};

struct Variogram {
  std::vector<double> bin_center;
  std::vector<double> semivariance;  // NaN for empty bins
  std::vector<long> count;
};

/// Empirical semivariogram over planar distances; pairs are formed within
/// each replicate only.
Variogram variogram(const Dataset& data, double bin_width, double max_dist,
                    std::optional<LongitudeFilter> filter = std::nullopt);

// ---------------------------------------------------------------------------
// Penalty selection by cross-validation

using LogTau = std::array<double, 4>;

struct CvEntry {
  LogTau log_tau{};
  double score = 0.0;  // mean held-out log-score over folds
  std::vector<double> fold_scores;
};

struct CvResult {
  std::vector<CvEntry> table;
  std::size_t best = 0;
};

/// Every 4-tuple over the given per-penalty values ({2, 4, 6, 8} by default).
std::vector<LogTau> default_cv_grid(const std::vector<double>& values = {2.0, 4.0, 6.0, 8.0});

CvResult cv_penalty_search(const ModelSpec& spec_template, const Dataset& data,
                           const std::vector<LogTau>& candidates, int folds, std::uint64_t seed,
                           const FitOptions& options = {});

// ---------------------------------------------------------------------------
// De-trending and simulation

struct DetrendResult {
  Dataset residuals;
  Eigen::VectorXd mean_field;  // per cell, averaged over replicates
  FitResult fit;
};

/// Fits the stationary replicate model, averages the per-replicate posterior
/// mean surfaces and subtracts the average from every observation.
DetrendResult detrend(const Dataset& data, const ModelSpec& stationary_spec,
                      const FitOptions& options = {});

struct SimulationOptions {
  int replicates = 1;
  std::uint64_t seed = 1;
  RegionRule regions;
  Eigen::MatrixXd covariates;  // N x p for the given locations (optional)
  Eigen::VectorXd beta;        // length p
};

Dataset simulate_dataset(const ModelSpec& spec, const NonStatParams& truth,
                         const std::vector<Point>& locations, const SimulationOptions& options);
/// As above, with `count` locations drawn uniformly over the domain.
Dataset simulate_dataset(const ModelSpec& spec, const NonStatParams& truth, int count,
                         const SimulationOptions& options);

std::vector<Point> random_locations(const Grid& grid, int count, std::uint64_t seed);

}  // namespace spdegrf
