#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "spdegrf/inference.hpp"
#include "spdegrf/io.hpp"

namespace spdegrf {

/// Builds the model described by the config (grid, basis, penalties, region
/// rule, stationarity).
ModelSpec spec_from_config(const RunConfig& cfg);
RegionRule regions_from_config(const RunConfig& cfg);

/// Turns station records into a dataset: years become replicates (filtered
/// by the `years` key) and the `covariates` key selects columns.
Dataset dataset_from_records(const RunConfig& cfg, const std::vector<StationRecord>& records,
                             const std::vector<int>& years);
std::vector<int> replicate_years(const RunConfig& cfg, const std::vector<StationRecord>& records);

std::string fit_to_json(const RunConfig& cfg, const ModelSpec& spec, const Dataset& data,
                        const FitResult& fit, const std::vector<int>& years);
/// Reads theta back from fit.json and checks it against the model layout.
NonStatParams params_from_fit_json(const std::filesystem::path& path, const ModelSpec& spec,
                                   int regions);

/// Runs one subcommand; returns the files written. Throws on failure, in
/// which case no previously existing output has been replaced.
std::vector<std::filesystem::path> run(const std::string& subcommand, const RunConfig& cfg,
                                       std::ostream& log);

}  // namespace spdegrf
