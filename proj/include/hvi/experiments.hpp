#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hvi/config.hpp"

namespace hvi {

struct CsvRow {
  std::string experiment;
  std::uint64_t seed = 0;
  long step = 0;
  int K = 0;
  int M = 1;
  std::string estimator;
  std::string metric;
  double value = 0.0;
  std::optional<double> ci_low, ci_high;
  double wall_ms = 0.0;
};

inline constexpr const char* kCsvHeader =
    "experiment,seed,step,K,M,estimator,metric,value,ci_low,ci_high,wall_ms";

std::string format_row(const CsvRow& row);
void write_csv(std::ostream& out, const std::vector<CsvRow>& rows);
/// Parses CSV text written by write_csv; throws DataError on a malformed line.
std::vector<CsvRow> read_csv(const std::string& text);

/// Optional progress sink (one line per call).
using Progress = std::function<void(const std::string&)>;

/// Dispatches on cfg.experiment. Results depend only on the config (wall_ms aside).
std::vector<CsvRow> run_experiment(const ExperimentConfig& cfg, const Progress& progress = {});

std::vector<CsvRow> run_toy_laplace(const ExperimentConfig& cfg, const Progress& progress = {});
std::vector<CsvRow> run_snr(const ExperimentConfig& cfg, const Progress& progress = {});
std::vector<CsvRow> run_vae_train(const ExperimentConfig& cfg, const Progress& progress = {});
std::vector<CsvRow> run_vae_eval(const ExperimentConfig& cfg, const Progress& progress = {});
std::vector<CsvRow> run_bounds_check(const ExperimentConfig& cfg, const Progress& progress = {});
std::vector<CsvRow> run_jackknife_study(const ExperimentConfig& cfg, const Progress& progress = {});

/// Runs fn(0..n-1) on a pool of worker threads; fn must only write to its own slot.
void parallel_for(int n, const std::function<void(int)>& fn);

/// Rows matching a metric (and optionally K, estimator).
std::vector<CsvRow> select(const std::vector<CsvRow>& rows, const std::string& metric, std::optional<int> K = {},
                           const std::string& estimator = "");

}  // namespace hvi
