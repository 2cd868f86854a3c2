#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace hvi {

/// Flat key = value settings. Lines starting with '#' are comments.
using KeyValues = std::map<std::string, std::string>;

/// Throws ConfigError on a malformed line or a repeated key.
KeyValues parse_key_values(const std::string& text, const std::string& source = "<config>");
KeyValues read_key_values(const std::string& path);

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 1;
  int K = 0;
  int M = 1;
  int L = 1;
  int J = 1;
  int replicates = 10;
  std::vector<int> k_list;
  std::vector<int> m_list;

  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  bool amsgrad = false;
  int batch_size = 100;
  int epochs = 50;
  int steps = 2000;
  double lr_anneal_factor = 0.0;  ///< 0 disables; lr = base * factor^(epoch / period)
  int lr_anneal_period = 100;
  std::vector<std::pair<int, int>> k_schedule;  ///< (first epoch, K)
  int warmup_inner = 0;  ///< epochs of linear warm-up of the inner (tau) KL weight; 0 disables
  int warmup_outer = 0;  ///< same for the outer (prior) KL weight
  std::string estimator = "autodiff";

  std::string data_path = "data/mnist";
  int subset_size = 2000;
  std::string binarization = "dynamic";
  std::string output;
  std::string checkpoint;

  int dim = 50;
  std::vector<int> hidden;
  int eval_every = 250;
  int eval_batch = 1000;
  int eval_runs = 10;
  int eval_subset = 100;
  int tau_refit_epochs = 0;
  bool psi_gate = false;
  bool tau_gate = false;
  int bootstrap = 200;
  int models = 50;
  std::vector<std::string> variants;

  /// Defaults for an experiment name; throws ConfigError for an unknown one.
  static ExperimentConfig defaults(const std::string& experiment);
  /// Applies settings on top of the current values; unknown keys are errors.
  void apply(const KeyValues& kv);
  /// Checks ranges and cross-field constraints.
  void validate() const;
  /// K in effect at an epoch under k_schedule.
  int k_at_epoch(int epoch) const;
  /// Learning rate at an epoch, with annealing when enabled.
  double lr_at_epoch(int epoch) const;
};

/// Warm-up multiplier min(1, epoch / span); 1 when span is 0.
double warmup_weight(int epoch, int span);

const std::vector<std::string>& experiment_names();

}  // namespace hvi
