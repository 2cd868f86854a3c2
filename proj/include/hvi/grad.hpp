#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hvi/bounds.hpp"

namespace hvi {

enum class Estimator { AUTODIFF, IWHVI_DREG };

const char* estimator_name(Estimator e);
/// Accepts "autodiff" or "dreg" (any case).
Estimator parse_estimator(const std::string& s);

struct GradEstimate {
  Estimator estimator = Estimator::AUTODIFF;
  std::map<std::string, Matrix> grads;  ///< one entry per trainable block, block-shaped
  int replicates = 1;
  double objective = 0.0;

  /// Gradients flattened block by block (name order, column-major within a block).
  Eigen::VectorXd flat() const;
};

/// Builds a 1x1 objective on the tape.
using Objective = std::function<Var(Scope&, RngStream&)>;

/// One forward and backward pass. Throws UnsupportedError if the objective drew a
/// discrete sample whose distribution depends on a trainable parameter.
GradEstimate grad_autodiff(const Objective& objective, const ParamStore& store, RngStream& rng,
                           const ParamFilter& trainable = {});

struct DregOptions {
  /// Drop the psi_0 score term (biased; for the SNR study).
  bool drop_b = false;
};

/// IWHVI-DReG gradient of the batch-mean DIWHVI bound w.r.t. the tau parameters selected by `eta`.
/// Needs an explicit prior.
GradEstimate grad_iwhvi_dreg(const GenerativeModel& p, const HierarchicalModel& q, const AuxiliaryInference& tau,
                             const Conditioning& x, const BoundConfig& cfg, const ParamStore& store,
                             const ParamFilter& eta, RngStream& rng, DregOptions opt = {});

/// Batch-mean U_K of log q(z) with (z, psi_0) drawn jointly; `rows` draws.
Var upper_objective(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau, Index rows, Index K,
                    RngStream& rng);
/// Batch-mean L_K of log q(z) with z ~ q(z).
Var lower_objective(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau, Index rows, Index K,
                    RngStream& rng);

/// DReG form of the gradient of upper_objective w.r.t. eta (same draws).
GradEstimate grad_upper_dreg(const HierarchicalModel& q, const AuxiliaryInference& tau, Index rows, Index K,
                             const ParamStore& store, const ParamFilter& eta, RngStream& rng, DregOptions opt = {});
/// DReG gradient of lower_objective (the IWAE-style direction).
GradEstimate grad_lower_dreg(const HierarchicalModel& q, const AuxiliaryInference& tau, Index rows, Index K,
                             const ParamStore& store, const ParamFilter& eta, RngStream& rng);

struct SnrReport {
  int replicates = 0;
  std::vector<std::string> labels;          ///< "block[i]" per scalar parameter
  Eigen::VectorXd mean;                     ///< mean gradient per scalar parameter
  Eigen::VectorXd stddev;                   ///< sample std per scalar parameter
  std::vector<std::optional<double>> snr;   ///< missing when stddev = 0
  double mean_snr = 0.0;                    ///< over the defined entries
  double p05 = 0.0, p95 = 0.0;
  double mean_snr_se = 0.0;                 ///< bootstrap over replicates
  Index missing = 0;
  /// Replicate gradients, replicates x parameters.
  Matrix samples;
};

using GradFn = std::function<GradEstimate(RngStream&)>;

/// Replicate r uses base.split(r). `bootstrap` resamples for mean_snr_se (0 skips it).
SnrReport measure_snr(const GradFn& fn, int replicates, const RngStream& base, int bootstrap = 200);
/// SNR summary from precomputed replicate gradients (replicates x parameters).
SnrReport snr_from_samples(Matrix samples, std::vector<std::string> labels, int bootstrap = 200,
                           std::uint64_t seed = 0);

/// Exact E[U_K] (or E[L_K]) for a finite model recorded on the tape, with the tau table's
/// logits as parameters; enumerates every tuple of psi draws.
Var exact_expected_bound_tape(Scope& scope, const FiniteHvm& q, const TableAuxiliary& tau, Index z, Index K,
                              bool upper);

}  // namespace hvi
