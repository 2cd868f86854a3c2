#pragma once

#include <cstdint>
#include <string>

#include "hvi/models.hpp"

namespace hvi {

enum class Variant {
  IWHVI,
  DIWHVI,
  SIVI,
  SIVI_REUSED,
  SIVI_LIKE,
  SIVI_EQUICOMP,
  SIVI_EQUISAMPLE,
  DIWHVI_EVAL,
  HVM,
  DSIVI,
  ELBO
};

const char* variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct BoundConfig {
  Index M = 1;
  Index K = 0;
  Index L = 1;
  Variant variant = Variant::IWHVI;
  int jackknife_order = 0;
  /// Throws ConfigError when the counts are out of range.
  void validate() const;
};

/// A batch of bound values, one per unit, plus diagnostics.
struct Estimate {
  Var value;            ///< units x 1
  Matrix log_weights;   ///< units x n: the terms of the final log-mean-exp
  Matrix ess;           ///< units x 1, (Σw)² / Σw² over the normalized weights
  bool degenerate = false;  ///< some unit had every weight at -inf
  std::int64_t density_evals = 0;  ///< conditional-density evaluations of q(z | psi, x)

  double mean() const;
};

/// Log weights of psi_0..psi_K under tau, as used by U_K (psi_0 present) or L_K (absent).
struct AuxTerms {
  Var psi0;      ///< rows x d_psi, unbound for L_K
  Var psi_aux;   ///< (K * rows) x d_psi, block k holds psi_{k+1}
  Dist tau;      ///< tau(. | z, x), rows
  Var log_q;     ///< rows x n: log q(z, psi_k | x)
  Var log_tau;   ///< rows x n: log tau(psi_k | z, x)
  Var log_w;     ///< log_q - log_tau
  std::int64_t density_evals = 0;
};

/// Draws psi_1..psi_K ~ tau(. | z, x) and evaluates the importance log weights;
/// psi0 (if bound) occupies column 0.
AuxTerms aux_terms(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau, const Conditioning& cond,
                   const Var& z, const Var& psi0, Index K, RngStream& rng);

/// Log-mean-exp over columns with ESS and degeneracy diagnostics.
Estimate log_mean_exp_estimate(const Var& log_w);

/// U_K given (z, psi0) drawn jointly from q(psi0, z | x).
Estimate upper_bound_U_joint(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau,
                             const Conditioning& cond, const Var& z, const Var& psi0, Index K, RngStream& rng);
/// U_K at a fixed z; psi0 is drawn from the exact posterior. Throws UnsupportedError if the model has none.
Estimate upper_bound_U(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau, const Conditioning& cond,
                       const Var& z, Index K, RngStream& rng);
/// L_K = log (1/K) Σ_{k=1..K} q(z, psi_k | x) / tau(psi_k | z, x). K = 0 is an error.
Estimate lower_bound_L(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau, const Conditioning& cond,
                       const Var& z, Index K, RngStream& rng);

/// Internal quantities of a DIWHVI evaluation, for gradient estimators.
struct DiwhviTrace {
  Conditioning cond;  ///< the M-fold tiled conditioning
  Var z;              ///< (M * units) x d_z
  AuxTerms aux;
  Var alpha;          ///< (M * units) x 1: log p(x|z) + prior term - U term
  Var prior_term;
  Var log_lik;
};

/// IWHVI lower bound on log p(x) (M must be 1).
Estimate iwhvi_elbo(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const AuxiliaryInference& tau,
                    const Conditioning& x, const BoundConfig& cfg, RngStream& rng);
/// DIWHVI: M independent repetitions of the IWHVI sampling process, combined by log-mean-exp.
/// Draw order: all psi_{m,0}, then all z_m, then all psi_{m,1:K}, then all zeta_{m,1:L}.
Estimate diwhvi_elbo(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const AuxiliaryInference& tau,
                     const Conditioning& x, const BoundConfig& cfg, RngStream& rng, DiwhviTrace* trace = nullptr);

/// SIVI bound: log p(x, z) - log mean_k q(z | psi_k, x) with psi_{1:K} ~ q(psi | x).
Estimate sivi_elbo(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const Conditioning& x, Index K,
                   RngStream& rng);
/// SIVI with psi_{1:K} shared by all M samples z_m.
Estimate sivi_reused(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const Conditioning& x, Index M,
                     Index K, RngStream& rng);
/// HVM bound: log p(x, z) - log q(z, psi_0 | x) + log tau(psi_0 | z, x).
Estimate hvm_elbo(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const AuxiliaryInference& tau,
                  const Conditioning& x, RngStream& rng);
/// DSIVI: SIVI denominator and the prior's own mixing distribution for the prior term.
Estimate dsivi_elbo(Scope& scope, const Likelihood& lik, const HierarchicalModel& prior, const HierarchicalModel& q,
                    const Conditioning& x, Index K, Index L, RngStream& rng);
/// ELBO for a factorized q: log p(x, z) - log q(z | x).
Estimate plain_elbo(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const Conditioning& x,
                    RngStream& rng);

/// Evaluation variants: SIVI_LIKE, SIVI_EQUICOMP, SIVI_EQUISAMPLE, DIWHVI_EVAL (or DIWHVI).
Estimate eval_variant(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const AuxiliaryInference& tau,
                      const Conditioning& x, Index M, Index K, Variant variant, RngStream& rng);

/// Upper bound on KL(q(z | x) || p(z)): U_K of q minus L_L of p, with (z, psi_0) drawn jointly.
Estimate kl_upper_bound(Scope& scope, const HierarchicalModel& q, const HierarchicalModel& p,
                        const AuxiliaryInference& tau, const AuxiliaryInference& rho, const Conditioning& x, Index K,
                        Index L, RngStream& rng);
/// Lower bound on the same KL: L_K of q minus U_L of p with zeta_0 ~ p(zeta | z).
/// Throws UnsupportedError unless p has an exact posterior.
Estimate kl_lower_bound(Scope& scope, const HierarchicalModel& q, const HierarchicalModel& p,
                        const AuxiliaryInference& tau, const AuxiliaryInference& rho, const Conditioning& x, Index K,
                        Index L, RngStream& rng);

/// c(K, J, j) = (-1)^j (K - j)^J / ((J - j)! j!).
double sharot_coeff(Index K, Index J, Index j);
/// Jackknife combination of subset-averaged U bounds from one row of log weights (psi_0 first).
double jackknife_from_log_weights(const Eigen::RowVectorXd& log_w, Index J);
/// Order-J jackknife estimate of log q(z | x); psi_0 from the exact posterior. Not a guaranteed bound.
Estimate jackknife_U(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau, const Conditioning& cond,
                     const Var& z, Index K, Index J, RngStream& rng);

/// Monte Carlo E_{q(z|x)} KL(tau(psi | z, x) || q(psi | x)) with n_samples draws per unit; averaged over units.
double expected_kl_tau_prior(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau,
                             const Conditioning& x, Index n_samples, RngStream& rng);

// ---- omega sampler -----------------------------------------------------------
// Draw psi_hat_0..K ~ tau, pick h with probability w_h / Σ w, then put psi_hat_h first and
// the rest after it in their original order.

/// Selection probabilities w_h / Σ w from one row of log weights.
Eigen::RowVectorXd omega_select_probs(const Eigen::RowVectorXd& log_w);
/// (psi_hat_h, psi_hat_0, .., psi_hat_{h-1}, psi_hat_{h+1}, ..).
std::vector<Index> omega_arrange(const std::vector<Index>& psi_hat, Index h);
/// One draw of psi_0..psi_K for a finite model; tau_probs is Z x S.
std::vector<Index> omega_sample(const FiniteHvm& q, const Matrix& tau_probs, Index z, Index K, RngStream& rng);

/// Threshold below which expected_kl_tau_prior signals a collapsed auxiliary variable.
inline constexpr double kCollapseThreshold = 0.05;

}  // namespace hvi
