#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "hvi/rng.hpp"

// Reference computations for tests. Plain doubles only: nothing here touches the tape
// or the estimators it is used to check.
namespace hvi::oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr std::int64_t kDefaultBudget = 1000000;

struct FiniteSupport {
  std::vector<double> points;
  std::vector<double> probs;
  /// Throws DomainError unless probs sum to 1 within 1e-12 and points are distinct.
  void validate() const;
};

/// q(psi) over {0..S-1} and q(z | psi) as an S x Z table.
struct FiniteModel {
  Vector psi;
  Matrix zgp;

  Index S() const { return psi.size(); }
  Index Z() const { return zgp.cols(); }
  double log_joint(Index z, Index s) const;
  Vector marginal() const;            ///< q(z), length Z
  double log_marginal(Index z) const;
  Vector posterior(Index z) const;    ///< q(psi | z), length S
};

/// p(x | z) as a Z x X table and p(z).
struct FiniteGenerative {
  Matrix x_given_z;
  Vector prior;
  double log_evidence(Index x) const;
};

/// Dirichlet(1) draw floored at 0.01 and renormalized.
Vector random_simplex(Index n, RngStream& rng);
/// Rows are independent random simplices.
Matrix random_table(Index rows, Index cols, RngStream& rng);
/// Support sizes drawn from 2..4 unless given.
FiniteModel random_finite_model(RngStream& rng, Index S = 0, Index Z = 0);

enum class BoundKind { U, L, J };

/// Exact E[bound] at z by enumerating every tuple; tau is Z x S.
/// U: psi_0 ~ q(psi | z), psi_1..K ~ tau. L: psi_1..K ~ tau. J: order-J jackknife of U.
double exact_expected_bound(const FiniteModel& q, const Matrix& tau, Index z, Index K, BoundKind kind, int J = 1,
                            std::int64_t budget = kDefaultBudget);

/// Jackknife combination of log weights (psi_0 first), written out directly.
double jackknife(const std::vector<double>& log_w, int J);
double sharot(int K, int J, int j);

/// Closed-form omega(psi_0..K | z).
double omega_density(const FiniteModel& q, const Matrix& tau, Index z, const std::vector<Index>& tuple);
/// Marginal of the omega generative process by enumeration, keyed by tuple.
std::map<std::vector<Index>, double> omega_enumerated(const FiniteModel& q, const Matrix& tau, Index z, Index K);

/// E[DIWHVI] for an explicit finite prior. M = 1 is IWHVI.
double exact_expected_diwhvi(const FiniteGenerative& p, const FiniteModel& q, const Matrix& tau, Index x, Index M,
                             Index K, std::int64_t budget = kDefaultBudget);
/// E[bound] where every z_m keeps its own psi_{m,0} and shares a pool of `pool` draws from q(psi).
/// pool = K is SIVI with reuse; pool = M K is the equal-sample variant.
double exact_expected_sivi_pool(const FiniteGenerative& p, const FiniteModel& q, Index x, Index M, Index pool,
                                std::int64_t budget = kDefaultBudget);

/// KL(q(z) || p(z)) for two finite models over the same z support.
double exact_kl(const FiniteModel& q, const FiniteModel& p);
double exact_expected_kl_upper(const FiniteModel& q, const FiniteModel& p, const Matrix& tau, const Matrix& rho,
                               Index K, Index L);
double exact_expected_kl_lower(const FiniteModel& q, const FiniteModel& p, const Matrix& tau, const Matrix& rho,
                               Index K, Index L);

/// log ∫_0^∞ exp(log_integrand(psi)) dpsi. `center` splits the range near the mass.
/// Throws Error when the quadrature error estimate exceeds `tol`.
double quadrature_log_integral(const std::function<double(double)>& log_integrand, double center = 1.0,
                               double tol = 1e-9);
/// log ∫ N(z | 0, psi) Exp(psi | 1/2) dpsi for scalar z.
double laplace_mixture_log_marginal(double z);

/// Gamma(concentration, rate) CDF by quadrature of the density, and its inverse.
double gamma_cdf(double concentration, double rate, double x);
double gamma_quantile(double concentration, double rate, double p);

/// Central differences.
Vector finite_diff(const std::function<double(const Vector&)>& f, const Vector& x, double step = 1e-5);

namespace gaussian {
/// KL(N(m1, v1) || N(m2, v2)) summed over coordinates (variances, not stddevs).
double kl_diag(const Vector& m1, const Vector& v1, const Vector& m2, const Vector& v2);
struct Normal {
  Vector mean;
  Vector var;
};
/// Posterior of psi given z for psi ~ N(m, s^2), z | psi ~ N(c psi + o, n^2), per coordinate.
Normal chain_posterior(const Vector& z, double m, double s, double c, double o, double n);
/// Marginal of z in the same chain.
Normal chain_marginal(Index dim, double m, double s, double c, double o, double n);
}  // namespace gaussian

}  // namespace hvi::oracle
