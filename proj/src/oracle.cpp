#include "hvi/oracle.hpp"

#include <algorithm>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <limits>
#include <set>

#include "hvi/error.hpp"

namespace hvi::oracle {

namespace {

constexpr double kPi = 3.14159265358979323846;

double lme(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s / static_cast<double>(v.size()));
}

void check_budget(double count, std::int64_t budget) {
  if (count > static_cast<double>(budget)) throw BudgetError(static_cast<std::int64_t>(count), budget);
}

/// Calls f(tuple) for every tuple in {0..base-1}^n.
template <class F>
void for_each_tuple(Index base, Index n, F&& f) {
  std::vector<Index> t(static_cast<std::size_t>(n), 0);
  for (;;) {
    f(t);
    Index k = 0;
    while (k < n && ++t[static_cast<std::size_t>(k)] == base) t[static_cast<std::size_t>(k++)] = 0;
    if (k == n) return;
  }
}

}  // namespace

void FiniteSupport::validate() const {
  if (points.size() != probs.size()) throw DomainError("support and probabilities differ in length", 0.0);
  double s = 0.0;
  for (double p : probs) s += p;
  if (std::abs(s - 1.0) > 1e-12) throw DomainError("probabilities do not sum to 1", s);
  if (std::set<double>(points.begin(), points.end()).size() != points.size())
    throw DomainError("support points are not distinct", 0.0);
}

double FiniteModel::log_joint(Index z, Index s) const { return std::log(psi(s)) + std::log(zgp(s, z)); }

Vector FiniteModel::marginal() const { return zgp.transpose() * psi; }

double FiniteModel::log_marginal(Index z) const { return std::log(marginal()(z)); }

Vector FiniteModel::posterior(Index z) const {
  Vector p = psi.cwiseProduct(zgp.col(z));
  return p / p.sum();
}

double FiniteGenerative::log_evidence(Index x) const { return std::log(prior.dot(x_given_z.col(x))); }

Vector random_simplex(Index n, RngStream& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = -std::log(rng.uniform());
  v /= v.sum();
  v = v.cwiseMax(0.01);
  return v / v.sum();
}

Matrix random_table(Index rows, Index cols, RngStream& rng) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) m.row(r) = random_simplex(cols, rng).transpose();
  return m;
}

FiniteModel random_finite_model(RngStream& rng, Index S, Index Z) {
  if (S <= 0) S = 2 + static_cast<Index>(rng.next_u64() % 3);
  if (Z <= 0) Z = 2 + static_cast<Index>(rng.next_u64() % 3);
  FiniteModel m;
  m.psi = random_simplex(S, rng);
  m.zgp = random_table(S, Z, rng);
  return m;
}

double sharot(int K, int J, int j) {
  double f = 1.0;
  for (int i = 2; i <= J - j; ++i) f *= i;
  for (int i = 2; i <= j; ++i) f *= i;
  double p = 1.0;
  for (int i = 0; i < J; ++i) p *= (K - j);
  return (j % 2 ? -p : p) / f;
}

double jackknife(const std::vector<double>& log_w, int J) {
  const int K = static_cast<int>(log_w.size()) - 1;
  if (J > K) throw ConfigError("jackknife order exceeds K");
  double out = 0.0;
  for (int j = 0; j <= J; ++j) {
    // Subsets of {1..K} of size K - j, enumerated by bitmask; psi_0 is always kept.
    double acc = 0.0;
    int count = 0;
    for (unsigned mask = 0; mask < (1u << K); ++mask) {
      if (__builtin_popcount(mask) != K - j) continue;
      std::vector<double> kept{log_w[0]};
      for (int k = 0; k < K; ++k)
        if (mask & (1u << k)) kept.push_back(log_w[static_cast<std::size_t>(k + 1)]);
      acc += lme(kept);
      ++count;
    }
    out += sharot(K, J, j) * acc / count;
  }
  return out;
}

double exact_expected_bound(const FiniteModel& q, const Matrix& tau, Index z, Index K, BoundKind kind, int J,
                            std::int64_t budget) {
  const Index S = q.S();
  const bool with0 = kind != BoundKind::L;
  if (!with0 && K < 1) throw ConfigError("L_K needs K >= 1");
  const Index n = K + (with0 ? 1 : 0);
  check_budget(std::pow(static_cast<double>(S), static_cast<double>(n)), budget);
  const Vector post = q.posterior(z);
  double total = 0.0;
  for_each_tuple(S, n, [&](const std::vector<Index>& t) {
    double p = 1.0;
    std::vector<double> lw;
    for (Index k = 0; k < n; ++k) {
      const Index s = t[static_cast<std::size_t>(k)];
      p *= (with0 && k == 0) ? post(s) : tau(z, s);
      lw.push_back(q.log_joint(z, s) - std::log(tau(z, s)));
    }
    total += p * (kind == BoundKind::J ? jackknife(lw, J) : lme(lw));
  });
  return total;
}

double omega_density(const FiniteModel& q, const Matrix& tau, Index z, const std::vector<Index>& tuple) {
  const Vector post = q.posterior(z);
  double num = post(tuple[0]);
  double den = 0.0;
  for (std::size_t k = 0; k < tuple.size(); ++k) {
    if (k > 0) num *= tau(z, tuple[k]);
    den += post(tuple[k]) / tau(z, tuple[k]);
  }
  return num / (den / static_cast<double>(tuple.size()));
}

std::map<std::vector<Index>, double> omega_enumerated(const FiniteModel& q, const Matrix& tau, Index z, Index K) {
  std::map<std::vector<Index>, double> out;
  for_each_tuple(q.S(), K + 1, [&](const std::vector<Index>& hat) {
    double p = 1.0;
    double wsum = 0.0;
    std::vector<double> w;
    for (Index s : hat) {
      p *= tau(z, s);
      w.push_back(std::exp(q.log_joint(z, s)) / tau(z, s));
      wsum += w.back();
    }
    for (Index h = 0; h <= K; ++h) {
      std::vector<Index> t{hat[static_cast<std::size_t>(h)]};
      for (Index k = 0; k <= K; ++k)
        if (k != h) t.push_back(hat[static_cast<std::size_t>(k)]);
      out[t] += p * w[static_cast<std::size_t>(h)] / wsum;
    }
  });
  return out;
}

double exact_expected_diwhvi(const FiniteGenerative& p, const FiniteModel& q, const Matrix& tau, Index x, Index M,
                             Index K, std::int64_t budget) {
  const Index S = q.S(), Z = q.Z();
  const double per = static_cast<double>(S * Z) * std::pow(static_cast<double>(S), static_cast<double>(K));
  check_budget(std::pow(per, static_cast<double>(M)), budget);
  // One IWHVI sampling process: (psi_0, z, psi_1..K) with its probability and alpha.
  std::vector<std::pair<double, double>> outcomes;
  for (Index s0 = 0; s0 < S; ++s0)
    for (Index z = 0; z < Z; ++z)
      for_each_tuple(S, K, [&](const std::vector<Index>& t) {
        double prob = q.psi(s0) * q.zgp(s0, z);
        std::vector<double> lw{q.log_joint(z, s0) - std::log(tau(z, s0))};
        for (Index s : t) {
          prob *= tau(z, s);
          lw.push_back(q.log_joint(z, s) - std::log(tau(z, s)));
        }
        const double alpha = std::log(p.x_given_z(z, x)) + std::log(p.prior(z)) - lme(lw);
        outcomes.emplace_back(prob, alpha);
      });
  double total = 0.0;
  for_each_tuple(static_cast<Index>(outcomes.size()), M, [&](const std::vector<Index>& t) {
    double prob = 1.0;
    std::vector<double> a;
    for (Index i : t) {
      prob *= outcomes[static_cast<std::size_t>(i)].first;
      a.push_back(outcomes[static_cast<std::size_t>(i)].second);
    }
    total += prob * lme(a);
  });
  return total;
}

double exact_expected_sivi_pool(const FiniteGenerative& p, const FiniteModel& q, Index x, Index M, Index pool,
                                std::int64_t budget) {
  const Index S = q.S(), Z = q.Z();
  check_budget(std::pow(static_cast<double>(S), static_cast<double>(pool)) *
                   std::pow(static_cast<double>(S * Z), static_cast<double>(M)),
               budget);
  double total = 0.0;
  for_each_tuple(S, pool, [&](const std::vector<Index>& shared) {
    double p_shared = 1.0;
    for (Index s : shared) p_shared *= q.psi(s);
    for_each_tuple(S * Z, M, [&](const std::vector<Index>& own) {
      double prob = p_shared;
      std::vector<double> a;
      for (Index o : own) {
        const Index s0 = o / Z, z = o % Z;
        prob *= q.psi(s0) * q.zgp(s0, z);
        double mix = q.zgp(s0, z);
        for (Index s : shared) mix += q.zgp(s, z);
        mix /= static_cast<double>(pool + 1);
        a.push_back(std::log(p.x_given_z(z, x)) + std::log(p.prior(z)) - std::log(mix));
      }
      total += prob * lme(a);
    });
  });
  return total;
}

double exact_kl(const FiniteModel& q, const FiniteModel& p) {
  const Vector qz = q.marginal(), pz = p.marginal();
  double kl = 0.0;
  for (Index z = 0; z < qz.size(); ++z) kl += qz(z) * (std::log(qz(z)) - std::log(pz(z)));
  return kl;
}

double exact_expected_kl_upper(const FiniteModel& q, const FiniteModel& p, const Matrix& tau, const Matrix& rho,
                               Index K, Index L) {
  const Vector qz = q.marginal();
  double total = 0.0;
  for (Index z = 0; z < qz.size(); ++z)
    total += qz(z) * (exact_expected_bound(q, tau, z, K, BoundKind::U) - exact_expected_bound(p, rho, z, L, BoundKind::L));
  return total;
}

double exact_expected_kl_lower(const FiniteModel& q, const FiniteModel& p, const Matrix& tau, const Matrix& rho,
                               Index K, Index L) {
  const Vector qz = q.marginal();
  double total = 0.0;
  for (Index z = 0; z < qz.size(); ++z)
    total += qz(z) * (exact_expected_bound(q, tau, z, K, BoundKind::L) - exact_expected_bound(p, rho, z, L, BoundKind::U));
  return total;
}

double quadrature_log_integral(const std::function<double(double)>& log_integrand, double center, double tol) {
  if (!(center > 0.0)) throw DomainError("quadrature split point must be positive", center);
  const double shift = log_integrand(center);
  if (!std::isfinite(shift)) throw DomainError("integrand vanishes at the split point", center);
  auto f = [&](double t) {
    const double v = std::exp(log_integrand(t) - shift);
    return std::isfinite(v) ? v : 0.0;
  };
  double err_lo = 0.0, err_hi = 0.0, l1 = 0.0;
  boost::math::quadrature::tanh_sinh<double> lower(15);
  boost::math::quadrature::exp_sinh<double> upper(15);
  const double lo = lower.integrate(f, 0.0, center, 1e-14, &err_lo, &l1);
  const double hi = upper.integrate([&](double t) { return f(center + t); }, 1e-14, &err_hi, &l1);
  const double total = lo + hi;
  // Error estimates are relative to the shifted integrand; convert to the log scale.
  const double err = (err_lo * lo + err_hi * hi) / total;
  if (!(err < tol)) throw Error("quadrature did not converge, achieved relative error " + std::to_string(err));
  return shift + std::log(total);
}

double laplace_mixture_log_marginal(double z) {
  auto log_integrand = [z](double psi) {
    return -0.5 * std::log(2.0 * kPi * psi) - z * z / (2.0 * psi) + std::log(0.5) - 0.5 * psi;
  };
  // The integrand peaks near |z| for this mixture; keep the split point away from zero.
  return quadrature_log_integral(log_integrand, std::max(std::abs(z), 0.25));
}

double gamma_cdf(double a, double rate, double x) {
  if (!(a > 0.0 && rate > 0.0)) throw DomainError("gamma parameters must be positive", a);
  if (x <= 0.0) return 0.0;
  auto density = [&](double t) {
    if (t <= 0.0) return 0.0;
    return std::exp(a * std::log(rate) + (a - 1.0) * std::log(t) - rate * t - std::lgamma(a));
  };
  boost::math::quadrature::tanh_sinh<double> integrator(15);
  return std::min(1.0, integrator.integrate(density, 0.0, x, 1e-13));
}

double gamma_quantile(double a, double rate, double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("quantile level must be in (0, 1)", p);
  std::uintmax_t iters = 200;
  const double mean = a / rate;
  auto r = boost::math::tools::bracket_and_solve_root([&](double x) { return gamma_cdf(a, rate, x) - p; }, mean, 2.0,
                                                     true, boost::math::tools::eps_tolerance<double>(45), iters);
  return 0.5 * (r.first + r.second);
}

Vector finite_diff(const std::function<double(const Vector&)>& f, const Vector& x, double step) {
  Vector g(x.size());
  Vector y = x;
  for (Index i = 0; i < x.size(); ++i) {
    y(i) = x(i) + step;
    const double up = f(y);
    y(i) = x(i) - step;
    const double down = f(y);
    y(i) = x(i);
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

namespace gaussian {

double kl_diag(const Vector& m1, const Vector& v1, const Vector& m2, const Vector& v2) {
  double kl = 0.0;
  for (Index i = 0; i < m1.size(); ++i)
    kl += 0.5 * (v1(i) / v2(i) + (m1(i) - m2(i)) * (m1(i) - m2(i)) / v2(i) - 1.0 + std::log(v2(i) / v1(i)));
  return kl;
}

Normal chain_posterior(const Vector& z, double m, double s, double c, double o, double n) {
  const double prec = 1.0 / (s * s) + c * c / (n * n);
  Normal out;
  out.var = Vector::Constant(z.size(), 1.0 / prec);
  out.mean = ((m / (s * s)) + c * (z.array() - o) / (n * n)).matrix() / prec;
  return out;
}

Normal chain_marginal(Index dim, double m, double s, double c, double o, double n) {
  return Normal{Vector::Constant(dim, c * m + o), Vector::Constant(dim, c * c * s * s + n * n)};
}

}  // namespace gaussian

}  // namespace hvi::oracle
