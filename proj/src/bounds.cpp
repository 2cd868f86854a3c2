#include "hvi/bounds.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "hvi/error.hpp"

namespace hvi {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Var prior_log_term(Scope& scope, const PriorSpec& prior, Index rows, const Var& z, RngStream& rng) {
  if (const auto* explicit_prior = std::get_if<const ExplicitPrior*>(&prior)) {
    if (*explicit_prior == nullptr) throw ConfigError("generative model has no prior");
    return (*explicit_prior)->prior(scope, rows).log_prob(z);
  }
  const auto& h = std::get<HierarchicalPrior>(prior);
  if (h.model == nullptr || h.rho == nullptr) throw ConfigError("hierarchical prior needs a model and rho");
  return lower_bound_L(scope, *h.model, *h.rho, Conditioning::none(rows), z, h.L, rng).value;
}

void require_likelihood(const GenerativeModel& p) {
  if (p.likelihood == nullptr) throw ConfigError("generative model has no likelihood");
}

/// Folds a (M * base) x 1 column into base x M (row = m * base + r).
Var fold(const Var& v, Index base, Index M) { return reshape(v, base, M); }

/// Log-mean-exp over M per-sample terms, each with its own psi_{m,0} and a pool of
/// `pool` psi draws from q(psi | x) shared by all m.
Estimate shared_pool_bound(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const Conditioning& x,
                           Index M, Index pool, RngStream& rng) {
  require_likelihood(p);
  const Index base = x.rows();
  const Conditioning cm = x.tiled(M);
  const Index R = cm.rows();
  const Var psi0 = q.psi_prior(scope, cm).draw(rng);
  const Var z = q.z_given_psi(scope, cm, psi0).draw(rng);
  std::vector<Var> parts{psi0};
  if (pool > 0) {
    const Var shared = q.psi_prior(scope, x).tile(pool).draw(rng);
    IndexList idx(static_cast<std::size_t>(pool * R));
    for (Index j = 0; j < pool; ++j)
      for (Index r = 0; r < R; ++r) idx[static_cast<std::size_t>(j * R + r)] = j * base + r % base;
    parts.push_back(gather_rows(shared, idx));
  }
  const Index n = pool + 1;
  const Var lq = q.z_given_psi(scope, cm.tiled(n), concat_rows(parts)).log_prob(tile_rows(z, n));
  const Var denom = logmeanexp_rows(reshape(lq, R, n));
  const Var prior = prior_log_term(scope, p.prior, R, z, rng);
  const Var alpha = p.likelihood->log_prob(scope, cm, z) + prior - denom;
  Estimate est = log_mean_exp_estimate(fold(alpha, base, M));
  est.density_evals = R * n;
  return est;
}

Estimate single_term(const Var& value) { return log_mean_exp_estimate(value); }

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::IWHVI: return "IWHVI";
    case Variant::DIWHVI: return "DIWHVI";
    case Variant::SIVI: return "SIVI";
    case Variant::SIVI_REUSED: return "SIVI_REUSED";
    case Variant::SIVI_LIKE: return "SIVI_LIKE";
    case Variant::SIVI_EQUICOMP: return "SIVI_EQUICOMP";
    case Variant::SIVI_EQUISAMPLE: return "SIVI_EQUISAMPLE";
    case Variant::DIWHVI_EVAL: return "DIWHVI_EVAL";
    case Variant::HVM: return "HVM";
    case Variant::DSIVI: return "DSIVI";
    case Variant::ELBO: return "ELBO";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  for (Variant v : {Variant::IWHVI, Variant::DIWHVI, Variant::SIVI, Variant::SIVI_REUSED, Variant::SIVI_LIKE,
                    Variant::SIVI_EQUICOMP, Variant::SIVI_EQUISAMPLE, Variant::DIWHVI_EVAL, Variant::HVM, Variant::DSIVI,
                    Variant::ELBO})
    if (u == variant_name(v)) return v;
  throw ConfigError("unknown bound variant '" + s + "'");
}

void BoundConfig::validate() const {
  if (M < 1) throw ConfigError("M must be at least 1");
  if (K < 0) throw ConfigError("K must be nonnegative");
  if (L < 1) throw ConfigError("L must be at least 1");
  if (jackknife_order < 0) throw ConfigError("jackknife order must be nonnegative");
  if (jackknife_order > K) throw ConfigError("jackknife order J must not exceed K");
  if (variant == Variant::HVM && K != 0) throw ConfigError("the HVM bound uses K = 0");
}

double Estimate::mean() const { return value.value().mean(); }

Estimate log_mean_exp_estimate(const Var& log_w) {
  Estimate est;
  est.value = logmeanexp_rows(log_w);
  est.log_weights = log_w.value();
  const Matrix& lw = est.log_weights;
  est.ess.resize(lw.rows(), 1);
  for (Index r = 0; r < lw.rows(); ++r) {
    const double m = lw.row(r).maxCoeff();
    if (m == kNegInf || std::isnan(m)) {
      est.degenerate = true;
      est.ess(r, 0) = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const Eigen::ArrayXd w = (lw.row(r).array() - m).exp().transpose();
    est.ess(r, 0) = w.sum() * w.sum() / w.square().sum();
  }
  return est;
}

AuxTerms aux_terms(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau, const Conditioning& cond,
                   const Var& z, const Var& psi0, Index K, RngStream& rng) {
  if (K < 0) throw ConfigError("K must be nonnegative");
  const Index rows = cond.rows();
  if (z.rows() != rows) throw ShapeError("z must have one row per conditioning row");
  AuxTerms t{psi0, Var(), tau.conditional(scope, cond, z), Var(), Var(), Var(), 0};
  std::vector<Var> parts;
  if (psi0.valid()) parts.push_back(psi0);
  if (K > 0) {
    t.psi_aux = t.tau.tile(K).draw(rng);
    parts.push_back(t.psi_aux);
  }
  const Index n = static_cast<Index>(psi0.valid()) + K;
  if (n == 0) throw ConfigError("an importance average needs at least one sample");
  const Var psi_all = concat_rows(parts);
  const Var lq = q.log_joint(scope, cond.tiled(n), tile_rows(z, n), psi_all);
  const Var lt = t.tau.tile(n).log_prob(psi_all);
  t.log_q = reshape(lq, rows, n);
  t.log_tau = reshape(lt, rows, n);
  t.log_w = t.log_q - t.log_tau;
  t.density_evals = rows * n;
  return t;
}

Estimate upper_bound_U_joint(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau,
                             const Conditioning& cond, const Var& z, const Var& psi0, Index K, RngStream& rng) {
  if (!psi0.valid()) throw ConfigError("U_K needs psi_0");
  const AuxTerms t = aux_terms(scope, q, tau, cond, z, psi0, K, rng);
  Estimate est = log_mean_exp_estimate(t.log_w);
  est.density_evals = t.density_evals;
  return est;
}

Estimate upper_bound_U(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau, const Conditioning& cond,
                       const Var& z, Index K, RngStream& rng) {
  if (!q.has_exact_posterior())
    throw UnsupportedError("a standalone U_K needs psi_0 ~ q(psi | z, x); draw (z, psi_0) jointly instead");
  const Var psi0 = q.exact_posterior(scope, cond, z).draw(rng);
  return upper_bound_U_joint(scope, q, tau, cond, z, psi0, K, rng);
}

Estimate lower_bound_L(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau, const Conditioning& cond,
                       const Var& z, Index K, RngStream& rng) {
  if (K < 1) throw ConfigError("L_K needs K >= 1 (the average would be empty)");
  const AuxTerms t = aux_terms(scope, q, tau, cond, z, Var(), K, rng);
  Estimate est = log_mean_exp_estimate(t.log_w);
  est.density_evals = t.density_evals;
  return est;
}

Estimate diwhvi_elbo(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const AuxiliaryInference& tau,
                     const Conditioning& x, const BoundConfig& cfg, RngStream& rng, DiwhviTrace* trace) {
  cfg.validate();
  require_likelihood(p);
  const Conditioning cm = x.tiled(cfg.M);
  const Index R = cm.rows();
  const Var psi0 = q.psi_prior(scope, cm).draw(rng);
  const Var z = q.z_given_psi(scope, cm, psi0).draw(rng);
  AuxTerms aux = aux_terms(scope, q, tau, cm, z, psi0, cfg.K, rng);
  const Var prior = prior_log_term(scope, p.prior, R, z, rng);
  const Var loglik = p.likelihood->log_prob(scope, cm, z);
  const Var alpha = loglik + prior - logmeanexp_rows(aux.log_w);
  Estimate est = log_mean_exp_estimate(fold(alpha, x.rows(), cfg.M));
  est.density_evals = aux.density_evals;
  if (trace) *trace = DiwhviTrace{cm, z, std::move(aux), alpha, prior, loglik};
  return est;
}

Estimate iwhvi_elbo(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const AuxiliaryInference& tau,
                    const Conditioning& x, const BoundConfig& cfg, RngStream& rng) {
  if (cfg.M != 1) throw ConfigError("IWHVI uses M = 1; use diwhvi_elbo for M > 1");
  return diwhvi_elbo(scope, p, q, tau, x, cfg, rng);
}

Estimate sivi_elbo(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const Conditioning& x, Index K,
                   RngStream& rng) {
  if (K < 0) throw ConfigError("K must be nonnegative");
  require_likelihood(p);
  const Index R = x.rows();
  const Dist qpsi = q.psi_prior(scope, x);
  const Var psi0 = qpsi.draw(rng);
  const Var z = q.z_given_psi(scope, x, psi0).draw(rng);
  std::vector<Var> parts{psi0};
  if (K > 0) parts.push_back(qpsi.tile(K).draw(rng));
  const Index n = K + 1;
  const Var lq = q.z_given_psi(scope, x.tiled(n), concat_rows(parts)).log_prob(tile_rows(z, n));
  const Var denom = logmeanexp_rows(reshape(lq, R, n));
  const Var prior = prior_log_term(scope, p.prior, R, z, rng);
  Estimate est = single_term(p.likelihood->log_prob(scope, x, z) + prior - denom);
  est.density_evals = R * n;
  return est;
}

Estimate sivi_reused(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const Conditioning& x, Index M,
                     Index K, RngStream& rng) {
  if (M < 1 || K < 0) throw ConfigError("SIVI with reuse needs M >= 1 and K >= 0");
  return shared_pool_bound(scope, p, q, x, M, K, rng);
}

Estimate hvm_elbo(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const AuxiliaryInference& tau,
                  const Conditioning& x, RngStream& rng) {
  require_likelihood(p);
  const Dist qpsi = q.psi_prior(scope, x);
  const Var psi0 = qpsi.draw(rng);
  const Dist qz = q.z_given_psi(scope, x, psi0);
  const Var z = qz.draw(rng);
  const Var log_tau = tau.conditional(scope, x, z).log_prob(psi0);
  const Var prior = prior_log_term(scope, p.prior, x.rows(), z, rng);
  Estimate est = single_term(p.likelihood->log_prob(scope, x, z) + prior - (qpsi.log_prob(psi0) + qz.log_prob(z)) + log_tau);
  est.density_evals = x.rows();
  return est;
}

Estimate dsivi_elbo(Scope& scope, const Likelihood& lik, const HierarchicalModel& prior, const HierarchicalModel& q,
                    const Conditioning& x, Index K, Index L, RngStream& rng) {
  if (K < 0 || L < 1) throw ConfigError("DSIVI needs K >= 0 and L >= 1");
  const Index R = x.rows();
  const Dist qpsi = q.psi_prior(scope, x);
  const Var psi0 = qpsi.draw(rng);
  const Var z = q.z_given_psi(scope, x, psi0).draw(rng);
  std::vector<Var> parts{psi0};
  if (K > 0) parts.push_back(qpsi.tile(K).draw(rng));
  const Index n = K + 1;
  const Var lq = q.z_given_psi(scope, x.tiled(n), concat_rows(parts)).log_prob(tile_rows(z, n));
  const Conditioning none = Conditioning::none(R);
  const Var zeta = prior.psi_prior(scope, none).tile(L).draw(rng);
  const Var lp = prior.z_given_psi(scope, none.tiled(L), zeta).log_prob(tile_rows(z, L));
  const Var value = lik.log_prob(scope, x, z) + logmeanexp_rows(reshape(lp, R, L)) - logmeanexp_rows(reshape(lq, R, n));
  Estimate est = single_term(value);
  est.density_evals = R * n;
  return est;
}

Estimate plain_elbo(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const Conditioning& x,
                    RngStream& rng) {
  if (!q.is_factorized()) throw UnsupportedError("the plain ELBO needs a factorized q(z, psi | x)");
  require_likelihood(p);
  const Var psi0 = q.psi_prior(scope, x).draw(rng);
  const Dist qz = q.z_given_psi(scope, x, psi0);
  const Var z = qz.draw(rng);
  const Var prior = prior_log_term(scope, p.prior, x.rows(), z, rng);
  Estimate est = single_term(p.likelihood->log_prob(scope, x, z) + prior - qz.log_prob(z));
  est.density_evals = x.rows();
  return est;
}

Estimate eval_variant(Scope& scope, const GenerativeModel& p, const HierarchicalModel& q, const AuxiliaryInference& tau,
                      const Conditioning& x, Index M, Index K, Variant variant, RngStream& rng) {
  switch (variant) {
    case Variant::SIVI_LIKE: {
      const PriorAuxiliary prior_tau(q);
      return diwhvi_elbo(scope, p, q, prior_tau, x, BoundConfig{M, K, 1, Variant::SIVI_LIKE, 0}, rng);
    }
    case Variant::SIVI_EQUICOMP:
      return shared_pool_bound(scope, p, q, x, M, K, rng);
    case Variant::SIVI_EQUISAMPLE:
      return shared_pool_bound(scope, p, q, x, M, M * K, rng);
    case Variant::DIWHVI_EVAL:
    case Variant::DIWHVI:
      return diwhvi_elbo(scope, p, q, tau, x, BoundConfig{M, K, 1, Variant::DIWHVI_EVAL, 0}, rng);
    default:
      throw ConfigError(std::string("not an evaluation variant: ") + variant_name(variant));
  }
}

Estimate kl_upper_bound(Scope& scope, const HierarchicalModel& q, const HierarchicalModel& p,
                        const AuxiliaryInference& tau, const AuxiliaryInference& rho, const Conditioning& x, Index K,
                        Index L, RngStream& rng) {
  const auto [psi0, z] = q.sample_joint(scope, x, rng);
  const Estimate u = upper_bound_U_joint(scope, q, tau, x, z, psi0, K, rng);
  const Estimate lp = lower_bound_L(scope, p, rho, Conditioning::none(x.rows()), z, L, rng);
  Estimate est;
  est.value = u.value - lp.value;
  est.log_weights = u.log_weights;
  est.ess = u.ess;
  est.degenerate = u.degenerate || lp.degenerate;
  est.density_evals = u.density_evals + lp.density_evals;
  return est;
}

Estimate kl_lower_bound(Scope& scope, const HierarchicalModel& q, const HierarchicalModel& p,
                        const AuxiliaryInference& tau, const AuxiliaryInference& rho, const Conditioning& x, Index K,
                        Index L, RngStream& rng) {
  if (!p.has_exact_posterior())
    throw UnsupportedError("the KL lower bound needs exact samples from p(zeta | z)");
  const auto [psi0, z] = q.sample_joint(scope, x, rng);
  (void)psi0;
  const Estimate lq = lower_bound_L(scope, q, tau, x, z, K, rng);
  const Estimate up = upper_bound_U(scope, p, rho, Conditioning::none(x.rows()), z, L, rng);
  Estimate est;
  est.value = lq.value - up.value;
  est.log_weights = lq.log_weights;
  est.ess = lq.ess;
  est.degenerate = lq.degenerate || up.degenerate;
  est.density_evals = lq.density_evals + up.density_evals;
  return est;
}

double sharot_coeff(Index K, Index J, Index j) {
  if (j < 0 || j > J || J > K) throw ConfigError("Sharot coefficient needs 0 <= j <= J <= K");
  auto factorial = [](Index n) {
    double f = 1.0;
    for (Index i = 2; i <= n; ++i) f *= static_cast<double>(i);
    return f;
  };
  const double sign = (j % 2 == 0) ? 1.0 : -1.0;
  return sign * std::pow(static_cast<double>(K - j), static_cast<double>(J)) / (factorial(J - j) * factorial(j));
}

double jackknife_from_log_weights(const Eigen::RowVectorXd& log_w, Index J) {
  const Index K = log_w.size() - 1;
  if (K < 0) throw ShapeError("jackknife needs psi_0");
  if (J > K) throw ConfigError("jackknife order J must not exceed K");
  double total = 0.0;
  std::vector<char> removed(static_cast<std::size_t>(K + 1), 0);
  for (Index j = 0; j <= J; ++j) {
    // Average of U over every subset that drops j of psi_1..psi_K.
    double acc = 0.0;
    double count = 0.0;
    std::vector<double> kept;
    auto visit = [&](auto&& self, Index start, Index left) -> void {
      if (left == 0) {
        kept.clear();
        for (Index k = 0; k <= K; ++k)
          if (!removed[static_cast<std::size_t>(k)]) kept.push_back(log_w(k));
        const double m = *std::max_element(kept.begin(), kept.end());
        double s = 0.0;
        for (double v : kept) s += std::exp(v - m);
        acc += m + std::log(s) - std::log(static_cast<double>(kept.size()));
        count += 1.0;
        return;
      }
      for (Index k = start; k <= K - left + 1; ++k) {
        removed[static_cast<std::size_t>(k)] = 1;
        self(self, k + 1, left - 1);
        removed[static_cast<std::size_t>(k)] = 0;
      }
    };
    visit(visit, 1, j);
    total += sharot_coeff(K, J, j) * acc / count;
  }
  return total;
}

Estimate jackknife_U(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau, const Conditioning& cond,
                     const Var& z, Index K, Index J, RngStream& rng) {
  if (J < 0 || J > K) throw ConfigError("jackknife order J must satisfy 0 <= J <= K");
  Estimate u = upper_bound_U(scope, q, tau, cond, z, K, rng);
  if (J == 0) return u;
  Matrix value(u.log_weights.rows(), 1);
  for (Index r = 0; r < value.rows(); ++r) value(r, 0) = jackknife_from_log_weights(u.log_weights.row(r), J);
  u.value = scope.tape().constant(value);
  return u;
}

double expected_kl_tau_prior(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau,
                             const Conditioning& x, Index n_samples, RngStream& rng) {
  if (n_samples < 1) throw ConfigError("need at least one sample");
  const Conditioning cm = x.tiled(n_samples);
  const auto [psi0, z] = q.sample_joint(scope, cm, rng);
  (void)psi0;
  const Dist t = tau.conditional(scope, cm, z);
  const Var psi = t.draw(rng);
  return (t.log_prob(psi) - q.psi_prior(scope, cm).log_prob(psi)).value().mean();
}

Eigen::RowVectorXd omega_select_probs(const Eigen::RowVectorXd& log_w) {
  const double m = log_w.maxCoeff();
  if (!std::isfinite(m)) throw DomainError("omega weights are all zero or invalid", m);
  Eigen::RowVectorXd w = (log_w.array() - m).exp().matrix();
  return w / w.sum();
}

std::vector<Index> omega_arrange(const std::vector<Index>& psi_hat, Index h) {
  if (h < 0 || h >= static_cast<Index>(psi_hat.size())) throw ShapeError("omega index out of range");
  std::vector<Index> out{psi_hat[static_cast<std::size_t>(h)]};
  for (std::size_t k = 0; k < psi_hat.size(); ++k)
    if (static_cast<Index>(k) != h) out.push_back(psi_hat[k]);
  return out;
}

std::vector<Index> omega_sample(const FiniteHvm& q, const Matrix& tau_probs, Index z, Index K, RngStream& rng) {
  const Index S = q.psi_support();
  if (tau_probs.cols() != S || z < 0 || z >= tau_probs.rows()) throw ShapeError("tau table does not match the model");
  const Eigen::RowVectorXd row = tau_probs.row(z);  // rows are strided in column-major storage
  const auto tau = DistributionSpec::categorical(std::vector<double>(row.data(), row.data() + S));
  std::vector<Index> psi_hat(static_cast<std::size_t>(K + 1));
  Eigen::RowVectorXd log_w(K + 1);
  for (Index k = 0; k <= K; ++k) {
    const auto s = static_cast<Index>(tau.sample(rng));
    psi_hat[static_cast<std::size_t>(k)] = s;
    log_w(k) = std::log(q.psi_probs()(0, s)) + std::log(q.z_given_psi()(s, z)) - std::log(tau_probs(z, s));
  }
  const auto pick = DistributionSpec::categorical(
      [&] {
        const Eigen::RowVectorXd p = omega_select_probs(log_w);
        return std::vector<double>(p.data(), p.data() + p.size());
      }());
  return omega_arrange(psi_hat, static_cast<Index>(pick.sample(rng)));
}

}  // namespace hvi
