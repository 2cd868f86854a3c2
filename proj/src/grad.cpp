#include "hvi/grad.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "hvi/error.hpp"
#include "hvi/stats.hpp"

namespace hvi {

namespace {

/// Row-wise softmax of log weights; a row with every entry at -inf maps to zeros.
Matrix softmax_rows(const Matrix& lw) {
  Matrix out(lw.rows(), lw.cols());
  for (Index r = 0; r < lw.rows(); ++r) {
    const double m = lw.row(r).maxCoeff();
    if (!std::isfinite(m)) {
      out.row(r).setZero();
      continue;
    }
    out.row(r) = (lw.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

GradEstimate finish(Estimator e, Scope& scope, const Var& surrogate, double objective) {
  GradEstimate est;
  est.estimator = e;
  est.objective = objective;
  if (scope.bound().empty()) return est;
  est.grads = scope.gradients(scope.tape().backward(surrogate));
  return est;
}

/// Σ_k W(r, k) [log q(z, psi_k) - log tau_detached(psi_k)] over the K auxiliary columns.
Var path_term(const AuxTerms& aux, Index first_col, const Matrix& weights) {
  const Index rows = aux.log_q.rows();
  const Index K = weights.cols();
  const Var lq = slice_cols(aux.log_q, first_col, K);
  const Var lt = reshape(aux.tau.detach().tile(K).log_prob(aux.psi_aux), rows, K);
  return sum(aux.log_q.tape().constant(weights) * (lq - lt));
}

}  // namespace

const char* estimator_name(Estimator e) { return e == Estimator::AUTODIFF ? "autodiff" : "dreg"; }

Estimator parse_estimator(const std::string& s) {
  std::string l;
  for (char c : s) l.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (l == "autodiff") return Estimator::AUTODIFF;
  if (l == "dreg" || l == "iwhvi_dreg" || l == "iwhvi-dreg") return Estimator::IWHVI_DREG;
  throw ConfigError("unknown estimator '" + s + "' (expected autodiff or dreg)");
}

Eigen::VectorXd GradEstimate::flat() const {
  Index n = 0;
  for (const auto& [name, g] : grads) n += g.size();
  Eigen::VectorXd out(n);
  Index at = 0;
  for (const auto& [name, g] : grads) {
    out.segment(at, g.size()) = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
    at += g.size();
  }
  return out;
}

GradEstimate grad_autodiff(const Objective& objective, const ParamStore& store, RngStream& rng,
                           const ParamFilter& trainable) {
  Tape tape;
  Scope scope(tape, store, trainable);
  const Var obj = objective(scope, rng);
  if (obj.rows() != 1 || obj.cols() != 1) throw ShapeError("objective must be 1x1");
  if (tape.nonreparameterized())
    throw UnsupportedError("objective draws a discrete sample that depends on a trainable parameter");
  return finish(Estimator::AUTODIFF, scope, obj, obj.scalar());
}

GradEstimate grad_iwhvi_dreg(const GenerativeModel& p, const HierarchicalModel& q, const AuxiliaryInference& tau,
                             const Conditioning& x, const BoundConfig& cfg, const ParamStore& store,
                             const ParamFilter& eta, RngStream& rng, DregOptions opt) {
  if (std::holds_alternative<HierarchicalPrior>(p.prior))
    throw UnsupportedError("IWHVI-DReG needs an explicit prior");
  Tape tape;
  Scope scope(tape, store, eta);
  // x may have been recorded elsewhere; only its values are needed here.
  const Conditioning xc{x.has_x() ? tape.constant(x.x.value()) : Var(), x.units, x.reps};
  DiwhviTrace tr;
  const Estimate est = diwhvi_elbo(scope, p, q, tau, xc, cfg, rng, &tr);
  const Index base = x.rows();
  const Index R = tr.cond.rows();
  const Index K = cfg.K;

  Matrix alpha(base, cfg.M);
  for (Index r = 0; r < R; ++r) alpha(r % base, r / base) = tr.alpha.value()(r, 0);
  const Matrix s_unit = softmax_rows(alpha);
  Eigen::VectorXd s(R);
  for (Index r = 0; r < R; ++r) s(r) = s_unit(r % base, r / base);
  const Matrix rw = softmax_rows(tr.aux.log_w.value());

  Var surrogate = tape.constant(0.0);
  if (K > 0) {
    Matrix W = rw.rightCols(K).array().square();
    W.array().colwise() *= (s.array() * (s.array() - 2.0));
    surrogate = surrogate + path_term(tr.aux, 1, W);
  }
  if (!opt.drop_b) {
    const Matrix C = (s.array() * rw.col(0).array()).matrix();
    surrogate = surrogate + sum(tape.constant(C) * tr.aux.tau.log_prob(tr.aux.psi0));
  }
  return finish(Estimator::IWHVI_DREG, scope, surrogate / static_cast<double>(base), est.mean());
}

Var upper_objective(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau, Index rows, Index K,
                    RngStream& rng) {
  const Conditioning none = Conditioning::none(rows);
  const auto [psi0, z] = q.sample_joint(scope, none, rng);
  return mean(upper_bound_U_joint(scope, q, tau, none, z, psi0, K, rng).value);
}

Var lower_objective(Scope& scope, const HierarchicalModel& q, const AuxiliaryInference& tau, Index rows, Index K,
                    RngStream& rng) {
  const Conditioning none = Conditioning::none(rows);
  const auto [psi0, z] = q.sample_joint(scope, none, rng);
  (void)psi0;
  return mean(lower_bound_L(scope, q, tau, none, z, K, rng).value);
}

GradEstimate grad_upper_dreg(const HierarchicalModel& q, const AuxiliaryInference& tau, Index rows, Index K,
                             const ParamStore& store, const ParamFilter& eta, RngStream& rng, DregOptions opt) {
  Tape tape;
  Scope scope(tape, store, eta);
  const Conditioning none = Conditioning::none(rows);
  const auto [psi0, z] = q.sample_joint(scope, none, rng);
  const AuxTerms aux = aux_terms(scope, q, tau, none, z, psi0, K, rng);
  const double objective = logmeanexp_rows(aux.log_w).value().mean();
  const Matrix rw = softmax_rows(aux.log_w.value());
  Var surrogate = tape.constant(0.0);
  if (K > 0) surrogate = surrogate + path_term(aux, 1, rw.rightCols(K).array().square().matrix());
  if (!opt.drop_b) surrogate = surrogate - sum(tape.constant(rw.col(0)) * aux.tau.log_prob(psi0));
  return finish(Estimator::IWHVI_DREG, scope, surrogate / static_cast<double>(rows), objective);
}

GradEstimate grad_lower_dreg(const HierarchicalModel& q, const AuxiliaryInference& tau, Index rows, Index K,
                             const ParamStore& store, const ParamFilter& eta, RngStream& rng) {
  if (K < 1) throw ConfigError("L_K needs K >= 1");
  Tape tape;
  Scope scope(tape, store, eta);
  const Conditioning none = Conditioning::none(rows);
  const auto [psi0, z] = q.sample_joint(scope, none, rng);
  (void)psi0;
  const AuxTerms aux = aux_terms(scope, q, tau, none, z, Var(), K, rng);
  const double objective = logmeanexp_rows(aux.log_w).value().mean();
  const Matrix rw = softmax_rows(aux.log_w.value());
  const Var surrogate = path_term(aux, 0, rw.array().square().matrix());
  return finish(Estimator::IWHVI_DREG, scope, surrogate / static_cast<double>(rows), objective);
}

SnrReport snr_from_samples(Matrix samples, std::vector<std::string> labels, int bootstrap, std::uint64_t seed) {
  const Index n = samples.rows();
  const Index P = samples.cols();
  if (n < 2) throw ConfigError("SNR needs at least two replicates");
  SnrReport rep;
  rep.replicates = static_cast<int>(n);
  rep.labels = std::move(labels);
  rep.mean.resize(P);
  rep.stddev.resize(P);
  rep.snr.assign(static_cast<std::size_t>(P), std::nullopt);
  std::vector<double> col(static_cast<std::size_t>(n));
  std::vector<double> defined;
  for (Index j = 0; j < P; ++j) {
    for (Index i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = samples(i, j);
    rep.mean(j) = stats::mean(col);
    rep.stddev(j) = stats::sample_std(col);
    if (rep.stddev(j) > 0.0) {
      rep.snr[static_cast<std::size_t>(j)] = std::abs(rep.mean(j)) / rep.stddev(j);
      defined.push_back(*rep.snr[static_cast<std::size_t>(j)]);
    } else {
      ++rep.missing;
    }
  }
  if (defined.empty()) {
    rep.mean_snr = rep.p05 = rep.p95 = std::numeric_limits<double>::quiet_NaN();
  } else {
    rep.mean_snr = stats::mean(defined);
    rep.p05 = stats::percentile(defined, 5.0);
    rep.p95 = stats::percentile(defined, 95.0);
  }
  if (bootstrap > 1 && !defined.empty()) {
    rep.mean_snr_se = stats::bootstrap_se(static_cast<std::size_t>(n), bootstrap, seed, [&](const auto& idx) {
      std::vector<double> snrs;
      std::vector<double> c(idx.size());
      for (Index j = 0; j < P; ++j) {
        for (std::size_t i = 0; i < idx.size(); ++i) c[i] = samples(static_cast<Index>(idx[i]), j);
        const double sd = stats::sample_std(c);
        if (sd > 0.0) snrs.push_back(std::abs(stats::mean(c)) / sd);
      }
      return snrs.empty() ? 0.0 : stats::mean(snrs);
    });
  }
  rep.samples = std::move(samples);
  return rep;
}

SnrReport measure_snr(const GradFn& fn, int replicates, const RngStream& base, int bootstrap) {
  if (replicates < 2) throw ConfigError("SNR needs at least two replicates");
  Matrix samples;
  std::vector<std::string> labels;
  for (int r = 0; r < replicates; ++r) {
    RngStream rng = base.split(static_cast<std::uint64_t>(r));
    const GradEstimate g = fn(rng);
    const Eigen::VectorXd f = g.flat();
    if (r == 0) {
      samples.resize(replicates, f.size());
      for (const auto& [name, m] : g.grads)
        for (Index i = 0; i < m.size(); ++i) labels.push_back(name + "[" + std::to_string(i) + "]");
    }
    if (f.size() != samples.cols()) throw ShapeError("gradient size changed between replicates");
    samples.row(r) = f.transpose();
  }
  return snr_from_samples(std::move(samples), std::move(labels), bootstrap, base.key());
}

Var exact_expected_bound_tape(Scope& scope, const FiniteHvm& q, const TableAuxiliary& tau, Index z, Index K,
                              bool upper) {
  const Index S = q.psi_support();
  if (!upper && K < 1) throw ConfigError("L_K needs K >= 1");
  const Index n = upper ? K + 1 : K;
  double count = std::pow(static_cast<double>(S), static_cast<double>(n));
  if (count > 1e6) throw BudgetError(static_cast<std::int64_t>(count), 1000000);

  const Var lt = log_softmax_rows(slice_rows(scope.param(tau.name() + "/logits"), z, 1));
  std::vector<Var> lt_at(static_cast<std::size_t>(S));
  for (Index s = 0; s < S; ++s) lt_at[static_cast<std::size_t>(s)] = slice_cols(lt, s, 1);
  const Matrix post = q.posterior_table();
  std::vector<double> log_qz(static_cast<std::size_t>(S));
  for (Index s = 0; s < S; ++s)
    log_qz[static_cast<std::size_t>(s)] = std::log(q.psi_probs()(0, s)) + std::log(q.z_given_psi()(s, z));

  Tape& tape = scope.tape();
  std::vector<Index> tuple(static_cast<std::size_t>(n), 0);
  std::vector<Var> terms;
  for (;;) {
    std::vector<Var> logw;
    Var log_p = tape.constant(upper ? std::log(post(tuple[0], z)) : 0.0);
    for (Index k = 0; k < n; ++k) {
      const Var& l = lt_at[static_cast<std::size_t>(tuple[static_cast<std::size_t>(k)])];
      logw.push_back(log_qz[static_cast<std::size_t>(tuple[static_cast<std::size_t>(k)])] - l);
      if (!upper || k > 0) log_p = log_p + l;
    }
    terms.push_back(exp(log_p) * logmeanexp_rows(concat_cols(logw)));
    Index k = 0;
    while (k < n && ++tuple[static_cast<std::size_t>(k)] == S) tuple[static_cast<std::size_t>(k++)] = 0;
    if (k == n) break;
  }
  return sum(concat_cols(terms));
}

}  // namespace hvi
