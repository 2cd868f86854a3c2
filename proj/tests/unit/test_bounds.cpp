#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "hvi/bounds.hpp"
#include "hvi/error.hpp"
#include "hvi/oracle.hpp"
#include "hvi/stats.hpp"

using namespace hvi;

namespace {

// q(psi) = [0.5, 0.5], q(z = 1 | psi) = [0.2, 0.8].
Matrix example_zgp() {
  Matrix m(2, 2);
  m << 0.8, 0.2, 0.2, 0.8;
  return m;
}

oracle::FiniteModel example_oracle() {
  oracle::FiniteModel m;
  m.psi = Eigen::Vector2d(0.5, 0.5);
  m.zgp = example_zgp();
  return m;
}

FiniteHvm to_hvm(const oracle::FiniteModel& m) { return FiniteHvm(m.psi.transpose(), m.zgp); }

std::vector<double> column(const Var& v) {
  const Matrix m = v.value();
  return std::vector<double>(m.data(), m.data() + m.size());
}

Var z_rows(Tape& tape, Index rows, double z) { return tape.constant(Matrix::Constant(rows, 1, z)); }

// A finite generative model p(x | z) p(z) over the z support of q.
struct FiniteSetup {
  oracle::FiniteModel q;
  oracle::FiniteGenerative p;
  Matrix tau;
};

FiniteSetup random_setup(RngStream& rng, Index S = 2, Index Z = 2, Index X = 2) {
  FiniteSetup s;
  s.q = oracle::random_finite_model(rng, S, Z);
  s.p.x_given_z = oracle::random_table(Z, X, rng);
  s.p.prior = oracle::random_simplex(Z, rng);
  s.tau = oracle::random_table(Z, S, rng);
  return s;
}

}  // namespace

TEST(Bounds, UpperExampleAgainstEnumeration) {
  const oracle::FiniteModel m = example_oracle();
  const Matrix prior_tau = m.psi.transpose().replicate(2, 1);
  const double exact = oracle::exact_expected_bound(m, prior_tau, 1, 0, oracle::BoundKind::U);
  EXPECT_NEAR(exact, 0.2 * std::log(0.2) + 0.8 * std::log(0.8), 1e-12);
  EXPECT_NEAR(exact, -0.500402, 1e-6);
  EXPECT_GE(exact, std::log(0.5));

  const FiniteHvm q = to_hvm(m);
  const PriorAuxiliary tau(q);
  ParamStore store;
  Tape tape;
  Scope scope(tape, store);
  RngStream rng(3);
  const Index n = 40000;
  const auto v = column(upper_bound_U(scope, q, tau, Conditioning::none(n), z_rows(tape, n, 1), 0, rng).value);
  EXPECT_NEAR(stats::mean(v), exact, 4 * stats::standard_error(v));
}

TEST(Bounds, LowerExampleAgainstEnumeration) {
  const oracle::FiniteModel m = example_oracle();
  const Matrix prior_tau = m.psi.transpose().replicate(2, 1);
  const double exact = oracle::exact_expected_bound(m, prior_tau, 1, 1, oracle::BoundKind::L);
  EXPECT_NEAR(exact, 0.5 * std::log(0.2) + 0.5 * std::log(0.8), 1e-12);
  EXPECT_NEAR(exact, -0.916291, 1e-6);

  const FiniteHvm q = to_hvm(m);
  const PriorAuxiliary tau(q);
  ParamStore store;
  Tape tape;
  Scope scope(tape, store);
  RngStream rng(4);
  const Index n = 40000;
  const auto v = column(lower_bound_L(scope, q, tau, Conditioning::none(n), z_rows(tape, n, 1), 1, rng).value);
  EXPECT_NEAR(stats::mean(v), exact, 4 * stats::standard_error(v));
}

TEST(Bounds, ExactPosteriorCollapsesBothBounds) {
  const FiniteHvm q = make_discrete_hvm({0.5, 0.5}, example_zgp());
  const PosteriorAuxiliary tau(q);
  ParamStore store;
  Tape tape;
  Scope scope(tape, store);
  RngStream rng(5);
  for (Index K : {0, 1, 3, 7}) {
    const Estimate u = upper_bound_U(scope, q, tau, Conditioning::none(20), z_rows(tape, 20, 1), K, rng);
    for (double v : column(u.value)) EXPECT_NEAR(v, std::log(0.5), 1e-12);
    if (K == 0) continue;
    const Estimate l = lower_bound_L(scope, q, tau, Conditioning::none(20), z_rows(tape, 20, 1), K, rng);
    for (double v : column(l.value)) EXPECT_NEAR(v, std::log(0.5), 1e-12);
  }
}

TEST(Bounds, LowerNeedsAtLeastOneSample) {
  const FiniteHvm q = make_discrete_hvm({0.5, 0.5}, example_zgp());
  const PriorAuxiliary tau(q);
  ParamStore store;
  Tape tape;
  Scope scope(tape, store);
  RngStream rng(1);
  EXPECT_THROW(lower_bound_L(scope, q, tau, Conditioning::none(1), z_rows(tape, 1, 0), 0, rng), ConfigError);
}

TEST(Bounds, StandaloneUpperNeedsExactPosterior) {
  const LaplaceScaleMixture q(2);
  const PriorAuxiliary tau(q);
  ParamStore store;
  Tape tape;
  Scope scope(tape, store);
  RngStream rng(1);
  EXPECT_THROW(upper_bound_U(scope, q, tau, Conditioning::none(1), tape.constant(Matrix::Ones(1, 2)), 2, rng),
               UnsupportedError);
}

TEST(Bounds, MoreSamplesTightenTheUpperBound) {
  const oracle::FiniteModel m = example_oracle();
  const Matrix prior_tau = m.psi.transpose().replicate(2, 1);
  const double lq = m.log_marginal(1);
  const double g0 = oracle::exact_expected_bound(m, prior_tau, 1, 0, oracle::BoundKind::U) - lq;
  const double g5 = oracle::exact_expected_bound(m, prior_tau, 1, 5, oracle::BoundKind::U) - lq;
  EXPECT_GT(g5, 0.0);
  EXPECT_LT(g5, g0);
}

TEST(Bounds, SandwichAndMonotonicityOnRandomModels) {
  RngStream rng(77);
  for (int i = 0; i < 20; ++i) {
    const oracle::FiniteModel m = oracle::random_finite_model(rng);
    const Matrix tau = oracle::random_table(m.Z(), m.S(), rng);
    for (Index z = 0; z < m.Z(); ++z) {
      const double lq = m.log_marginal(z);
      double prev = oracle::exact_expected_bound(m, tau, z, 0, oracle::BoundKind::U);
      EXPECT_GE(prev, lq - 1e-10);
      for (Index K = 1; K <= 5; ++K) {
        const double u = oracle::exact_expected_bound(m, tau, z, K, oracle::BoundKind::U);
        const double l = oracle::exact_expected_bound(m, tau, z, K, oracle::BoundKind::L);
        EXPECT_LE(l, lq + 1e-10);
        EXPECT_GE(u, lq - 1e-10);
        EXPECT_LE(u, prev + 1e-10);
        prev = u;
      }
    }
  }
}

TEST(Bounds, UpperGapShrinksLikeOneOverK) {
  RngStream rng(78);
  int checked = 0;
  for (int i = 0; i < 10; ++i) {
    const oracle::FiniteModel m = oracle::random_finite_model(rng, 2, 3);
    const Matrix tau = oracle::random_table(m.Z(), m.S(), rng);
    for (Index z = 0; z < m.Z(); ++z) {
      const double lq = m.log_marginal(z);
      const double g4 = oracle::exact_expected_bound(m, tau, z, 4, oracle::BoundKind::U) - lq;
      const double g16 = oracle::exact_expected_bound(m, tau, z, 16, oracle::BoundKind::U) - lq;
      // The 1/K rate is asymptotic: it needs K well past the chi-square spread of the weights.
      const Eigen::VectorXd post = m.posterior(z);
      double chi2 = -1.0;
      for (Index s = 0; s < m.S(); ++s) chi2 += post(s) * post(s) / tau(z, s);
      EXPECT_LT(g16, g4);
      if (chi2 <= 16.0) {
        EXPECT_LT(g16, 0.5 * g4) << "chi2 " << chi2;
        ++checked;
      }
    }
  }
  EXPECT_GE(checked, 20);
}

TEST(Bounds, EstimatorMatchesEnumerationOnRandomModels) {
  RngStream gen(90);
  for (int i = 0; i < 5; ++i) {
    const oracle::FiniteModel m = oracle::random_finite_model(gen);
    const Matrix t = oracle::random_table(m.Z(), m.S(), gen);
    const FiniteHvm q = to_hvm(m);
    const TableAuxiliary tau("tau", t);
    ParamStore store;
    RngStream rng(91 + i);
    tau.init(store, rng);
    Tape tape;
    Scope scope(tape, store);
    const Index n = 20000;
    for (Index K : {1, 3}) {
      const auto u = column(upper_bound_U(scope, q, tau, Conditioning::none(n), z_rows(tape, n, 0), K, rng).value);
      const auto l = column(lower_bound_L(scope, q, tau, Conditioning::none(n), z_rows(tape, n, 0), K, rng).value);
      EXPECT_NEAR(stats::mean(u), oracle::exact_expected_bound(m, t, 0, K, oracle::BoundKind::U),
                  4 * stats::standard_error(u) + 1e-12);
      EXPECT_NEAR(stats::mean(l), oracle::exact_expected_bound(m, t, 0, K, oracle::BoundKind::L),
                  4 * stats::standard_error(l) + 1e-12);
    }
  }
}

TEST(Bounds, LogMeanExpShiftInvariant) {
  Tape tape;
  RngStream rng(6);
  Matrix lw(3, 5);
  for (Index i = 0; i < lw.size(); ++i) lw.data()[i] = 3.0 * rng.normal();
  const Estimate a = log_mean_exp_estimate(tape.constant(lw));
  const Estimate b = log_mean_exp_estimate(tape.constant((lw.array() + 700.0).matrix()));
  for (Index r = 0; r < 3; ++r) {
    EXPECT_NEAR(b.value.value()(r, 0) - 700.0, a.value.value()(r, 0), 1e-12);
    EXPECT_NEAR(b.ess(r, 0), a.ess(r, 0), 1e-12);
    EXPECT_GE(a.ess(r, 0), 1.0);
    EXPECT_LE(a.ess(r, 0), 5.0);
  }
  const Estimate c = log_mean_exp_estimate(tape.constant((lw.array() - 700.0).matrix()));
  EXPECT_NEAR(c.value.value()(0, 0) + 700.0, a.value.value()(0, 0), 1e-12);
}

TEST(Bounds, AllZeroWeightsAreFlagged) {
  Tape tape;
  const Matrix lw = Matrix::Constant(1, 3, -std::numeric_limits<double>::infinity());
  const Estimate e = log_mean_exp_estimate(tape.constant(lw));
  EXPECT_TRUE(e.degenerate);
  EXPECT_EQ(e.value.value()(0, 0), -std::numeric_limits<double>::infinity());
}

namespace {

// Continuous setting for the special-case identities: a Gaussian chain q with a Gaussian likelihood.
struct GaussianSetup {
  GaussianChain q{2, {0.2, 1.1, 0.8, -0.1, 0.7}};
  GaussianChain factorized{2, {0.2, 1.1, 0.0, -0.1, 0.7}};
  GaussianChain prior_model{2, {0.0, 0.9, 1.2, 0.3, 0.5}};
  GaussianLikelihood lik{0.6};
  NormalPrior prior{2};
  LinearGaussianAuxiliary tau{"tau", 2, 0.8, Matrix::Identity(2, 2) * 0.3, Matrix::Constant(1, 2, 0.1)};
  ParamStore store;
  GaussianSetup() {
    RngStream r(0);
    tau.init(store, r);
  }
};

Conditioning observed(Tape& tape, Index units) {
  Matrix x(units, 2);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = 0.3 * static_cast<double>(i % 7) - 0.8;
  return Conditioning::of(tape.constant(x));
}

}  // namespace

TEST(Bounds, SpecialCaseIdentities) {
  GaussianSetup g;
  const GenerativeModel p{&g.lik, &g.prior};
  const PriorAuxiliary q_prior(g.q);
  const PosteriorAuxiliary fact_post(g.factorized);
  const PriorAuxiliary rho(g.prior_model);
  const GenerativeModel hp{&g.lik, HierarchicalPrior{&g.prior_model, &rho, 3}};
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Tape tape;
    Scope scope(tape, g.store);
    const Conditioning x = observed(tape, 4);
    const RngStream base(100 + trial);
    for (Index K : {0, 1, 4}) {
      RngStream r1 = base.split(static_cast<std::uint64_t>(K)), r2 = r1;
      const Matrix iw = iwhvi_elbo(scope, p, g.q, q_prior, x, {1, K}, r1).value.value();
      const Matrix sv = sivi_elbo(scope, p, g.q, x, K, r2).value.value();
      EXPECT_LT((iw - sv).cwiseAbs().maxCoeff(), 1e-12);

      RngStream r3 = base.split(10 + static_cast<std::uint64_t>(K)), r4 = r3;
      const Matrix iwd = iwhvi_elbo(scope, hp, g.q, q_prior, x, {1, K, 3}, r3).value.value();
      const Matrix ds = dsivi_elbo(scope, g.lik, g.prior_model, g.q, x, K, 3, r4).value.value();
      EXPECT_LT((iwd - ds).cwiseAbs().maxCoeff(), 1e-12);

      RngStream r5 = base.split(20 + static_cast<std::uint64_t>(K)), r6 = r5;
      const Matrix iwe = iwhvi_elbo(scope, p, g.factorized, fact_post, x, {1, K}, r5).value.value();
      const Matrix el = plain_elbo(scope, p, g.factorized, x, r6).value.value();
      EXPECT_LT((iwe - el).cwiseAbs().maxCoeff(), 1e-12);
    }
    RngStream r7 = base.split(30), r8 = r7;
    const Matrix iw0 = iwhvi_elbo(scope, p, g.q, g.tau, x, {1, 0}, r7).value.value();
    const Matrix hvm = hvm_elbo(scope, p, g.q, g.tau, x, r8).value.value();
    EXPECT_LT((iw0 - hvm).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Bounds, DiwhviWithOneSampleIsIwhvi) {
  GaussianSetup g;
  const GenerativeModel p{&g.lik, &g.prior};
  Tape tape;
  Scope scope(tape, g.store);
  const Conditioning x = observed(tape, 3);
  RngStream r1(8), r2(8);
  const Matrix a = diwhvi_elbo(scope, p, g.q, g.tau, x, {1, 3}, r1).value.value();
  const Matrix b = iwhvi_elbo(scope, p, g.q, g.tau, x, {1, 3}, r2).value.value();
  EXPECT_EQ(a, b);
  EXPECT_THROW(iwhvi_elbo(scope, p, g.q, g.tau, x, {2, 3}, r1), ConfigError);
}

TEST(Bounds, DiwhviWithPriorTauIsSiviLike) {
  GaussianSetup g;
  const GenerativeModel p{&g.lik, &g.prior};
  const PriorAuxiliary q_prior(g.q);
  Tape tape;
  Scope scope(tape, g.store);
  const Conditioning x = observed(tape, 3);
  RngStream r1(9), r2(9);
  const Matrix a = diwhvi_elbo(scope, p, g.q, q_prior, x, {5, 2}, r1).value.value();
  const Matrix b = eval_variant(scope, p, g.q, g.tau, x, 5, 2, Variant::SIVI_LIKE, r2).value.value();
  EXPECT_EQ(a, b);
}

TEST(Bounds, EvaluationDensityCounts) {
  GaussianSetup g;
  const GenerativeModel p{&g.lik, &g.prior};
  Tape tape;
  Scope scope(tape, g.store);
  const Conditioning x = observed(tape, 1);
  RngStream rng(10);
  for (Index M : {1, 3, 10})
    for (Index K : {0, 2, 5}) {
      EXPECT_EQ(eval_variant(scope, p, g.q, g.tau, x, M, K, Variant::SIVI_EQUICOMP, rng).density_evals, M * (K + 1));
      EXPECT_EQ(eval_variant(scope, p, g.q, g.tau, x, M, K, Variant::SIVI_EQUISAMPLE, rng).density_evals,
                M * (M * K + 1));
      EXPECT_EQ(eval_variant(scope, p, g.q, g.tau, x, M, K, Variant::DIWHVI_EVAL, rng).density_evals, M * (K + 1));
    }
  EXPECT_THROW(eval_variant(scope, p, g.q, g.tau, x, 2, 2, Variant::HVM, rng), ConfigError);
}

TEST(Bounds, FiniteElbosAreLowerBoundsAndMatchEnumeration) {
  RngStream gen(200);
  for (int i = 0; i < 4; ++i) {
    const FiniteSetup s = random_setup(gen);
    const FiniteHvm q = to_hvm(s.q);
    const TableAuxiliary tau("tau", s.tau);
    const FiniteLikelihood lik(s.p.x_given_z);
    const FinitePrior prior(s.p.prior.transpose());
    const GenerativeModel p{&lik, &prior};
    ParamStore store;
    RngStream rng(300 + i);
    tau.init(store, rng);
    const double log_px = s.p.log_evidence(1);
    for (Index M = 1; M <= 3; ++M)
      for (Index K = 0; K <= 2; ++K) {
        EXPECT_LE(oracle::exact_expected_diwhvi(s.p, s.q, s.tau, 1, M, K), log_px + 1e-10);
        EXPECT_LE(oracle::exact_expected_sivi_pool(s.p, s.q, 1, M, K), log_px + 1e-10);
        EXPECT_LE(oracle::exact_expected_sivi_pool(s.p, s.q, 1, M, M * K), log_px + 1e-10);
      }
    for (Index K = 0; K <= 2; ++K) {
      double prev = -std::numeric_limits<double>::infinity();
      for (Index M = 1; M <= 3; ++M) {
        const double d = oracle::exact_expected_diwhvi(s.p, s.q, s.tau, 1, M, K);
        EXPECT_GE(d, prev - 1e-10);
        prev = d;
      }
    }
    // Monte Carlo estimators against the enumerated expectations
    Tape tape;
    Scope scope(tape, store);
    const Index n = 20000;
    const Conditioning x = Conditioning::of(tape.constant(Matrix::Ones(n, 1)));
    struct Case {
      Variant v;
      double exact;
    };
    const Index M = 2, K = 2;
    for (const Case& c : {Case{Variant::DIWHVI_EVAL, oracle::exact_expected_diwhvi(s.p, s.q, s.tau, 1, M, K)},
                          Case{Variant::SIVI_EQUICOMP, oracle::exact_expected_sivi_pool(s.p, s.q, 1, M, K)},
                          Case{Variant::SIVI_EQUISAMPLE, oracle::exact_expected_sivi_pool(s.p, s.q, 1, M, M * K)}}) {
      const auto v = column(eval_variant(scope, p, q, tau, x, M, K, c.v, rng).value);
      EXPECT_NEAR(stats::mean(v), c.exact, 4 * stats::standard_error(v) + 1e-12) << variant_name(c.v);
    }
    const auto sr = column(sivi_reused(scope, p, q, x, M, K, rng).value);
    EXPECT_NEAR(stats::mean(sr), oracle::exact_expected_sivi_pool(s.p, s.q, 1, M, K), 4 * stats::standard_error(sr));
  }
}

TEST(Bounds, GaussianKlSandwich) {
  const GaussianChain q(1, {0.0, 1.0, 0.0, 0.0, 1.0});
  const GaussianChain p(1, {0.0, 1.0, 0.0, 1.0, 1.0});
  const LinearGaussianAuxiliary tau("tau", 1, 2.0, Matrix::Zero(1, 1), Matrix::Constant(1, 1, 0.5));
  const LinearGaussianAuxiliary rho("rho", 1, 0.5, Matrix::Constant(1, 1, 0.3), Matrix::Zero(1, 1));
  ParamStore store;
  RngStream rng(11);
  tau.init(store, rng);
  rho.init(store, rng);
  Tape tape;
  Scope scope(tape, store);
  const Index n = 20000;
  const auto up = column(kl_upper_bound(scope, q, p, tau, rho, Conditioning::none(n), 8, 8, rng).value);
  const auto lo = column(kl_lower_bound(scope, q, p, tau, rho, Conditioning::none(n), 8, 8, rng).value);
  EXPECT_GE(stats::mean(up) + 3 * stats::standard_error(up), 0.5);
  EXPECT_LE(stats::mean(lo) - 3 * stats::standard_error(lo), 0.5);
  EXPECT_NEAR(oracle::gaussian::kl_diag(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1),
                                        Eigen::VectorXd::Ones(1)),
              0.5, 1e-15);
}

TEST(Bounds, KlLowerNeedsExactInverse) {
  const LaplaceScaleMixture q(1), p(1);
  const PriorAuxiliary tau(q), rho(p);
  ParamStore store;
  Tape tape;
  Scope scope(tape, store);
  RngStream rng(1);
  EXPECT_THROW(kl_lower_bound(scope, q, p, tau, rho, Conditioning::none(2), 2, 2, rng), UnsupportedError);
}

TEST(Bounds, FiniteKlSandwich) {
  RngStream gen(400);
  for (int i = 0; i < 10; ++i) {
    const oracle::FiniteModel q = oracle::random_finite_model(gen, 0, 3);
    const oracle::FiniteModel p = oracle::random_finite_model(gen, 0, 3);
    const Matrix tau = oracle::random_table(3, q.S(), gen), rho = oracle::random_table(3, p.S(), gen);
    const double kl = oracle::exact_kl(q, p);
    for (Index K = 1; K <= 3; ++K)
      for (Index L = 1; L <= 3; ++L) {
        EXPECT_GE(oracle::exact_expected_kl_upper(q, p, tau, rho, K, L), kl - 1e-10);
        EXPECT_LE(oracle::exact_expected_kl_lower(q, p, tau, rho, K, L), kl + 1e-10);
      }
    // same model on both sides with paired auxiliaries
    for (Index K = 1; K <= 3; ++K) EXPECT_GE(oracle::exact_expected_kl_upper(q, q, tau, tau, K, K), -1e-10);
  }
  // tape estimator against enumeration
  const oracle::FiniteModel q = oracle::random_finite_model(gen, 2, 3), p = oracle::random_finite_model(gen, 3, 3);
  const Matrix tau = oracle::random_table(3, 2, gen), rho = oracle::random_table(3, 3, gen);
  const FiniteHvm qh = to_hvm(q), ph = to_hvm(p);
  const TableAuxiliary th("tau", tau), rh("rho", rho);
  ParamStore store;
  RngStream rng(401);
  th.init(store, rng);
  rh.init(store, rng);
  Tape tape;
  Scope scope(tape, store);
  const Index n = 40000;
  const auto up = column(kl_upper_bound(scope, qh, ph, th, rh, Conditioning::none(n), 2, 3, rng).value);
  const auto lo = column(kl_lower_bound(scope, qh, ph, th, rh, Conditioning::none(n), 2, 3, rng).value);
  EXPECT_NEAR(stats::mean(up), oracle::exact_expected_kl_upper(q, p, tau, rho, 2, 3), 4 * stats::standard_error(up));
  EXPECT_NEAR(stats::mean(lo), oracle::exact_expected_kl_lower(q, p, tau, rho, 2, 3), 4 * stats::standard_error(lo));
}

TEST(Bounds, SharotCoefficients) {
  EXPECT_DOUBLE_EQ(sharot_coeff(5, 1, 0), 5.0);
  EXPECT_DOUBLE_EQ(sharot_coeff(5, 1, 1), -4.0);
  EXPECT_DOUBLE_EQ(sharot_coeff(7, 0, 0), 1.0);
  for (Index K = 0; K <= 20; ++K)
    for (Index J = 0; J <= std::min<Index>(K, 3); ++J) {
      double s = 0.0;
      for (Index j = 0; j <= J; ++j) s += sharot_coeff(K, J, j);
      EXPECT_NEAR(s, 1.0, 1e-12) << K << " " << J;
    }
  EXPECT_THROW(sharot_coeff(2, 3, 0), ConfigError);
}

TEST(Bounds, JackknifeCombination) {
  RngStream rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Index K = 3 + trial % 3;
    Eigen::RowVectorXd lw(K + 1);
    std::vector<double> v(static_cast<std::size_t>(K + 1));
    for (Index k = 0; k <= K; ++k) v[static_cast<std::size_t>(k)] = lw(k) = 2.0 * rng.normal();
    for (int J = 0; J <= 2; ++J) EXPECT_NEAR(jackknife_from_log_weights(lw, J), oracle::jackknife(v, J), 1e-12);
    const double lme = std::log((lw.array().exp()).mean());
    EXPECT_NEAR(jackknife_from_log_weights(lw, 0), lme, 1e-12);
  }
  EXPECT_THROW(jackknife_from_log_weights(Eigen::RowVectorXd::Zero(3), 3), ConfigError);
}

TEST(Bounds, JackknifeReducesBias) {
  RngStream gen(13);
  for (int i = 0; i < 20; ++i) {
    const oracle::FiniteModel m = oracle::random_finite_model(gen);
    const Matrix tau = oracle::random_table(m.Z(), m.S(), gen);
    for (Index K = 3; K <= 5; ++K)
      for (Index z = 0; z < m.Z(); ++z) {
        const double lq = m.log_marginal(z);
        const double bu = oracle::exact_expected_bound(m, tau, z, K, oracle::BoundKind::U) - lq;
        const double bj = oracle::exact_expected_bound(m, tau, z, K, oracle::BoundKind::J, 1) - lq;
        EXPECT_LT(std::abs(bj), std::abs(bu));
      }
  }
}

TEST(Bounds, JackknifeEstimatorMatchesEnumeration) {
  RngStream gen(14);
  const oracle::FiniteModel m = oracle::random_finite_model(gen, 3, 2);
  const Matrix t = oracle::random_table(2, 3, gen);
  const FiniteHvm q = to_hvm(m);
  const TableAuxiliary tau("tau", t);
  ParamStore store;
  RngStream rng(15);
  tau.init(store, rng);
  Tape tape;
  Scope scope(tape, store);
  const Index n = 40000;
  const auto j = column(jackknife_U(scope, q, tau, Conditioning::none(n), z_rows(tape, n, 1), 4, 1, rng).value);
  EXPECT_NEAR(stats::mean(j), oracle::exact_expected_bound(m, t, 1, 4, oracle::BoundKind::J, 1),
              4 * stats::standard_error(j));
  RngStream a(16), b(16);
  const Matrix j0 = jackknife_U(scope, q, tau, Conditioning::none(5), z_rows(tape, 5, 1), 3, 0, a).value.value();
  const Matrix u = upper_bound_U(scope, q, tau, Conditioning::none(5), z_rows(tape, 5, 1), 3, b).value.value();
  EXPECT_EQ(j0, u);
  EXPECT_THROW(jackknife_U(scope, q, tau, Conditioning::none(1), z_rows(tape, 1, 1), 2, 3, a), ConfigError);
}

TEST(Bounds, ExpectedKlTauPrior) {
  const GaussianChain q(1, {0.0, 1.0, 1.0, 0.0, 1.0});
  ParamStore store;
  RngStream rng(17);
  Tape tape;
  Scope scope(tape, store);
  const PriorAuxiliary same(q);
  EXPECT_NEAR(expected_kl_tau_prior(scope, q, same, Conditioning::none(1), 1000, rng), 0.0, 1e-12);
  const LinearGaussianAuxiliary shifted("tau", 1, 1.0, Matrix::Zero(1, 1), Matrix::Ones(1, 1));
  shifted.init(store, rng);
  Tape t2;
  Scope s2(t2, store);
  // log-ratio per draw is psi - 1/2 with psi ~ N(1, 1): standard error 1/sqrt(n)
  EXPECT_NEAR(expected_kl_tau_prior(s2, q, shifted, Conditioning::none(1), 100000, rng), 0.5, 4.0 / std::sqrt(1e5));
  EXPECT_DOUBLE_EQ(kCollapseThreshold, 0.05);
}

TEST(Bounds, OmegaArrangeAndSelect) {
  EXPECT_EQ(omega_arrange({7, 8, 9, 10}, 2), (std::vector<Index>{9, 7, 8, 10}));
  EXPECT_EQ(omega_arrange({7, 8}, 0), (std::vector<Index>{7, 8}));
  const Eigen::RowVectorXd p = omega_select_probs(Eigen::RowVector3d(std::log(1.0), std::log(3.0), 1000.0));
  EXPECT_NEAR(p.sum(), 1.0, 1e-15);
  EXPECT_NEAR(p(2), 1.0, 1e-15);
}

TEST(Bounds, OmegaMarginalMatchesClosedForm) {
  RngStream gen(18);
  const oracle::FiniteModel m = oracle::random_finite_model(gen, 3, 3);
  const Matrix tau = oracle::random_table(3, 3, gen);
  for (Index K : {1, 2})
    for (Index z = 0; z < 3; ++z) {
      const auto enumerated = oracle::omega_enumerated(m, tau, z, K);
      double total = 0.0;
      for (const auto& [tuple, prob] : enumerated) {
        EXPECT_NEAR(prob, oracle::omega_density(m, tau, z, tuple), 1e-10);
        total += prob;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  // the sampler's empirical frequencies
  const FiniteHvm q = to_hvm(m);
  RngStream rng(19);
  const int n = 200000;
  std::map<std::vector<Index>, int> counts;
  for (int i = 0; i < n; ++i) ++counts[omega_sample(q, tau, 1, 1, rng)];
  for (const auto& [tuple, prob] : oracle::omega_enumerated(m, tau, 1, 1)) {
    const double f = static_cast<double>(counts[tuple]) / n;
    EXPECT_NEAR(f, prob, 4.5 * std::sqrt(prob * (1 - prob) / n) + 1e-12);
  }
}
