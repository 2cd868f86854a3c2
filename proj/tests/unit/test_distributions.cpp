#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <functional>
#include <numbers>

#include "hvi/distributions.hpp"
#include "hvi/error.hpp"
#include "hvi/oracle.hpp"
#include "hvi/stats.hpp"

using namespace hvi;

namespace {

struct Moments {
  double mean, var, mean_se, var_se;
};

Moments moments(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  const double m = stats::mean(x);
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - m;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m4 /= n;
  return {m, m2, std::sqrt(m2 / n), std::sqrt((m4 - m2 * m2) / n)};
}

// log of the density integrated over the support (one or both half-lines).
double log_total_mass(const DistributionSpec& d, bool two_sided) {
  auto f = [&](double x) { return d.log_prob(x); };
  const double right = oracle::quadrature_log_integral(f, 1.0, 1e-6);
  if (!two_sided) return right;
  const double left = oracle::quadrature_log_integral([&](double x) { return d.log_prob(-x); }, 1.0, 1e-6);
  return std::log(std::exp(right) + std::exp(left));
}

}  // namespace

TEST(Distributions, LogProbExamples) {
  EXPECT_NEAR(DistributionSpec::normal(0, 1).log_prob(0), -0.918939, 1e-6);
  EXPECT_NEAR(DistributionSpec::laplace(0, 1).log_prob(0), -std::log(2.0), 1e-12);
  EXPECT_NEAR(DistributionSpec::exponential(0.5).log_prob(2), std::log(0.5) - 1.0, 1e-12);
}

TEST(Distributions, OutsideSupportIsDomainError) {
  EXPECT_THROW(DistributionSpec::gamma(2, 1).log_prob(-1.0), DomainError);
  EXPECT_THROW(DistributionSpec::exponential(1).log_prob(-0.1), DomainError);
  EXPECT_THROW(DistributionSpec::bernoulli(0.3).log_prob(0.5), DomainError);
  EXPECT_THROW(DistributionSpec::categorical({0.5, 0.5}).log_prob(2), DomainError);
}

TEST(Distributions, ParameterInvariantsEnforced) {
  EXPECT_THROW(DistributionSpec::normal(0, 0), DomainError);
  EXPECT_THROW(DistributionSpec::laplace(0, -1), DomainError);
  EXPECT_THROW(DistributionSpec::exponential(0), DomainError);
  EXPECT_THROW(DistributionSpec::gamma(-1, 1), DomainError);
  EXPECT_THROW(DistributionSpec::bernoulli(1.5), DomainError);
  EXPECT_THROW(DistributionSpec::categorical({0.5, 0.6}), DomainError);
  EXPECT_NO_THROW(DistributionSpec::categorical({0.2, 0.8 + 5e-13}));
}

TEST(Distributions, NormalFrozenNoisePathwise) {
  Tape tape;
  RngStream rng(4);
  auto [x, leaves] = DistributionSpec::normal(0.7, 1.3).sample_reparam(rng, tape);
  const Gradients g = tape.backward(x);
  const double eps = (x.scalar() - 0.7) / 1.3;
  EXPECT_DOUBLE_EQ(g.scalar(leaves[0]), 1.0);
  EXPECT_NEAR(g.scalar(leaves[1]), eps, 1e-14);

  // noise fixed at 1.3 explicitly
  Tape t2;
  const Var mu = t2.variable(0.2), sd = t2.variable(2.0);
  const Var s = mu + sd * 1.3;
  const Gradients g2 = t2.backward(s);
  EXPECT_DOUBLE_EQ(g2.scalar(mu), 1.0);
  EXPECT_DOUBLE_EQ(g2.scalar(sd), 1.3);
}

TEST(Distributions, ExponentialPathwise) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tape tape;
    RngStream rng(seed);
    auto [x, leaves] = DistributionSpec::exponential(2.5).sample_reparam(rng, tape);
    EXPECT_NEAR(tape.backward(x).scalar(leaves[0]), -x.scalar() / 2.5, 1e-14);
  }
  // u = e^-1 gives sample 1/r and derivative -1/r^2
  Tape tape;
  const Var r = tape.variable(4.0);
  const Var s = tape.constant(1.0) / r;
  EXPECT_DOUBLE_EQ(s.scalar(), 0.25);
  EXPECT_DOUBLE_EQ(tape.backward(s).scalar(r), -1.0 / 16.0);
}

TEST(Distributions, DiscreteKindsCannotBeReparameterized) {
  Tape tape;
  RngStream rng(1);
  EXPECT_THROW(DistributionSpec::bernoulli(0.3).sample_reparam(rng, tape), UnsupportedError);
  EXPECT_THROW(DistributionSpec::categorical({0.5, 0.5}).sample_reparam(rng, tape), UnsupportedError);
}

TEST(Distributions, Enumerate) {
  const auto b = DistributionSpec::bernoulli(0.3).enumerate();
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].first, 0.0);
  EXPECT_NEAR(b[0].second, 0.7, 1e-15);
  EXPECT_EQ(b[1].first, 1.0);
  EXPECT_NEAR(b[1].second, 0.3, 1e-15);
  const auto c = DistributionSpec::categorical({0.2, 0.8}).enumerate();
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[1].first, 1.0);
  EXPECT_EQ(c[1].second, 0.8);
  const auto d = DistributionSpec::categorical({1.0}).enumerate();
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].second, 1.0);
  EXPECT_THROW(DistributionSpec::normal(0, 1).enumerate(), UnsupportedError);
}

TEST(Distributions, GammaPathwiseMeanGradient) {
  const Index n = 100000;
  Tape tape;
  const Var a = tape.variable(Matrix::Constant(n, 1, 2.0));
  const Var rate = tape.constant(1.0);
  RngStream rng(21);
  const Var x = Dist::gamma(a, rate, n).sample_reparam(rng);
  const Matrix g = tape.backward(sum(x)).of(a);
  std::vector<double> d(g.data(), g.data() + g.size());
  EXPECT_NEAR(stats::mean(d), 1.0, 3 * stats::standard_error(d));
}

TEST(Distributions, GammaImplicitRateIsExact) {
  for (double s : {0.1, 0.9, 3.3}) EXPECT_DOUBLE_EQ(gamma_implicit_grad(2.2, 1.7, s).second, -s / 1.7);
}

TEST(Distributions, GammaImplicitConcentrationOneVsQuantile) {
  const double x = 0.8;
  const double p = oracle::gamma_cdf(1.0, 1.0, x);
  const double h = 1e-5;
  const double fd = (oracle::gamma_quantile(1.0 + h, 1.0, p) - oracle::gamma_quantile(1.0 - h, 1.0, p)) / (2 * h);
  EXPECT_NEAR(gamma_implicit_grad(1.0, 1.0, x).first, fd, 1e-4);
}

TEST(Distributions, GammaImplicitAtMedianVsQuantile) {
  const double a = 3.0, r = 2.0, h = 1e-5;
  const double median = oracle::gamma_quantile(a, r, 0.5);
  const auto [da, dr] = gamma_implicit_grad(a, r, median);
  const double fa = (oracle::gamma_quantile(a + h, r, 0.5) - oracle::gamma_quantile(a - h, r, 0.5)) / (2 * h);
  const double fr = (oracle::gamma_quantile(a, r + h, 0.5) - oracle::gamma_quantile(a, r - h, 0.5)) / (2 * h);
  EXPECT_NEAR(da, fa, 1e-3 * std::abs(fa));
  EXPECT_NEAR(dr, fr, 1e-3 * std::abs(fr));
}

TEST(Distributions, ContinuousDensitiesIntegrateToOne) {
  EXPECT_NEAR(log_total_mass(DistributionSpec::normal(0.3, 0.7), true), 0.0, 1e-6);
  EXPECT_NEAR(log_total_mass(DistributionSpec::laplace(0.0, 1.5), true), 0.0, 1e-6);
  EXPECT_NEAR(log_total_mass(DistributionSpec::exponential(0.5), false), 0.0, 1e-6);
  EXPECT_NEAR(log_total_mass(DistributionSpec::gamma(2.5, 1.5), false), 0.0, 1e-6);
  EXPECT_NEAR(log_total_mass(DistributionSpec::gamma(0.7, 0.5), false), 0.0, 1e-6);
}

TEST(Distributions, SampleMomentsMatch) {
  struct Case {
    DistributionSpec d;
    double mean, var;
  };
  const std::vector<Case> cases = {
      {DistributionSpec::normal(1.0, 2.0), 1.0, 4.0},
      {DistributionSpec::laplace(-0.5, 1.5), -0.5, 2 * 1.5 * 1.5},
      {DistributionSpec::exponential(0.5), 2.0, 4.0},
      {DistributionSpec::gamma(0.6, 2.0), 0.3, 0.6 / 4.0},
      {DistributionSpec::gamma(3.0, 0.5), 6.0, 12.0},
  };
  RngStream rng(8);
  for (const auto& c : cases) {
    std::vector<double> xs(1000000);
    for (auto& x : xs) x = c.d.sample(rng);
    const Moments m = moments(xs);
    EXPECT_NEAR(m.mean, c.mean, 4 * m.mean_se) << kind_name(c.d.kind());
    EXPECT_NEAR(m.var, c.var, 4 * m.var_se) << kind_name(c.d.kind());
  }
}

TEST(Distributions, LaplaceEntropy) {
  RngStream rng(9);
  const auto d = DistributionSpec::laplace(0, 1);
  std::vector<double> nl(1000000);
  for (auto& v : nl) v = -d.log_prob(d.sample(rng));
  EXPECT_NEAR(stats::mean(nl), 1.0 + std::log(2.0), 4 * stats::standard_error(nl));
}

TEST(Distributions, PathwiseMomentGradients) {
  // d/dtheta E[x] and E[x^2] for each continuous kind, per-row parameter leaves.
  const Index n = 200000;
  struct Case {
    const char* name;
    std::function<Dist(const Var&, const Var&)> make;
    double p0, p1;
    // analytic derivatives of E[x] and E[x^2] w.r.t. (p0, p1)
    std::array<double, 2> d_mean, d_sq;
  };
  const double mu = 0.4, sd = 1.3, b = 0.8, r = 1.5, a = 2.5, gr = 2.0;
  const std::vector<Case> cases = {
      {"normal", [](const Var& p, const Var& q) { return Dist::normal(p, q, p.rows()); }, mu, sd, {1.0, 0.0},
       {2 * mu, 2 * sd}},
      {"laplace", [](const Var& p, const Var& q) { return Dist::laplace(p, q, p.rows()); }, mu, b, {1.0, 0.0},
       {2 * mu, 4 * b}},
      {"exponential", [](const Var& p, const Var&) { return Dist::exponential(p, p.rows()); }, r, 0.0,
       {-1 / (r * r), 0.0}, {-4 / (r * r * r), 0.0}},
      {"gamma", [](const Var& p, const Var& q) { return Dist::gamma(p, q, p.rows()); }, a, gr, {1 / gr, -a / (gr * gr)},
       {(2 * a + 1) / (gr * gr), -2 * a * (a + 1) / (gr * gr * gr)}},
  };
  RngStream rng(31);
  for (const auto& c : cases) {
    for (int power = 1; power <= 2; ++power) {
      Tape tape;
      const Var p0 = tape.variable(Matrix::Constant(n, 1, c.p0));
      const Var p1 = tape.variable(Matrix::Constant(n, 1, c.p1 > 0 ? c.p1 : 1.0));
      const Var x = c.make(p0, p1).sample_reparam(rng);
      const Gradients g = tape.backward(sum(power == 1 ? x : x * x));
      const auto& expect = power == 1 ? c.d_mean : c.d_sq;
      for (int k = 0; k < (c.p1 > 0 ? 2 : 1); ++k) {
        const Matrix gk = g.of(k == 0 ? p0 : p1);
        std::vector<double> v(gk.data(), gk.data() + gk.size());
        EXPECT_NEAR(stats::mean(v), expect[static_cast<std::size_t>(k)], 4 * stats::standard_error(v))
            << c.name << " power " << power << " param " << k;
      }
    }
  }
}

TEST(Distributions, UniformConsumptionContract) {
  auto after = [](const DistributionSpec& d) {
    RngStream a(77), b(77);
    d.sample(a);
    return std::make_pair(a.uniform(), b);
  };
  {
    auto [next, b] = after(DistributionSpec::normal(0, 1));
    b.uniform();
    b.uniform();
    EXPECT_EQ(next, b.uniform());
  }
  for (const auto& d : {DistributionSpec::exponential(1.0), DistributionSpec::laplace(0, 1)}) {
    auto [next, b] = after(d);
    b.uniform();
    EXPECT_EQ(next, b.uniform());
  }
}

TEST(Distributions, FactorizedSumsComponents) {
  const FactorizedSpec f{{DistributionSpec::normal(0, 1), DistributionSpec::laplace(0, 1)}};
  EXPECT_NEAR(f.log_prob({0.0, 0.0}), -0.5 * std::log(2 * std::numbers::pi) - std::log(2.0), 1e-14);
  EXPECT_THROW(f.log_prob({0.0}), ShapeError);
}

TEST(Distributions, TapeLogProbMatchesScalarSpec) {
  Tape tape;
  const Matrix x = (Matrix(2, 2) << 0.5, 1.5, 2.0, 0.1).finished();
  const Var mean = tape.constant((Matrix(1, 2) << 0.1, -0.3).finished());
  const Var sd = tape.constant((Matrix(1, 2) << 1.2, 0.4).finished());
  const Matrix lp = Dist::normal(mean, sd, 2).log_prob(tape.constant(x)).value();
  for (Index r = 0; r < 2; ++r) {
    const double expect = DistributionSpec::normal(0.1, 1.2).log_prob(x(r, 0)) +
                          DistributionSpec::normal(-0.3, 0.4).log_prob(x(r, 1));
    EXPECT_NEAR(lp(r, 0), expect, 1e-13);
  }
  const Matrix g = Dist::gamma(tape.constant(Matrix::Constant(1, 2, 2.0)), tape.constant(Matrix::Constant(1, 2, 3.0)), 2).log_prob(tape.constant(x)).value();
  EXPECT_NEAR(g(0, 0), DistributionSpec::gamma(2, 3).log_prob(0.5) + DistributionSpec::gamma(2, 3).log_prob(1.5), 1e-13);
}
