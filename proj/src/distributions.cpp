#include "hvi/distributions.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "hvi/error.hpp"
#include "hvi/special.hpp"

namespace hvi {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void require(bool ok, const char* what, double v) {
  if (!ok) throw DomainError(what, v);
}

void require_positive_values(const Var& v, const char* what) {
  const Matrix& m = v.value();
  for (Index i = 0; i < m.size(); ++i) require(m.data()[i] > 0.0, what, m.data()[i]);
}

/// Laplace noise from one uniform: -sign(u - 1/2) log(1 - 2|u - 1/2|).
double laplace_noise(double u) {
  const double c = u - 0.5;
  return -std::copysign(1.0, c) * std::log1p(-2.0 * std::abs(c));
}

}  // namespace

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Normal: return "Normal";
    case Kind::Laplace: return "Laplace";
    case Kind::Exponential: return "Exponential";
    case Kind::Gamma: return "Gamma";
    case Kind::Bernoulli: return "Bernoulli";
    case Kind::Categorical: return "Categorical";
  }
  return "?";
}

bool is_continuous(Kind k) { return k != Kind::Bernoulli && k != Kind::Categorical; }

// ---- DistributionSpec -------------------------------------------------------------

DistributionSpec DistributionSpec::normal(double mean, double stddev) {
  require(stddev > 0.0, "Normal stddev must be positive", stddev);
  return DistributionSpec(Kind::Normal, {mean, stddev});
}

DistributionSpec DistributionSpec::laplace(double location, double scale) {
  require(scale > 0.0, "Laplace scale must be positive", scale);
  return DistributionSpec(Kind::Laplace, {location, scale});
}

DistributionSpec DistributionSpec::exponential(double rate) {
  require(rate > 0.0, "Exponential rate must be positive", rate);
  return DistributionSpec(Kind::Exponential, {rate});
}

DistributionSpec DistributionSpec::gamma(double concentration, double rate) {
  require(concentration > 0.0, "Gamma concentration must be positive", concentration);
  require(rate > 0.0, "Gamma rate must be positive", rate);
  return DistributionSpec(Kind::Gamma, {concentration, rate});
}

DistributionSpec DistributionSpec::bernoulli(double probability) {
  require(probability >= 0.0 && probability <= 1.0, "Bernoulli probability outside [0, 1]", probability);
  return DistributionSpec(Kind::Bernoulli, {probability});
}

DistributionSpec DistributionSpec::categorical(std::vector<double> probabilities) {
  if (probabilities.empty()) throw ShapeError("categorical needs at least one outcome");
  double total = 0.0;
  for (double p : probabilities) {
    require(p >= 0.0 && p <= 1.0, "categorical probability outside [0, 1]", p);
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-12, "categorical probabilities must sum to 1", total);
  return DistributionSpec(Kind::Categorical, std::move(probabilities));
}

double DistributionSpec::log_prob(double x) const {
  const auto& p = params_;
  switch (kind_) {
    case Kind::Normal: {
      const double t = (x - p[0]) / p[1];
      return -0.5 * t * t - std::log(p[1]) - kHalfLog2Pi;
    }
    case Kind::Laplace:
      return -std::log(2.0 * p[1]) - std::abs(x - p[0]) / p[1];
    case Kind::Exponential:
      require(x >= 0.0, "Exponential value outside the support", x);
      return std::log(p[0]) - p[0] * x;
    case Kind::Gamma:
      require(x > 0.0, "Gamma value outside the support", x);
      return p[0] * std::log(p[1]) + (p[0] - 1.0) * std::log(x) - p[1] * x - special::lgamma(p[0]);
    case Kind::Bernoulli:
      require(x == 0.0 || x == 1.0, "Bernoulli value must be 0 or 1", x);
      return std::log(x == 1.0 ? p[0] : 1.0 - p[0]);
    case Kind::Categorical: {
      require(x >= 0.0 && x < static_cast<double>(p.size()) && std::floor(x) == x, "categorical index outside the support", x);
      return std::log(p[static_cast<std::size_t>(x)]);
    }
  }
  throw UnsupportedError("unknown distribution kind");
}

double DistributionSpec::sample(RngStream& rng) const {
  const auto& p = params_;
  switch (kind_) {
    case Kind::Normal:
      return p[0] + p[1] * rng.normal();
    case Kind::Laplace:
      return p[0] + p[1] * laplace_noise(rng.uniform());
    case Kind::Exponential:
      return -std::log(rng.uniform()) / p[0];
    case Kind::Gamma:
      return sample_standard_gamma(p[0], rng) / p[1];
    case Kind::Bernoulli:
      return rng.uniform() < p[0] ? 1.0 : 0.0;
    case Kind::Categorical: {
      const double u = rng.uniform();
      double acc = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return static_cast<double>(i);
      }
      return static_cast<double>(p.size() - 1);
    }
  }
  throw UnsupportedError("unknown distribution kind");
}

std::pair<Var, std::vector<Var>> DistributionSpec::sample_reparam(RngStream& rng, Tape& tape) const {
  if (!is_continuous(kind_))
    throw UnsupportedError(std::string("sample_reparam is undefined for ") + kind_name(kind_) + "; use enumerate");
  std::vector<Var> leaves;
  for (double v : params_) leaves.push_back(tape.variable(v));
  Dist d = [&] {
    switch (kind_) {
      case Kind::Normal: return Dist::normal(leaves[0], leaves[1], 1);
      case Kind::Laplace: return Dist::laplace(leaves[0], leaves[1], 1);
      case Kind::Exponential: return Dist::exponential(leaves[0], 1);
      default: return Dist::gamma(leaves[0], leaves[1], 1);
    }
  }();
  return {d.sample_reparam(rng), leaves};
}

std::vector<std::pair<double, double>> DistributionSpec::enumerate() const {
  if (kind_ == Kind::Bernoulli) return {{0.0, 1.0 - params_[0]}, {1.0, params_[0]}};
  if (kind_ == Kind::Categorical) {
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) out.emplace_back(static_cast<double>(i), params_[i]);
    return out;
  }
  throw UnsupportedError(std::string("cannot enumerate a continuous ") + kind_name(kind_) + " distribution");
}

double FactorizedSpec::log_prob(const std::vector<double>& value) const {
  if (value.size() != components.size()) throw ShapeError("factorized value has the wrong dimension");
  double total = 0.0;
  for (std::size_t i = 0; i < value.size(); ++i) total += components[i].log_prob(value[i]);
  return total;
}

// ---- Gamma sampling -------------------------------------------------------------------

double sample_standard_gamma(double a, RngStream& rng) {
  require(a > 0.0, "Gamma concentration must be positive", a);
  if (a < 1.0) {
    // Boost: X ~ Gamma(a + 1), U^(1/a) X ~ Gamma(a).
    const double g = sample_standard_gamma(a + 1.0, rng);
    const double u = rng.uniform();
    return std::max(g * std::pow(u, 1.0 / a), std::numeric_limits<double>::min());
  }
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = rng.normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.uniform();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

std::pair<double, double> gamma_implicit_grad(double a, double rate, double sample) {
  require(a > 0.0, "Gamma concentration must be positive", a);
  require(rate > 0.0, "Gamma rate must be positive", rate);
  require(sample > 0.0, "Gamma sample must be positive", sample);
  const double s = sample * rate;
  const double h = 1e-5 * std::max(1.0, a);
  double dpda;
  if (a - h > 0.0)
    dpda = (special::gamma_p(a + h, s) - special::gamma_p(a - h, s)) / (2.0 * h);
  else
    dpda = (special::gamma_p(a + h, s) - special::gamma_p(a, s)) / h;
  const double density = std::exp(special::log_gamma_density(a, s));
  const double ds_da = density > 0.0 ? -dpda / density : 0.0;
  return {ds_da / rate, -sample / rate};
}

// ---- Dist -------------------------------------------------------------------------------

Dist::Dist(Kind k, std::vector<Var> params, Index rows) : kind_(k), params_(std::move(params)), rows_(rows) {
  if (rows_ < 1) throw ShapeError("a distribution needs at least one row");
  for (const Var& p : params_) {
    if (!p.valid()) throw ShapeError("distribution parameter is unbound");
    if (p.rows() != 1 && p.rows() != rows_)
      throw ShapeError(std::string(kind_name(k)) + " parameter has " + std::to_string(p.rows()) +
                       " rows, expected 1 or " + std::to_string(rows_));
  }
}

Dist Dist::normal(const Var& mean, const Var& stddev, Index rows) {
  require_positive_values(stddev, "Normal stddev must be positive");
  return Dist(Kind::Normal, {mean, stddev}, rows);
}

Dist Dist::laplace(const Var& location, const Var& scale, Index rows) {
  require_positive_values(scale, "Laplace scale must be positive");
  return Dist(Kind::Laplace, {location, scale}, rows);
}

Dist Dist::exponential(const Var& rate, Index rows) {
  require_positive_values(rate, "Exponential rate must be positive");
  return Dist(Kind::Exponential, {rate}, rows);
}

Dist Dist::gamma(const Var& concentration, const Var& rate, Index rows) {
  require_positive_values(concentration, "Gamma concentration must be positive");
  require_positive_values(rate, "Gamma rate must be positive");
  return Dist(Kind::Gamma, {concentration, rate}, rows);
}

Dist Dist::bernoulli_logits(const Var& logits, Index rows) { return Dist(Kind::Bernoulli, {logits}, rows); }

Dist Dist::categorical(const Var& log_probs, Index rows) { return Dist(Kind::Categorical, {log_probs}, rows); }

Index Dist::dim() const {
  if (kind_ == Kind::Categorical) return 1;
  Index d = 1;
  for (const Var& p : params_) d = std::max(d, p.cols());
  return d;
}

Var Dist::log_prob(const Var& value) const {
  const Var lp = log_prob_elementwise(value);
  return lp.cols() == 1 ? lp : sum_rows(lp);
}

Var Dist::log_prob_elementwise(const Var& x) const {
  const Index d = dim();
  if (x.rows() != rows_ || x.cols() != d)
    throw ShapeError(std::string(kind_name(kind_)) + " value is " + std::to_string(x.rows()) + "x" +
                     std::to_string(x.cols()) + ", expected " + std::to_string(rows_) + "x" + std::to_string(d));
  const auto& p = params_;
  switch (kind_) {
    case Kind::Normal: {
      const Var t = (x - p[0]) / p[1];
      return -0.5 * square(t) - log(p[1]) - kHalfLog2Pi;
    }
    case Kind::Laplace:
      return -log(2.0 * p[1]) - abs(x - p[0]) / p[1];
    case Kind::Exponential: {
      const Matrix& v = x.value();
      for (Index i = 0; i < v.size(); ++i) require(v.data()[i] >= 0.0, "Exponential value outside the support", v.data()[i]);
      return log(p[0]) - p[0] * x;
    }
    case Kind::Gamma:
      return p[0] * log(p[1]) + (p[0] - 1.0) * log(x) - p[1] * x - lgamma(p[0]);
    case Kind::Bernoulli: {
      const Matrix& v = x.value();
      for (Index i = 0; i < v.size(); ++i)
        require(v.data()[i] == 0.0 || v.data()[i] == 1.0, "Bernoulli value must be 0 or 1", v.data()[i]);
      return x * p[0] - softplus(p[0]);
    }
    case Kind::Categorical: {
      const Matrix& v = x.value();
      const Index n = p[0].cols();
      IndexList idx(static_cast<std::size_t>(rows_));
      for (Index r = 0; r < rows_; ++r) {
        const double c = v(r, 0);
        require(c >= 0.0 && c < static_cast<double>(n) && std::floor(c) == c, "categorical index outside the support", c);
        idx[static_cast<std::size_t>(r)] = static_cast<Index>(c);
      }
      const Var table = p[0].rows() == rows_ ? p[0] : gather_rows(p[0], IndexList(static_cast<std::size_t>(rows_), 0));
      return pick_cols(table, idx);
    }
  }
  throw UnsupportedError("unknown distribution kind");
}

Var Dist::sample_reparam(RngStream& rng) const {
  if (!is_continuous(kind_))
    throw UnsupportedError(std::string("sample_reparam is undefined for ") + kind_name(kind_) + "; use enumerate");
  const Index d = dim();
  Tape& t = tape();
  Matrix noise(rows_, d);
  switch (kind_) {
    case Kind::Normal:
      for (Index r = 0; r < rows_; ++r)
        for (Index c = 0; c < d; ++c) noise(r, c) = rng.normal();
      return params_[0] + params_[1] * t.constant(noise);
    case Kind::Laplace:
      for (Index r = 0; r < rows_; ++r)
        for (Index c = 0; c < d; ++c) noise(r, c) = laplace_noise(rng.uniform());
      return params_[0] + params_[1] * t.constant(noise);
    case Kind::Exponential:
      for (Index r = 0; r < rows_; ++r)
        for (Index c = 0; c < d; ++c) noise(r, c) = -std::log(rng.uniform());
      return t.constant(noise) / params_[0];
    case Kind::Gamma: {
      Var conc = params_[0];
      if (conc.rows() != rows_ || conc.cols() != d) conc = conc * t.constant(Matrix::Ones(rows_, d));
      const Matrix& a = conc.value();
      Matrix dsda(rows_, d);
      for (Index r = 0; r < rows_; ++r)
        for (Index c = 0; c < d; ++c) {
          noise(r, c) = sample_standard_gamma(a(r, c), rng);
          dsda(r, c) = gamma_implicit_grad(a(r, c), 1.0, noise(r, c)).first;
        }
      return gamma_standard(conc, noise, dsda) / params_[1];
    }
    default:
      break;
  }
  throw UnsupportedError("unknown distribution kind");
}

Var Dist::draw(RngStream& rng) const {
  if (is_continuous(kind_)) return sample_reparam(rng);
  Tape& t = tape();
  if (t.requires_grad(params_[0].id())) t.mark_nonreparameterized();
  const Matrix& p = params_[0].value();
  if (kind_ == Kind::Bernoulli) {
    const Index d = dim();
    Matrix out(rows_, d);
    for (Index r = 0; r < rows_; ++r)
      for (Index c = 0; c < d; ++c) {
        const double logit = p(p.rows() == 1 ? 0 : r, p.cols() == 1 ? 0 : c);
        out(r, c) = rng.uniform() < special::sigmoid(logit) ? 1.0 : 0.0;
      }
    return t.constant(out);
  }
  Matrix out(rows_, 1);
  for (Index r = 0; r < rows_; ++r) {
    const Index pr = p.rows() == 1 ? 0 : r;
    const double u = rng.uniform();
    Index pick = p.cols() - 1;
    double acc = 0.0;
    for (Index c = 0; c < p.cols(); ++c) {
      acc += std::exp(p(pr, c));
      if (u < acc) {
        pick = c;
        break;
      }
    }
    out(r, 0) = static_cast<double>(pick);
  }
  return t.constant(out);
}

Dist Dist::gather(const IndexList& idx) const {
  for (Index i : idx)
    if (i < 0 || i >= rows_) throw ShapeError("distribution gather index out of range");
  std::vector<Var> ps;
  for (const Var& p : params_) ps.push_back(p.rows() == 1 ? p : gather_rows(p, idx));
  return Dist(kind_, std::move(ps), static_cast<Index>(idx.size()));
}

Dist Dist::tile(Index reps) const {
  if (reps == 1) return *this;
  bool shared = true;
  for (const Var& p : params_) shared = shared && p.rows() == 1;
  if (shared) return Dist(kind_, params_, rows_ * reps);
  return gather(tile_index(rows_, reps));
}

Dist Dist::detach() const {
  std::vector<Var> ps;
  for (const Var& p : params_) ps.push_back(stop_gradient(p));
  return Dist(kind_, std::move(ps), rows_);
}

IndexList tile_index(Index rows, Index reps) {
  IndexList idx(static_cast<std::size_t>(rows * reps));
  for (Index k = 0; k < reps; ++k)
    for (Index r = 0; r < rows; ++r) idx[static_cast<std::size_t>(k * rows + r)] = r;
  return idx;
}

Var tile_rows(const Var& x, Index reps) {
  if (reps == 1) return x;
  return gather_rows(x, tile_index(x.rows(), reps));
}

}  // namespace hvi
