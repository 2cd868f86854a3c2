#include "hvi/models.hpp"

#include <cmath>
#include <numbers>

#include "hvi/error.hpp"

namespace hvi {

namespace {

IndexList indices_of(const Matrix& v, Index limit, const char* what) {
  IndexList out(static_cast<std::size_t>(v.rows()));
  for (Index r = 0; r < v.rows(); ++r) {
    const double c = v(r, 0);
    if (!(c >= 0.0 && c < static_cast<double>(limit) && std::floor(c) == c))
      throw DomainError(std::string(what) + " index outside the finite support", c);
    out[static_cast<std::size_t>(r)] = static_cast<Index>(c);
  }
  return out;
}

void check_distribution_rows(const Matrix& m, const char* what) {
  for (Index r = 0; r < m.rows(); ++r) {
    double total = 0.0;
    for (Index c = 0; c < m.cols(); ++c) {
      if (!(m(r, c) >= 0.0 && m(r, c) <= 1.0)) throw DomainError(std::string(what) + " has an entry outside [0, 1]", m(r, c));
      total += m(r, c);
    }
    if (std::abs(total - 1.0) > 1e-12) throw DomainError(std::string(what) + " row does not sum to 1", total);
  }
}

Var const_row(Scope& scope, Index dim, double v) { return scope.tape().constant(Matrix::Constant(1, dim, v)); }

Var scale_head(const Var& raw) { return softplus(raw) + kScaleFloor; }

}  // namespace

// ---- HierarchicalModel ----------------------------------------------------------------

Var HierarchicalModel::log_joint(Scope& scope, const Conditioning& cond, const Var& z, const Var& psi) const {
  return psi_prior(scope, cond).log_prob(psi) + z_given_psi(scope, cond, psi).log_prob(z);
}

std::pair<Var, Var> HierarchicalModel::sample_joint(Scope& scope, const Conditioning& cond, RngStream& rng) const {
  const Var psi = psi_prior(scope, cond).draw(rng);
  const Var z = z_given_psi(scope, cond, psi).draw(rng);
  return {psi, z};
}

Dist HierarchicalModel::exact_posterior(Scope&, const Conditioning&, const Var&) const {
  throw UnsupportedError("this model has no exact posterior q(psi | z, x)");
}

Matrix HierarchicalModel::exact_log_marginal(const Matrix&) const {
  throw UnsupportedError("this model has no exact marginal density");
}

// ---- FiniteHvm ------------------------------------------------------------------------

FiniteHvm::FiniteHvm(Matrix psi_probs, Matrix z_given_psi)
    : psi_probs_(std::move(psi_probs)), z_given_psi_(std::move(z_given_psi)) {
  if (psi_probs_.rows() != 1) throw ShapeError("psi_probs must be a single row");
  if (z_given_psi_.rows() != psi_probs_.cols())
    throw ShapeError("z_given_psi needs one row per psi value (" + std::to_string(psi_probs_.cols()) + "), got " +
                     std::to_string(z_given_psi_.rows()));
  if (z_given_psi_.cols() < 1) throw ShapeError("z_given_psi needs at least one column");
  check_distribution_rows(psi_probs_, "psi_probs");
  check_distribution_rows(z_given_psi_, "z_given_psi");
}

FiniteHvm make_discrete_hvm(const std::vector<double>& psi_probs, const Matrix& z_given_psi) {
  Matrix p(1, static_cast<Index>(psi_probs.size()));
  for (std::size_t i = 0; i < psi_probs.size(); ++i) p(0, static_cast<Index>(i)) = psi_probs[i];
  return FiniteHvm(p, z_given_psi);
}

Matrix FiniteHvm::posterior_table() const {
  Matrix joint = z_given_psi_;
  for (Index s = 0; s < joint.rows(); ++s) joint.row(s) *= psi_probs_(0, s);
  const Matrix marg = joint.colwise().sum();
  for (Index z = 0; z < joint.cols(); ++z) joint.col(z) /= marg(0, z);
  return joint;
}

Dist FiniteHvm::psi_prior(Scope& scope, const Conditioning& cond) const {
  return Dist::categorical(scope.tape().constant(psi_probs_.array().log().matrix()), cond.rows());
}

Dist FiniteHvm::z_given_psi(Scope& scope, const Conditioning& cond, const Var& psi) const {
  const IndexList idx = indices_of(psi.value(), psi_support(), "psi");
  Matrix rows(static_cast<Index>(idx.size()), z_support());
  for (std::size_t r = 0; r < idx.size(); ++r) rows.row(static_cast<Index>(r)) = z_given_psi_.row(idx[r]).array().log();
  return Dist::categorical(scope.tape().constant(rows), cond.rows());
}

bool FiniteHvm::is_factorized() const {
  for (Index s = 1; s < z_given_psi_.rows(); ++s)
    if (z_given_psi_.row(s) != z_given_psi_.row(0)) return false;
  return true;
}

Dist FiniteHvm::exact_posterior(Scope& scope, const Conditioning& cond, const Var& z) const {
  const IndexList idx = indices_of(z.value(), z_support(), "z");
  const Matrix post = posterior_table();
  Matrix rows(static_cast<Index>(idx.size()), psi_support());
  for (std::size_t r = 0; r < idx.size(); ++r) rows.row(static_cast<Index>(r)) = post.col(idx[r]).transpose().array().log();
  return Dist::categorical(scope.tape().constant(rows), cond.rows());
}

Matrix FiniteHvm::exact_log_marginal(const Matrix& z) const {
  const IndexList idx = indices_of(z, z_support(), "z");
  Matrix out(z.rows(), 1);
  for (std::size_t r = 0; r < idx.size(); ++r) out(static_cast<Index>(r), 0) = std::log((psi_probs_ * z_given_psi_.col(idx[r]))(0, 0));
  return out;
}

// ---- finite auxiliaries, likelihood and prior ---------------------------------------------

TableAuxiliary::TableAuxiliary(std::string name, Matrix probs) : name_(std::move(name)) {
  check_distribution_rows(probs, "tau table");
  initial_logits_ = probs.array().log().matrix();
}

void TableAuxiliary::init(ParamStore& store, RngStream&) const { store.add(name_ + "/logits", initial_logits_); }

Dist TableAuxiliary::conditional(Scope& scope, const Conditioning& cond, const Var& z) const {
  const Var logits = scope.param(name_ + "/logits");
  const IndexList idx = indices_of(z.value(), logits.rows(), "z");
  return Dist::categorical(gather_rows(log_softmax_rows(logits), idx), cond.rows());
}

Matrix TableAuxiliary::probs(const ParamStore& store) const {
  const Matrix& logits = store.value(name_ + "/logits");
  Matrix p(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

Dist PriorAuxiliary::conditional(Scope& scope, const Conditioning& cond, const Var&) const {
  return q_.psi_prior(scope, cond);
}

Dist PosteriorAuxiliary::conditional(Scope& scope, const Conditioning& cond, const Var& z) const {
  return q_.exact_posterior(scope, cond, z);
}

FiniteLikelihood::FiniteLikelihood(Matrix x_given_z) : table_(std::move(x_given_z)) {
  check_distribution_rows(table_, "x_given_z");
}

Var FiniteLikelihood::log_prob(Scope& scope, const Conditioning& cond, const Var& z) const {
  if (!cond.has_x()) throw ShapeError("finite likelihood needs an observed x");
  const IndexList xi = indices_of(cond.x.value(), table_.cols(), "x");
  const IndexList zi = indices_of(z.value(), table_.rows(), "z");
  Matrix out(z.rows(), 1);
  for (Index r = 0; r < z.rows(); ++r)
    out(r, 0) = std::log(table_(zi[static_cast<std::size_t>(r)], xi[static_cast<std::size_t>(r % cond.units)]));
  return scope.tape().constant(out);
}

FinitePrior::FinitePrior(Matrix probs) : probs_(std::move(probs)) {
  if (probs_.rows() != 1) throw ShapeError("finite prior must be a single row");
  check_distribution_rows(probs_, "prior");
}

Dist FinitePrior::prior(Scope& scope, Index rows) const {
  return Dist::categorical(scope.tape().constant(probs_.array().log().matrix()), rows);
}

// ---- LaplaceScaleMixture ----------------------------------------------------------------

LaplaceScaleMixture::LaplaceScaleMixture(Index dim) : dim_(dim) {
  if (dim < 1) throw ConfigError("scale mixture dimension must be positive");
}

Dist LaplaceScaleMixture::psi_prior(Scope& scope, const Conditioning& cond) const {
  return Dist::exponential(const_row(scope, dim_, 0.5), cond.rows());
}

Dist LaplaceScaleMixture::z_given_psi(Scope& scope, const Conditioning& cond, const Var& psi) const {
  // psi is the variance, so the stddev is sqrt(psi).
  return Dist::normal(const_row(scope, dim_, 0.0), sqrt(psi), cond.rows());
}

Matrix LaplaceScaleMixture::exact_log_marginal(const Matrix& z) const {
  return (-std::log(2.0) * static_cast<double>(z.cols()) - z.array().abs().rowwise().sum()).matrix();
}

// ---- GaussianChain ---------------------------------------------------------------------

GaussianChain::GaussianChain(Index dim, GaussianChainParams p) : dim_(dim), p_(p) {
  if (dim < 1) throw ConfigError("Gaussian chain dimension must be positive");
  if (!(p.psi_sd > 0.0)) throw DomainError("psi_sd must be positive", p.psi_sd);
  if (!(p.noise_sd > 0.0)) throw DomainError("noise_sd must be positive", p.noise_sd);
}

Dist GaussianChain::psi_prior(Scope& scope, const Conditioning& cond) const {
  return Dist::normal(const_row(scope, dim_, p_.psi_mean), scope.tape().constant(p_.psi_sd), cond.rows());
}

Dist GaussianChain::z_given_psi(Scope& scope, const Conditioning& cond, const Var& psi) const {
  return Dist::normal(psi * p_.coef + p_.offset, scope.tape().constant(p_.noise_sd), cond.rows());
}

double GaussianChain::posterior_variance() const {
  return 1.0 / (1.0 / (p_.psi_sd * p_.psi_sd) + p_.coef * p_.coef / (p_.noise_sd * p_.noise_sd));
}

double GaussianChain::posterior_slope() const {
  return posterior_variance() * p_.coef / (p_.noise_sd * p_.noise_sd);
}

double GaussianChain::posterior_intercept() const {
  return posterior_variance() *
         (p_.psi_mean / (p_.psi_sd * p_.psi_sd) - p_.coef * p_.offset / (p_.noise_sd * p_.noise_sd));
}

Dist GaussianChain::exact_posterior(Scope& scope, const Conditioning& cond, const Var& z) const {
  return Dist::normal(z * posterior_slope() + posterior_intercept(),
                      scope.tape().constant(std::sqrt(posterior_variance())), cond.rows());
}

Matrix GaussianChain::exact_log_marginal(const Matrix& z) const {
  const double mean = p_.coef * p_.psi_mean + p_.offset;
  const double var = p_.coef * p_.coef * p_.psi_sd * p_.psi_sd + p_.noise_sd * p_.noise_sd;
  const double c = -0.5 * std::log(2.0 * std::numbers::pi * var);
  return ((z.array() - mean).square() * (-0.5 / var) + c).rowwise().sum().matrix();
}

// ---- SNR task -----------------------------------------------------------------------------

LinearGaussianAuxiliary::LinearGaussianAuxiliary(std::string name, Index dim, double variance, Matrix A0, Matrix b0)
    : name_(std::move(name)), dim_(dim), variance_(variance), A0_(std::move(A0)), b0_(std::move(b0)) {
  if (A0_.rows() != dim || A0_.cols() != dim || b0_.rows() != 1 || b0_.cols() != dim)
    throw ShapeError("linear auxiliary needs A: dim x dim and b: 1 x dim");
  if (!(variance > 0.0)) throw DomainError("auxiliary variance must be positive", variance);
}

void LinearGaussianAuxiliary::init(ParamStore& store, RngStream&) const {
  store.add(a_key(), A0_);
  store.add(b_key(), b0_);
}

Dist LinearGaussianAuxiliary::conditional(Scope& scope, const Conditioning& cond, const Var& z) const {
  const Var mean = matmul(z, transpose(scope.param(a_key()))) + scope.param(b_key());
  return Dist::normal(mean, scope.tape().constant(std::sqrt(variance_)), cond.rows());
}

Var GaussianLikelihood::log_prob(Scope& scope, const Conditioning& cond, const Var& z) const {
  if (!cond.has_x()) throw ShapeError("Gaussian likelihood needs an observed x");
  return Dist::normal(z, scope.tape().constant(sd_), cond.rows()).log_prob(cond.x_rows());
}

Dist NormalPrior::prior(Scope& scope, Index rows) const {
  return Dist::normal(const_row(scope, dim_, mean_), scope.tape().constant(sd_), rows);
}

SnrTask make_snr_task(Index dim, const std::string& tau_name) {
  SnrTask t;
  t.theta = Matrix::Ones(1, dim);
  t.model = std::make_unique<GaussianChain>(dim, GaussianChainParams{1.0, 1.0, 1.0, 0.0, 1.0});
  t.tau = std::make_unique<LinearGaussianAuxiliary>(tau_name, dim, 2.0 / 3.0, Matrix::Zero(dim, dim), Matrix::Zero(1, dim));
  return t;
}

// ---- Gamma auxiliary -----------------------------------------------------------------------

GammaMlpAuxiliary::GammaMlpAuxiliary(std::string name, Index dim, std::vector<Index> hidden, double fallback_concentration,
                                     double fallback_rate, bool gated, bool per_coordinate)
    : name_(name),
      dim_(dim),
      fallback_conc_(fallback_concentration),
      fallback_rate_(fallback_rate),
      gated_(gated),
      per_coordinate_(per_coordinate),
      mlp_(MlpLayout{name, 0, per_coordinate ? 1 : dim, std::move(hidden),
                     std::vector<Index>(gated ? 3 : 2, per_coordinate ? 1 : dim), false, gated ? 2 : -1, -5.0}) {}

void GammaMlpAuxiliary::init(ParamStore& store, RngStream& rng) const { mlp_.init(store, rng); }

std::vector<Var> GammaMlpAuxiliary::heads(Scope& scope, const Var& z) const {
  if (!per_coordinate_) return mlp_.forward(scope, Conditioning::none(z.rows()), Var(), z);
  const Index n = z.rows() * z.cols();
  std::vector<Var> out = mlp_.forward(scope, Conditioning::none(n), Var(), reshape(z, n, 1));
  for (Var& h : out) h = reshape(h, z.rows(), z.cols());
  return out;
}

Dist GammaMlpAuxiliary::conditional(Scope& scope, const Conditioning& cond, const Var& z) const {
  const std::vector<Var> h = heads(scope, z);
  Var conc = scale_head(h[0]);
  Var rate = scale_head(h[1]);
  if (gated_) {
    const Var g = sigmoid(h[2]);
    conc = g * conc + (1.0 - g) * fallback_conc_;
    rate = g * rate + (1.0 - g) * fallback_rate_;
  }
  return Dist::gamma(conc, rate, cond.rows());
}

Matrix GammaMlpAuxiliary::gate(Scope& scope, const Var& z) const {
  if (!gated_) return Matrix::Ones(z.rows(), dim_);
  return sigmoid(heads(scope, z)[2]).value();
}

// ---- mini VAE --------------------------------------------------------------------------------

VaeEncoder::VaeEncoder(const MiniVaeConfig& cfg)
    : cfg_(cfg), mlp_(MlpLayout{"q/enc", cfg.input_dim, cfg.psi_dim, cfg.hidden, {cfg.z_dim, cfg.z_dim}, true, -1, -5.0}) {}

void VaeEncoder::init(ParamStore& store, RngStream& rng) const {
  mlp_.init(store, rng);
  if (cfg_.psi_gate) store.add("q/psi_gate", Matrix::Constant(1, cfg_.psi_dim, -5.0));
}

Dist VaeEncoder::psi_prior(Scope& scope, const Conditioning& cond) const {
  return Dist::normal(const_row(scope, cfg_.psi_dim, 0.0), scope.tape().constant(1.0), cond.rows());
}

Dist VaeEncoder::z_given_psi(Scope& scope, const Conditioning& cond, const Var& psi) const {
  const Var side = cfg_.psi_gate ? psi * sigmoid(scope.param("q/psi_gate")) : psi;
  const std::vector<Var> h = mlp_.forward(scope, cond, cond.x, side);
  return Dist::normal(h[0], scale_head(h[1]), cond.rows());
}

GaussianMlpAuxiliary::GaussianMlpAuxiliary(const MiniVaeConfig& cfg)
    : cfg_(cfg),
      mlp_(MlpLayout{"tau/net", cfg.input_dim, cfg.z_dim, cfg.hidden,
                     cfg.tau_gate ? std::vector<Index>{cfg.psi_dim, cfg.psi_dim, cfg.psi_dim}
                                  : std::vector<Index>{cfg.psi_dim, cfg.psi_dim},
                     false, cfg.tau_gate ? 2 : -1, -5.0}) {}

void GaussianMlpAuxiliary::init(ParamStore& store, RngStream& rng) const { mlp_.init(store, rng); }

Dist GaussianMlpAuxiliary::conditional(Scope& scope, const Conditioning& cond, const Var& z) const {
  const std::vector<Var> h = mlp_.forward(scope, cond, cond.x, z);
  Var mean = h[0];
  Var sd = scale_head(h[1]);
  if (cfg_.tau_gate) {
    const Var g = sigmoid(h[2]);
    mean = g * mean;
    sd = g * sd + (1.0 - g);
  }
  return Dist::normal(mean, sd, cond.rows());
}

BernoulliDecoder::BernoulliDecoder(const MiniVaeConfig& cfg)
    : cfg_(cfg), mlp_(MlpLayout{"p/dec", 0, cfg.z_dim, cfg.hidden, {cfg.input_dim}, false, -1, -5.0}) {}

void BernoulliDecoder::init(ParamStore& store, RngStream& rng) const { mlp_.init(store, rng); }

Var BernoulliDecoder::logits(Scope& scope, const Conditioning& cond, const Var& z) const {
  return mlp_.forward(scope, Conditioning::none(cond.rows()), Var(), z)[0];
}

Var BernoulliDecoder::log_prob(Scope& scope, const Conditioning& cond, const Var& z) const {
  if (!cond.has_x()) throw ShapeError("decoder needs an observed x");
  return Dist::bernoulli_logits(logits(scope, cond, z), cond.rows()).log_prob(cond.x_rows());
}

void MiniVae::init(ParamStore& store, RngStream& rng) const {
  q->init(store, rng);
  tau->init(store, rng);
  decoder->init(store, rng);
}

MiniVae make_mini_vae(const MiniVaeConfig& cfg) {
  if (cfg.input_dim < 1 || cfg.z_dim < 1 || cfg.psi_dim < 1) throw ConfigError("mini VAE dimensions must be positive");
  for (Index h : cfg.hidden)
    if (h < 1) throw ConfigError("hidden layer sizes must be positive");
  MiniVae vae;
  vae.config = cfg;
  vae.q = std::make_unique<VaeEncoder>(cfg);
  vae.tau = std::make_unique<GaussianMlpAuxiliary>(cfg);
  vae.decoder = std::make_unique<BernoulliDecoder>(cfg);
  vae.prior = std::make_unique<NormalPrior>(cfg.z_dim);
  return vae;
}

}  // namespace hvi
