#pragma once

#include <memory>
#include <variant>
#include <vector>

#include "hvi/conditioning.hpp"
#include "hvi/mlp.hpp"

namespace hvi {

/// Joint density q(z, psi | x) = q(psi | x) q(z | psi, x). Also used for hierarchical priors p(z, zeta).
class HierarchicalModel {
 public:
  virtual ~HierarchicalModel() = default;

  virtual Index psi_dim() const = 0;
  virtual Index z_dim() const = 0;
  virtual void init(ParamStore&, RngStream&) const {}

  /// q(psi | x) with cond.rows() rows.
  virtual Dist psi_prior(Scope& scope, const Conditioning& cond) const = 0;
  /// q(z | psi, x); psi has cond.rows() rows.
  virtual Dist z_given_psi(Scope& scope, const Conditioning& cond, const Var& psi) const = 0;

  /// log q(z, psi | x), rows x 1.
  Var log_joint(Scope& scope, const Conditioning& cond, const Var& z, const Var& psi) const;
  /// Ancestral draw: psi ~ q(psi | x), then z ~ q(z | psi, x). Returns (psi, z).
  std::pair<Var, Var> sample_joint(Scope& scope, const Conditioning& cond, RngStream& rng) const;

  /// q(z | psi, x) does not depend on psi.
  virtual bool is_factorized() const { return false; }

  virtual bool has_exact_posterior() const { return false; }
  /// q(psi | z, x). Throws UnsupportedError unless has_exact_posterior().
  virtual Dist exact_posterior(Scope& scope, const Conditioning& cond, const Var& z) const;

  virtual bool has_exact_marginal() const { return false; }
  /// log q(z) per row of z. Throws UnsupportedError unless has_exact_marginal().
  virtual Matrix exact_log_marginal(const Matrix& z) const;
};

/// Auxiliary inference distribution tau(psi | z, x) (or rho(zeta | z)).
class AuxiliaryInference {
 public:
  virtual ~AuxiliaryInference() = default;
  virtual void init(ParamStore&, RngStream&) const {}
  /// Distribution with cond.rows() rows; z has cond.rows() rows.
  virtual Dist conditional(Scope& scope, const Conditioning& cond, const Var& z) const = 0;
};

/// log p(x | z).
class Likelihood {
 public:
  virtual ~Likelihood() = default;
  virtual void init(ParamStore&, RngStream&) const {}
  virtual Var log_prob(Scope& scope, const Conditioning& cond, const Var& z) const = 0;
};

/// A prior p(z) with a tractable density.
class ExplicitPrior {
 public:
  virtual ~ExplicitPrior() = default;
  virtual Dist prior(Scope& scope, Index rows) const = 0;
};

/// p(z) = ∫ p(z, zeta) dzeta, estimated with L samples from rho(zeta | z).
struct HierarchicalPrior {
  const HierarchicalModel* model = nullptr;
  const AuxiliaryInference* rho = nullptr;
  Index L = 1;
};

using PriorSpec = std::variant<const ExplicitPrior*, HierarchicalPrior>;

struct GenerativeModel {
  const Likelihood* likelihood = nullptr;
  PriorSpec prior;
};

// ---- finite models --------------------------------------------------------------

/// psi in {0..S-1}, z in {0..Z-1} with probability tables; x is ignored.
class FiniteHvm : public HierarchicalModel {
 public:
  /// psi_probs: 1 x S, z_given_psi: S x Z (rows are conditional distributions).
  FiniteHvm(Matrix psi_probs, Matrix z_given_psi);

  Index psi_dim() const override { return 1; }
  Index z_dim() const override { return 1; }
  Index psi_support() const { return psi_probs_.cols(); }
  Index z_support() const { return z_given_psi_.cols(); }
  const Matrix& psi_probs() const { return psi_probs_; }
  const Matrix& z_given_psi() const { return z_given_psi_; }
  /// S x Z table of q(psi | z), column z is a distribution over psi.
  Matrix posterior_table() const;

  Dist psi_prior(Scope& scope, const Conditioning& cond) const override;
  Dist z_given_psi(Scope& scope, const Conditioning& cond, const Var& psi) const override;
  bool is_factorized() const override;
  bool has_exact_posterior() const override { return true; }
  Dist exact_posterior(Scope& scope, const Conditioning& cond, const Var& z) const override;
  bool has_exact_marginal() const override { return true; }
  Matrix exact_log_marginal(const Matrix& z) const override;

 private:
  Matrix psi_probs_;
  Matrix z_given_psi_;
};

FiniteHvm make_discrete_hvm(const std::vector<double>& psi_probs, const Matrix& z_given_psi);

/// tau(psi | z) = softmax(logits[z]) over a finite psi support; logits live in the ParamStore.
class TableAuxiliary : public AuxiliaryInference {
 public:
  /// `probs` is Z x S (row z is tau(. | z)); stored as log-probabilities.
  TableAuxiliary(std::string name, Matrix probs);
  const std::string& name() const { return name_; }
  void init(ParamStore& store, RngStream& rng) const override;
  Dist conditional(Scope& scope, const Conditioning& cond, const Var& z) const override;
  /// Current Z x S probability table.
  Matrix probs(const ParamStore& store) const;

 private:
  std::string name_;
  Matrix initial_logits_;
};

/// tau(psi | z, x) := q(psi | x).
class PriorAuxiliary : public AuxiliaryInference {
 public:
  explicit PriorAuxiliary(const HierarchicalModel& q) : q_(q) {}
  Dist conditional(Scope& scope, const Conditioning& cond, const Var& z) const override;

 private:
  const HierarchicalModel& q_;
};

/// tau(psi | z, x) := q(psi | z, x), for models with an exact posterior.
class PosteriorAuxiliary : public AuxiliaryInference {
 public:
  explicit PosteriorAuxiliary(const HierarchicalModel& q) : q_(q) {}
  Dist conditional(Scope& scope, const Conditioning& cond, const Var& z) const override;

 private:
  const HierarchicalModel& q_;
};

/// Finite likelihood p(x | z) from a Z x X table; cond.x holds one index per unit.
class FiniteLikelihood : public Likelihood {
 public:
  explicit FiniteLikelihood(Matrix x_given_z);
  const Matrix& table() const { return table_; }
  Var log_prob(Scope& scope, const Conditioning& cond, const Var& z) const override;

 private:
  Matrix table_;
};

/// Finite prior p(z) over {0..Z-1}.
class FinitePrior : public ExplicitPrior {
 public:
  explicit FinitePrior(Matrix probs);
  const Matrix& probs() const { return probs_; }
  Dist prior(Scope& scope, Index rows) const override;

 private:
  Matrix probs_;
};

// ---- continuous models --------------------------------------------------------------

/// psi_d ~ Exponential(rate 1/2), z_d | psi ~ Normal(0, stddev sqrt(psi_d)).
/// psi is a variance: with rate 1/2 mixing the marginal of each z_d is Laplace(0, 1).
class LaplaceScaleMixture : public HierarchicalModel {
 public:
  explicit LaplaceScaleMixture(Index dim);
  Index psi_dim() const override { return dim_; }
  Index z_dim() const override { return dim_; }
  Dist psi_prior(Scope& scope, const Conditioning& cond) const override;
  Dist z_given_psi(Scope& scope, const Conditioning& cond, const Var& psi) const override;
  bool has_exact_marginal() const override { return true; }
  Matrix exact_log_marginal(const Matrix& z) const override;

 private:
  Index dim_;
};

struct GaussianChainParams {
  double psi_mean = 0.0;
  double psi_sd = 1.0;
  double coef = 1.0;    ///< z = coef * psi + offset + noise
  double offset = 0.0;
  double noise_sd = 1.0;
};

/// psi ~ N(psi_mean, psi_sd^2 I), z | psi ~ N(coef psi + offset, noise_sd^2 I). Conjugate.
class GaussianChain : public HierarchicalModel {
 public:
  GaussianChain(Index dim, GaussianChainParams p);
  Index psi_dim() const override { return dim_; }
  Index z_dim() const override { return dim_; }
  const GaussianChainParams& params() const { return p_; }
  Dist psi_prior(Scope& scope, const Conditioning& cond) const override;
  Dist z_given_psi(Scope& scope, const Conditioning& cond, const Var& psi) const override;
  bool is_factorized() const override { return p_.coef == 0.0; }
  bool has_exact_posterior() const override { return true; }
  Dist exact_posterior(Scope& scope, const Conditioning& cond, const Var& z) const override;
  bool has_exact_marginal() const override { return true; }
  Matrix exact_log_marginal(const Matrix& z) const override;
  /// Posterior mean coefficient and offset: E[psi | z] = slope * z + intercept; and posterior variance.
  double posterior_slope() const;
  double posterior_intercept() const;
  double posterior_variance() const;

 private:
  Index dim_;
  GaussianChainParams p_;
};

/// tau(psi | z) = N(A z + b, variance I) with trainable A (dim x dim) and b (1 x dim).
class LinearGaussianAuxiliary : public AuxiliaryInference {
 public:
  LinearGaussianAuxiliary(std::string name, Index dim, double variance, Matrix A0, Matrix b0);
  const std::string& name() const { return name_; }
  std::string a_key() const { return name_ + "/A"; }
  std::string b_key() const { return name_ + "/b"; }
  void init(ParamStore& store, RngStream& rng) const override;
  Dist conditional(Scope& scope, const Conditioning& cond, const Var& z) const override;

 private:
  std::string name_;
  Index dim_;
  double variance_;
  Matrix A0_, b0_;
};

/// p(x | z) = N(x | z, sd^2 I); cond.x holds x per unit.
class GaussianLikelihood : public Likelihood {
 public:
  explicit GaussianLikelihood(double sd) : sd_(sd) {}
  Var log_prob(Scope& scope, const Conditioning& cond, const Var& z) const override;

 private:
  double sd_;
};

/// p(z) = N(mean, sd^2 I).
class NormalPrior : public ExplicitPrior {
 public:
  NormalPrior(Index dim, double mean = 0.0, double sd = 1.0) : dim_(dim), mean_(mean), sd_(sd) {}
  Dist prior(Scope& scope, Index rows) const override;

 private:
  Index dim_;
  double mean_, sd_;
};

struct SnrTask {
  std::unique_ptr<GaussianChain> model;  ///< psi plays the task's latent, z its observation
  std::unique_ptr<LinearGaussianAuxiliary> tau;
  Matrix theta;  ///< 1 x dim
};

/// q(x, z) = N(x | z, I) N(z | theta, I), theta = 1, dim 10; tau = N(A x + b, 2/3).
/// Initial A = 0, b = 0.
SnrTask make_snr_task(Index dim = 10, const std::string& tau_name = "tau");

// ---- networks -----------------------------------------------------------------------

/// Gamma tau(psi | z) from a softplus MLP on z, gated towards a fixed Gamma fallback:
/// parameter = g * network + (1 - g) * fallback with g = sigmoid(gate head).
/// With per_coordinate, one small network maps each z_d to (conc_d, rate_d, gate_d).
class GammaMlpAuxiliary : public AuxiliaryInference {
 public:
  GammaMlpAuxiliary(std::string name, Index dim, std::vector<Index> hidden, double fallback_concentration = 1.0,
                    double fallback_rate = 0.5, bool gated = true, bool per_coordinate = false);
  void init(ParamStore& store, RngStream& rng) const override;
  Dist conditional(Scope& scope, const Conditioning& cond, const Var& z) const override;
  /// Gate values for a batch of z (rows x dim); all ones when ungated.
  Matrix gate(Scope& scope, const Var& z) const;

 private:
  std::vector<Var> heads(Scope& scope, const Var& z) const;
  std::string name_;
  Index dim_;
  double fallback_conc_, fallback_rate_;
  bool gated_;
  bool per_coordinate_;
  Mlp mlp_;
};

struct MiniVaeConfig {
  Index input_dim = 784;
  Index z_dim = 8;
  Index psi_dim = 8;
  std::vector<Index> hidden{64, 64};
  /// Scale psi by sigmoid(gate) before the encoder sees it; gate bias starts at -5.
  bool psi_gate = false;
  /// Blend tau towards q(psi) = N(0, I) with a sigmoid gate started at -5.
  bool tau_gate = false;
};

/// Encoder q(z | psi, x) = N(mu(x, psi), sigma(x, psi)) with psi fed to every layer; q(psi) = N(0, I).
class VaeEncoder : public HierarchicalModel {
 public:
  explicit VaeEncoder(const MiniVaeConfig& cfg);
  Index psi_dim() const override { return cfg_.psi_dim; }
  Index z_dim() const override { return cfg_.z_dim; }
  void init(ParamStore& store, RngStream& rng) const override;
  Dist psi_prior(Scope& scope, const Conditioning& cond) const override;
  Dist z_given_psi(Scope& scope, const Conditioning& cond, const Var& psi) const override;

 private:
  MiniVaeConfig cfg_;
  Mlp mlp_;
};

/// tau(psi | z, x) = N(m(x, z), s(x, z)).
class GaussianMlpAuxiliary : public AuxiliaryInference {
 public:
  explicit GaussianMlpAuxiliary(const MiniVaeConfig& cfg);
  void init(ParamStore& store, RngStream& rng) const override;
  Dist conditional(Scope& scope, const Conditioning& cond, const Var& z) const override;

 private:
  MiniVaeConfig cfg_;
  Mlp mlp_;
};

/// p(x | z): factorized Bernoulli with logits from an MLP on z.
class BernoulliDecoder : public Likelihood {
 public:
  explicit BernoulliDecoder(const MiniVaeConfig& cfg);
  void init(ParamStore& store, RngStream& rng) const override;
  Var log_prob(Scope& scope, const Conditioning& cond, const Var& z) const override;
  Var logits(Scope& scope, const Conditioning& cond, const Var& z) const;

 private:
  MiniVaeConfig cfg_;
  Mlp mlp_;
};

struct MiniVae {
  MiniVaeConfig config;
  std::unique_ptr<VaeEncoder> q;
  std::unique_ptr<GaussianMlpAuxiliary> tau;
  std::unique_ptr<BernoulliDecoder> decoder;
  std::unique_ptr<NormalPrior> prior;

  GenerativeModel generative() const { return GenerativeModel{decoder.get(), prior.get()}; }
  void init(ParamStore& store, RngStream& rng) const;
};

/// Parameter blocks: encoder "q/...", decoder "p/...", auxiliary "tau/...".
MiniVae make_mini_vae(const MiniVaeConfig& cfg);

/// Tiny positive floor added after softplus for scale parameters.
inline constexpr double kScaleFloor = 1e-6;

}  // namespace hvi
