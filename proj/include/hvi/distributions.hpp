#pragma once

#include <utility>
#include <vector>

#include "hvi/autodiff.hpp"
#include "hvi/rng.hpp"

namespace hvi {

enum class Kind { Normal, Laplace, Exponential, Gamma, Bernoulli, Categorical };

const char* kind_name(Kind k);
bool is_continuous(Kind k);

/// A scalar distribution with fixed real parameters.
///
/// Parameters: Normal (mean, stddev), Laplace (location, scale), Exponential (rate),
/// Gamma (concentration, rate), Bernoulli (probability), Categorical (probabilities).
class DistributionSpec {
 public:
  static DistributionSpec normal(double mean, double stddev);
  static DistributionSpec laplace(double location, double scale);
  static DistributionSpec exponential(double rate);
  static DistributionSpec gamma(double concentration, double rate);
  static DistributionSpec bernoulli(double probability);
  static DistributionSpec categorical(std::vector<double> probabilities);

  Kind kind() const { return kind_; }
  const std::vector<double>& params() const { return params_; }

  /// Natural-log density (or mass). Throws DomainError outside the support.
  double log_prob(double value) const;
  /// Forward draw. Continuous kinds consume the documented number of uniforms.
  double sample(RngStream& rng) const;
  /// Reparameterized draw recorded on `tape` with the parameters as variables.
  /// Returns (sample, parameter leaves).
  std::pair<Var, std::vector<Var>> sample_reparam(RngStream& rng, Tape& tape) const;
  /// Exhaustive support of a discrete kind.
  std::vector<std::pair<double, double>> enumerate() const;

 private:
  DistributionSpec(Kind k, std::vector<double> p) : kind_(k), params_(std::move(p)) {}
  Kind kind_;
  std::vector<double> params_;
};

/// Product of independent scalar components.
struct FactorizedSpec {
  std::vector<DistributionSpec> components;
  double log_prob(const std::vector<double>& value) const;
};

/// Distribution over `rows` independent rows whose parameters live on a tape.
///
/// Parameters broadcast against the sample shape (rows x dim): a 1 x dim parameter is shared
/// by every row. log_prob sums over the columns and returns rows x 1.
/// Discrete values are stored as doubles: Bernoulli 0/1 entries, Categorical one index per row.
class Dist {
 public:
  /// Empty placeholder; only assignable.
  Dist() : kind_(Kind::Normal), rows_(0) {}
  static Dist normal(const Var& mean, const Var& stddev, Index rows);
  static Dist laplace(const Var& location, const Var& scale, Index rows);
  static Dist exponential(const Var& rate, Index rows);
  static Dist gamma(const Var& concentration, const Var& rate, Index rows);
  static Dist bernoulli_logits(const Var& logits, Index rows);
  /// Each row of `log_probs` is a normalized log-probability vector.
  static Dist categorical(const Var& log_probs, Index rows);

  Kind kind() const { return kind_; }
  Index rows() const { return rows_; }
  /// Columns of one sample row (1 for Categorical).
  Index dim() const;
  const std::vector<Var>& params() const { return params_; }

  Var log_prob(const Var& value) const;
  /// Per-entry log density (rows x dim); Categorical gives rows x 1.
  Var log_prob_elementwise(const Var& value) const;

  /// Pathwise-differentiable sample. Throws UnsupportedError for discrete kinds.
  Var sample_reparam(RngStream& rng) const;
  /// Reparameterized for continuous kinds, a plain draw for discrete ones.
  Var draw(RngStream& rng) const;

  /// Row r of the result is row idx[r] of this distribution.
  Dist gather(const IndexList& idx) const;
  /// `reps` stacked copies: row (k * rows + r) is row r.
  Dist tile(Index reps) const;
  /// Same distribution with parameters cut from the gradient graph.
  Dist detach() const;

 private:
  Dist(Kind k, std::vector<Var> params, Index rows);
  Tape& tape() const { return params_.front().tape(); }
  Kind kind_;
  std::vector<Var> params_;
  Index rows_;
};

/// Row indices that stack `reps` copies of `rows` rows.
IndexList tile_index(Index rows, Index reps);
/// Tiles a per-row Var `reps` times (identity when reps == 1).
Var tile_rows(const Var& x, Index reps);

/// Standard-Gamma(concentration, 1) draw by Marsaglia-Tsang; consumes a variable number of uniforms.
double sample_standard_gamma(double concentration, RngStream& rng);

/// Implicit reparameterization gradient of a Gamma(concentration, rate) sample:
/// returns (d sample / d concentration, d sample / d rate).
std::pair<double, double> gamma_implicit_grad(double concentration, double rate, double sample);

}  // namespace hvi
