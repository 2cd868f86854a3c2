#pragma once

#include <string>
#include <vector>

#include "hvi/conditioning.hpp"

namespace hvi {

struct MlpLayout {
  std::string name;
  /// Per-unit input, processed once per unit and tiled to the batch rows.
  Index shared_dim = 0;
  /// Per-row input.
  Index side_dim = 0;
  std::vector<Index> hidden;
  std::vector<Index> heads;
  /// Concatenate the side input to the input of every hidden layer, not just the first.
  bool side_every_layer = false;
  /// Head initialised with zero weights and `gate_bias`, or -1 for none.
  int gate_head = -1;
  double gate_bias = -5.0;
};

/// Softplus MLP with linear heads. Weights are Xavier-uniform, biases zero.
class Mlp {
 public:
  explicit Mlp(MlpLayout layout);

  const MlpLayout& layout() const { return layout_; }
  void init(ParamStore& store, RngStream& rng) const;
  /// `shared` has cond.units rows (or is unbound), `side` has cond.rows() rows (or is unbound).
  std::vector<Var> forward(Scope& scope, const Conditioning& cond, const Var& shared, const Var& side) const;

 private:
  std::string key(std::size_t layer, const char* part) const;
  std::string head_key(std::size_t head, const char* part) const;
  MlpLayout layout_;
};

/// Xavier-uniform matrix in ±sqrt(6 / (fan_in + fan_out)).
Matrix xavier_uniform(Index fan_in, Index fan_out, RngStream& rng);

}  // namespace hvi
