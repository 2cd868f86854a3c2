#pragma once

#include "hvi/autodiff.hpp"
#include "hvi/distributions.hpp"

namespace hvi {

/// Observed input shared by every row of a batched evaluation.
///
/// A batch has `units` distinct inputs replicated `reps` times; row r belongs to unit r % units.
/// Replicating keeps x in its per-unit form so networks can process it once and tile the result.
struct Conditioning {
  Var x;  ///< units x input_dim, or unbound when nothing is observed
  Index units = 1;
  Index reps = 1;

  static Conditioning none(Index rows) { return Conditioning{Var(), rows, 1}; }
  static Conditioning of(const Var& x) { return Conditioning{x, x.rows(), 1}; }

  Index rows() const { return units * reps; }
  bool has_x() const { return x.valid(); }
  Conditioning tiled(Index n) const { return Conditioning{x, units, reps * n}; }
  /// Expands a per-unit Var (units rows) to one row per batch row.
  Var tile(const Var& per_unit) const {
    if (per_unit.rows() == rows()) return per_unit;
    return tile_rows(per_unit, reps);
  }
  Var x_rows() const { return tile(x); }
};

}  // namespace hvi
