#include "hvi/mlp.hpp"

#include <cmath>

#include "hvi/error.hpp"

namespace hvi {

Matrix xavier_uniform(Index fan_in, Index fan_out, RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (Index i = 0; i < fan_in; ++i)
    for (Index j = 0; j < fan_out; ++j) w(i, j) = limit * (2.0 * rng.uniform() - 1.0);
  return w;
}

Mlp::Mlp(MlpLayout layout) : layout_(std::move(layout)) {
  if (layout_.hidden.empty()) throw ConfigError(layout_.name + ": an MLP needs at least one hidden layer");
  if (layout_.shared_dim <= 0 && layout_.side_dim <= 0) throw ConfigError(layout_.name + ": MLP has no inputs");
  if (layout_.heads.empty()) throw ConfigError(layout_.name + ": MLP has no output heads");
  if (layout_.gate_head >= static_cast<int>(layout_.heads.size())) throw ConfigError(layout_.name + ": bad gate head");
}

std::string Mlp::key(std::size_t layer, const char* part) const {
  return layout_.name + "/l" + std::to_string(layer) + "/" + part;
}

std::string Mlp::head_key(std::size_t head, const char* part) const {
  return layout_.name + "/head" + std::to_string(head) + "/" + part;
}

void Mlp::init(ParamStore& store, RngStream& rng) const {
  const auto& L = layout_;
  for (std::size_t i = 0; i < L.hidden.size(); ++i) {
    const Index out = L.hidden[i];
    const bool side = L.side_dim > 0 && (i == 0 || L.side_every_layer);
    const Index main_in = i == 0 ? L.shared_dim : L.hidden[i - 1];
    const Index fan_in = main_in + (side ? L.side_dim : 0);
    // One Xavier draw for the whole (concatenated) input, split into its blocks.
    const Matrix w = xavier_uniform(fan_in, out, rng);
    if (main_in > 0) store.add(key(i, "W"), w.topRows(main_in));
    if (side) store.add(key(i, "V"), w.bottomRows(L.side_dim));
    store.add(key(i, "b"), Matrix::Zero(1, out));
  }
  for (std::size_t h = 0; h < L.heads.size(); ++h) {
    if (static_cast<int>(h) == L.gate_head) {
      store.add(head_key(h, "W"), Matrix::Zero(L.hidden.back(), L.heads[h]));
      store.add(head_key(h, "b"), Matrix::Constant(1, L.heads[h], L.gate_bias));
    } else {
      store.add(head_key(h, "W"), xavier_uniform(L.hidden.back(), L.heads[h], rng));
      store.add(head_key(h, "b"), Matrix::Zero(1, L.heads[h]));
    }
  }
}

std::vector<Var> Mlp::forward(Scope& scope, const Conditioning& cond, const Var& shared, const Var& side) const {
  const auto& L = layout_;
  if (L.shared_dim > 0 && (!shared.valid() || shared.rows() != cond.units || shared.cols() != L.shared_dim))
    throw ShapeError(L.name + ": shared input must be units x " + std::to_string(L.shared_dim));
  if (L.side_dim > 0 && (!side.valid() || side.rows() != cond.rows() || side.cols() != L.side_dim))
    throw ShapeError(L.name + ": side input must be rows x " + std::to_string(L.side_dim));
  Var h;
  for (std::size_t i = 0; i < L.hidden.size(); ++i) {
    Var pre;
    if (i == 0) {
      if (L.shared_dim > 0) pre = cond.tile(matmul(shared, scope.param(key(0, "W"))));
    } else {
      pre = matmul(h, scope.param(key(i, "W")));
    }
    if (L.side_dim > 0 && (i == 0 || L.side_every_layer)) {
      const Var s = matmul(side, scope.param(key(i, "V")));
      pre = pre.valid() ? pre + s : s;
    }
    h = softplus(pre + scope.param(key(i, "b")));
  }
  std::vector<Var> out;
  for (std::size_t k = 0; k < L.heads.size(); ++k)
    out.push_back(matmul(h, scope.param(head_key(k, "W"))) + scope.param(head_key(k, "b")));
  return out;
}

}  // namespace hvi
