#include "hvi/optim.hpp"

#include <cmath>

namespace hvi {

void Adam::step(ParamStore& store, const std::vector<std::string>& names) {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (const auto& name : names.empty() ? store.names() : names) {
    const Matrix& g = store.grad(name);
    auto [it, fresh] = state_.try_emplace(name);
    Moments& s = it->second;
    if (fresh) {
      s.m = Matrix::Zero(g.rows(), g.cols());
      s.v = s.m;
      s.vmax = s.m;
    }
    s.m = opt_.beta1 * s.m + (1.0 - opt_.beta1) * g;
    s.v = opt_.beta2 * s.v + (1.0 - opt_.beta2) * g.cwiseProduct(g);
    const Matrix* v = &s.v;
    if (opt_.amsgrad) {
      s.vmax = s.vmax.cwiseMax(s.v);
      v = &s.vmax;
    }
    Matrix& w = store.mutable_value(name);
    w.array() -= opt_.learning_rate * (s.m.array() / c1) / ((v->array() / c2).sqrt() + opt_.eps);
  }
}

}  // namespace hvi
