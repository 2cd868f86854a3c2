#pragma once

#include <map>
#include <string>

#include "hvi/autodiff.hpp"

namespace hvi {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Keep the running maximum of the second moment (AMSGrad).
  bool amsgrad = false;
};

/// Adam / AMSGrad over ParamStore blocks. Minimizes: steps along -grad.
class Adam {
 public:
  explicit Adam(AdamOptions opt = {}) : opt_(opt) {}

  /// One update from the store's accumulated gradients for the named blocks (all when empty).
  void step(ParamStore& store, const std::vector<std::string>& names = {});
  void set_learning_rate(double lr) { opt_.learning_rate = lr; }
  const AdamOptions& options() const { return opt_; }
  long steps() const { return t_; }

 private:
  struct Moments {
    Matrix m, v, vmax;
  };
  AdamOptions opt_;
  std::map<std::string, Moments> state_;
  long t_ = 0;
};

}  // namespace hvi
