#include "hvi/autodiff.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "hvi/error.hpp"
#include "hvi/special.hpp"

namespace hvi {

namespace {

std::atomic<std::uint32_t> g_next_tag{1};

const Matrix kEmpty;

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

bool broadcastable(Index a, Index b) { return a == b || a == 1 || b == 1; }

Matrix expand(const Matrix& m, Index r, Index c) {
  if (m.rows() == r && m.cols() == c) return m;
  if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(r, c, m(0, 0));
  if (m.rows() == 1 && m.cols() == c) return m.replicate(r, 1);
  if (m.cols() == 1 && m.rows() == r) return m.replicate(1, c);
  throw ShapeError("cannot broadcast " + shape_str(m) + " to " + std::to_string(r) + "x" + std::to_string(c));
}

/// Sums a gradient of the broadcast shape back down to an operand's shape.
Matrix reduce_to(const Matrix& g, Index r, Index c) {
  if (g.rows() == r && g.cols() == c) return g;
  if (r == 1 && c == 1) return Matrix::Constant(1, 1, g.sum());
  if (r == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

void require_positive(const Matrix& x, const char* op) {
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    if (!(v > 0.0)) throw DomainError(std::string(op) + " of a nonpositive value", v);
  }
}

bool is_integer(double v) { return std::isfinite(v) && std::floor(v) == v; }

template <typename F>
Matrix map(const Matrix& x, F f) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) out.data()[i] = f(x.data()[i]);
  return out;
}

Matrix logsumexp_rowwise(const Matrix& x) {
  Matrix out(x.rows(), 1);
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    if (!std::isfinite(m)) {
      out(i, 0) = m;
      continue;
    }
    out(i, 0) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return out;
}

Matrix forward(Op op, const std::vector<const Matrix*>& in, const Attr& attr) {
  auto arg = [&](std::size_t i) -> const Matrix& { return *in.at(i); };
  auto binary_shape = [&](Index& r, Index& c) {
    const Matrix& a = arg(0);
    const Matrix& b = arg(1);
    if (!broadcastable(a.rows(), b.rows()) || !broadcastable(a.cols(), b.cols()))
      throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
    r = std::max(a.rows(), b.rows());
    c = std::max(a.cols(), b.cols());
  };
  Index r = 0, c = 0;
  switch (op) {
    case Op::Add:
      binary_shape(r, c);
      return expand(arg(0), r, c) + expand(arg(1), r, c);
    case Op::Sub:
      binary_shape(r, c);
      return expand(arg(0), r, c) - expand(arg(1), r, c);
    case Op::Mul:
      binary_shape(r, c);
      return expand(arg(0), r, c).cwiseProduct(expand(arg(1), r, c));
    case Op::Div:
      binary_shape(r, c);
      return expand(arg(0), r, c).cwiseQuotient(expand(arg(1), r, c));
    case Op::Pow: {
      binary_shape(r, c);
      require_positive(arg(0), "pow base");
      return expand(arg(0), r, c).array().pow(expand(arg(1), r, c).array()).matrix();
    }
    case Op::Neg:
      return -arg(0);
    case Op::Log:
      require_positive(arg(0), "log");
      return arg(0).array().log().matrix();
    case Op::Exp:
      return arg(0).array().exp().matrix();
    case Op::Sqrt:
      require_positive(arg(0), "sqrt");
      return arg(0).array().sqrt().matrix();
    case Op::Square:
      return arg(0).array().square().matrix();
    case Op::Abs:
      return arg(0).array().abs().matrix();
    case Op::Softplus:
      return map(arg(0), special::softplus);
    case Op::Sigmoid:
      return map(arg(0), special::sigmoid);
    case Op::Lgamma:
      require_positive(arg(0), "lgamma");
      return map(arg(0), special::lgamma);
    case Op::Digamma:
      require_positive(arg(0), "digamma");
      return map(arg(0), special::digamma);
    case Op::PowScalar:
      if (!is_integer(attr.scalar)) require_positive(arg(0), "pow base");
      return arg(0).array().pow(attr.scalar).matrix();
    case Op::Sum:
      return Matrix::Constant(1, 1, arg(0).sum());
    case Op::SumRows:
      return arg(0).rowwise().sum();
    case Op::SumCols:
      return arg(0).colwise().sum();
    case Op::LogSumExp: {
      const Matrix& x = arg(0);
      if (x.size() == 0) throw ShapeError("logsumexp of an empty matrix");
      const double m = x.maxCoeff();
      if (!std::isfinite(m)) return Matrix::Constant(1, 1, m);
      return Matrix::Constant(1, 1, m + std::log((x.array() - m).exp().sum()));
    }
    case Op::LogSumExpRows:
      if (arg(0).cols() == 0) throw ShapeError("logsumexp over zero columns");
      return logsumexp_rowwise(arg(0));
    case Op::Dot:
      if (arg(0).rows() != arg(1).rows() || arg(0).cols() != arg(1).cols())
        throw ShapeError("dot: shapes " + shape_str(arg(0)) + " and " + shape_str(arg(1)));
      return Matrix::Constant(1, 1, arg(0).cwiseProduct(arg(1)).sum());
    case Op::MatVec:
      if (arg(1).cols() != 1 || arg(0).cols() != arg(1).rows())
        throw ShapeError("matvec: shapes " + shape_str(arg(0)) + " and " + shape_str(arg(1)));
      return arg(0) * arg(1);
    case Op::MatMul:
      if (arg(0).cols() != arg(1).rows())
        throw ShapeError("matmul: shapes " + shape_str(arg(0)) + " and " + shape_str(arg(1)));
      return arg(0) * arg(1);
    case Op::Transpose:
      return arg(0).transpose();
    case Op::ConcatCols: {
      const Index rows = arg(0).rows();
      Index cols = 0;
      for (const Matrix* m : in) {
        if (m->rows() != rows) throw ShapeError("concat_cols: row counts differ");
        cols += m->cols();
      }
      Matrix out(rows, cols);
      Index at = 0;
      for (const Matrix* m : in) {
        out.middleCols(at, m->cols()) = *m;
        at += m->cols();
      }
      return out;
    }
    case Op::ConcatRows: {
      const Index cols = arg(0).cols();
      Index rows = 0;
      for (const Matrix* m : in) {
        if (m->cols() != cols) throw ShapeError("concat_rows: column counts differ");
        rows += m->rows();
      }
      Matrix out(rows, cols);
      Index at = 0;
      for (const Matrix* m : in) {
        out.middleRows(at, m->rows()) = *m;
        at += m->rows();
      }
      return out;
    }
    case Op::SliceRows: {
      const Index s = attr.ints.at(0), n = attr.ints.at(1);
      if (s < 0 || n < 0 || s + n > arg(0).rows()) throw ShapeError("slice_rows out of range");
      return arg(0).middleRows(s, n);
    }
    case Op::SliceCols: {
      const Index s = attr.ints.at(0), n = attr.ints.at(1);
      if (s < 0 || n < 0 || s + n > arg(0).cols()) throw ShapeError("slice_cols out of range");
      return arg(0).middleCols(s, n);
    }
    case Op::GatherRows: {
      const Matrix& x = arg(0);
      Matrix out(static_cast<Index>(attr.ints.size()), x.cols());
      for (std::size_t i = 0; i < attr.ints.size(); ++i) {
        const Index r0 = attr.ints[i];
        if (r0 < 0 || r0 >= x.rows()) throw ShapeError("gather_rows index out of range");
        out.row(static_cast<Index>(i)) = x.row(r0);
      }
      return out;
    }
    case Op::PickCols: {
      const Matrix& x = arg(0);
      if (static_cast<Index>(attr.ints.size()) != x.rows()) throw ShapeError("pick_cols needs one column per row");
      Matrix out(x.rows(), 1);
      for (Index i = 0; i < x.rows(); ++i) {
        const Index c0 = attr.ints[static_cast<std::size_t>(i)];
        if (c0 < 0 || c0 >= x.cols()) throw ShapeError("pick_cols index out of range");
        out(i, 0) = x(i, c0);
      }
      return out;
    }
    case Op::Reshape: {
      const Index rr = attr.ints.at(0), cc = attr.ints.at(1);
      if (rr * cc != arg(0).size()) throw ShapeError("reshape changes the element count");
      return Eigen::Map<const Matrix>(arg(0).data(), rr, cc);
    }
    case Op::StopGradient:
      return arg(0);
    case Op::GammaStd: {
      if (!attr.payload || attr.payload->size() != 2) throw ShapeError("gamma_standard needs a payload");
      const Matrix& s = (*attr.payload)[0];
      if (s.rows() != arg(0).rows() || s.cols() != arg(0).cols())
        throw ShapeError("gamma_standard sample shape differs from concentration");
      return s;
    }
    case Op::Leaf:
    case Op::Count_:
      break;
  }
  throw UnsupportedError(std::string("unknown opcode ") + std::to_string(static_cast<int>(op)));
}

void add_to(Matrix& slot, const Matrix& g) {
  if (slot.size() == 0)
    slot = g;
  else
    slot += g;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Pow: return "pow";
    case Op::Neg: return "neg";
    case Op::Log: return "log";
    case Op::Exp: return "exp";
    case Op::Sqrt: return "sqrt";
    case Op::Square: return "square";
    case Op::Abs: return "abs";
    case Op::Softplus: return "softplus";
    case Op::Sigmoid: return "sigmoid";
    case Op::Lgamma: return "lgamma";
    case Op::Digamma: return "digamma";
    case Op::PowScalar: return "pow_scalar";
    case Op::Sum: return "sum";
    case Op::SumRows: return "sum_rows";
    case Op::SumCols: return "sum_cols";
    case Op::LogSumExp: return "logsumexp";
    case Op::LogSumExpRows: return "logsumexp_rows";
    case Op::Dot: return "dot";
    case Op::MatVec: return "matvec";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::ConcatCols: return "concat_cols";
    case Op::ConcatRows: return "concat_rows";
    case Op::SliceRows: return "slice_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::GatherRows: return "gather_rows";
    case Op::PickCols: return "pick_cols";
    case Op::Reshape: return "reshape";
    case Op::StopGradient: return "stop_gradient";
    case Op::GammaStd: return "gamma_standard";
    case Op::Count_: break;
  }
  return "unknown";
}

// ---- Var / Gradients --------------------------------------------------------

Tape& Var::tape() const {
  if (!tape_) throw Error("use of an unbound Var");
  return *tape_;
}

const Matrix& Var::value() const { return tape().value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on a " + shape_str(v) + " node");
  return v(0, 0);
}

bool Gradients::contains(NodeId id) const {
  return id.tape_tag == tape_tag_ && id.index < grads_.size() && grads_[id.index].size() > 0;
}

Matrix Gradients::of(const Var& v) const {
  if (v.id().tape_tag != tape_tag_) throw Error("gradient lookup with a node from another tape");
  if (contains(v.id())) return grads_[v.id().index];
  return Matrix::Zero(v.rows(), v.cols());
}

double Gradients::scalar(const Var& v) const {
  const Matrix g = of(v);
  if (g.size() != 1) throw ShapeError("scalar gradient of a " + shape_str(g) + " node");
  return g(0, 0);
}

// ---- Tape -------------------------------------------------------------------

Tape::Tape() : tag_(g_next_tag.fetch_add(1)) {}

void Tape::check(NodeId id) const {
  if (id.tape_tag != tag_) throw Error("node id issued by a different tape");
  if (id.index >= nodes_.size()) throw Error("node id out of range");
}

const Matrix& Tape::value(NodeId id) const {
  check(id);
  return nodes_[id.index].value;
}

Op Tape::op(NodeId id) const {
  check(id);
  return nodes_[id.index].op;
}

bool Tape::requires_grad(NodeId id) const {
  check(id);
  return nodes_[id.index].requires_grad;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, NodeId{static_cast<std::uint32_t>(nodes_.size() - 1), tag_});
}

Var Tape::constant(const Matrix& value) { return push(Node{Op::Leaf, {}, {}, value, false}); }
Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }
Var Tape::variable(const Matrix& value) { return push(Node{Op::Leaf, {}, {}, value, true}); }
Var Tape::variable(double value) { return variable(Matrix::Constant(1, 1, value)); }

Var Tape::record(Op op, const std::vector<Var>& inputs, Attr attr) {
  if (static_cast<int>(op) <= static_cast<int>(Op::Leaf) || static_cast<int>(op) >= static_cast<int>(Op::Count_))
    throw UnsupportedError(std::string("unknown opcode ") + std::to_string(static_cast<int>(op)));
  if (inputs.empty()) throw ShapeError(std::string(op_name(op)) + " needs at least one input");
  std::vector<std::uint32_t> ids;
  std::vector<const Matrix*> values;
  bool grad = false;
  for (const Var& v : inputs) {
    check(v.id());
    ids.push_back(v.id().index);
    values.push_back(&nodes_[v.id().index].value);
    grad = grad || nodes_[v.id().index].requires_grad;
  }
  Matrix value = forward(op, values, attr);
  if (op == Op::StopGradient) grad = false;
  return push(Node{op, std::move(ids), std::move(attr), std::move(value), grad});
}

Gradients Tape::backward(const Var& output) const {
  if (output.value().size() != 1) throw ShapeError("backward without a seed needs a 1x1 output");
  return backward(output, Matrix::Ones(1, 1));
}

Gradients Tape::backward(const Var& output, const Matrix& seed) const {
  check(output.id());
  const std::uint32_t out = output.id().index;
  if (seed.rows() != nodes_[out].value.rows() || seed.cols() != nodes_[out].value.cols())
    throw ShapeError("backward seed shape differs from the output");
  std::vector<Matrix> grads(out + 1);
  grads[out] = seed;
  for (std::int64_t i = out; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    const Matrix& g = grads[static_cast<std::size_t>(i)];
    if (g.size() == 0 || !n.requires_grad || n.op == Op::Leaf || n.op == Op::StopGradient) continue;
    auto in = [&](std::size_t k) -> const Matrix& { return nodes_[n.inputs[k]].value; };
    auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
    auto give = [&](std::size_t k, const Matrix& d) {
      if (wants(k)) add_to(grads[n.inputs[k]], d);
    };
    const Matrix& y = n.value;
    switch (n.op) {
      case Op::Add:
        give(0, reduce_to(g, in(0).rows(), in(0).cols()));
        give(1, reduce_to(g, in(1).rows(), in(1).cols()));
        break;
      case Op::Sub:
        give(0, reduce_to(g, in(0).rows(), in(0).cols()));
        give(1, reduce_to(-g, in(1).rows(), in(1).cols()));
        break;
      case Op::Mul: {
        const Index r = y.rows(), c = y.cols();
        if (wants(0)) give(0, reduce_to(g.cwiseProduct(expand(in(1), r, c)), in(0).rows(), in(0).cols()));
        if (wants(1)) give(1, reduce_to(g.cwiseProduct(expand(in(0), r, c)), in(1).rows(), in(1).cols()));
        break;
      }
      case Op::Div: {
        const Index r = y.rows(), c = y.cols();
        const Matrix b = expand(in(1), r, c);
        if (wants(0)) give(0, reduce_to(g.cwiseQuotient(b), in(0).rows(), in(0).cols()));
        if (wants(1))
          give(1, reduce_to((-g.cwiseProduct(y)).cwiseQuotient(b), in(1).rows(), in(1).cols()));
        break;
      }
      case Op::Pow: {
        const Index r = y.rows(), c = y.cols();
        const Matrix a = expand(in(0), r, c);
        const Matrix b = expand(in(1), r, c);
        if (wants(0)) {
          const Matrix d = (b.array() * a.array().pow(b.array() - 1.0)).matrix();
          give(0, reduce_to(g.cwiseProduct(d), in(0).rows(), in(0).cols()));
        }
        if (wants(1)) {
          const Matrix d = (y.array() * a.array().log()).matrix();
          give(1, reduce_to(g.cwiseProduct(d), in(1).rows(), in(1).cols()));
        }
        break;
      }
      case Op::Neg:
        give(0, -g);
        break;
      case Op::Log:
        give(0, g.cwiseQuotient(in(0)));
        break;
      case Op::Exp:
        give(0, g.cwiseProduct(y));
        break;
      case Op::Sqrt:
        give(0, (0.5 * g.array() / y.array()).matrix());
        break;
      case Op::Square:
        give(0, 2.0 * g.cwiseProduct(in(0)));
        break;
      case Op::Abs:
        give(0, g.cwiseProduct(map(in(0), [](double v) { return static_cast<double>((v > 0) - (v < 0)); })));
        break;
      case Op::Softplus:
        give(0, g.cwiseProduct(map(in(0), special::sigmoid)));
        break;
      case Op::Sigmoid:
        give(0, (g.array() * y.array() * (1.0 - y.array())).matrix());
        break;
      case Op::Lgamma:
        give(0, g.cwiseProduct(map(in(0), special::digamma)));
        break;
      case Op::Digamma:
        give(0, g.cwiseProduct(map(in(0), special::trigamma)));
        break;
      case Op::PowScalar: {
        const double p = n.attr.scalar;
        give(0, (g.array() * p * in(0).array().pow(p - 1.0)).matrix());
        break;
      }
      case Op::Sum:
        give(0, Matrix::Constant(in(0).rows(), in(0).cols(), g(0, 0)));
        break;
      case Op::SumRows:
        give(0, g.replicate(1, in(0).cols()));
        break;
      case Op::SumCols:
        give(0, g.replicate(in(0).rows(), 1));
        break;
      case Op::LogSumExp: {
        const double m = y(0, 0);
        if (std::isfinite(m))
          give(0, (g(0, 0) * (in(0).array() - m).exp()).matrix());
        else
          give(0, Matrix::Zero(in(0).rows(), in(0).cols()));
        break;
      }
      case Op::LogSumExpRows: {
        const Matrix& x = in(0);
        Matrix d = Matrix::Zero(x.rows(), x.cols());
        for (Index r = 0; r < x.rows(); ++r) {
          if (!std::isfinite(y(r, 0))) continue;
          d.row(r) = g(r, 0) * (x.row(r).array() - y(r, 0)).exp();
        }
        give(0, d);
        break;
      }
      case Op::Dot:
        if (wants(0)) give(0, g(0, 0) * in(1));
        if (wants(1)) give(1, g(0, 0) * in(0));
        break;
      case Op::MatVec:
      case Op::MatMul:
        if (wants(0)) give(0, g * in(1).transpose());
        if (wants(1)) give(1, in(0).transpose() * g);
        break;
      case Op::Transpose:
        give(0, g.transpose());
        break;
      case Op::ConcatCols: {
        Index at = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Index w = in(k).cols();
          if (wants(k)) give(k, g.middleCols(at, w));
          at += w;
        }
        break;
      }
      case Op::ConcatRows: {
        Index at = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Index h = in(k).rows();
          if (wants(k)) give(k, g.middleRows(at, h));
          at += h;
        }
        break;
      }
      case Op::SliceRows: {
        Matrix d = Matrix::Zero(in(0).rows(), in(0).cols());
        d.middleRows(n.attr.ints[0], n.attr.ints[1]) = g;
        give(0, d);
        break;
      }
      case Op::SliceCols: {
        Matrix d = Matrix::Zero(in(0).rows(), in(0).cols());
        d.middleCols(n.attr.ints[0], n.attr.ints[1]) = g;
        give(0, d);
        break;
      }
      case Op::GatherRows: {
        Matrix d = Matrix::Zero(in(0).rows(), in(0).cols());
        for (std::size_t k = 0; k < n.attr.ints.size(); ++k) d.row(n.attr.ints[k]) += g.row(static_cast<Index>(k));
        give(0, d);
        break;
      }
      case Op::PickCols: {
        Matrix d = Matrix::Zero(in(0).rows(), in(0).cols());
        for (Index r = 0; r < d.rows(); ++r) d(r, n.attr.ints[static_cast<std::size_t>(r)]) += g(r, 0);
        give(0, d);
        break;
      }
      case Op::Reshape:
        give(0, Eigen::Map<const Matrix>(g.data(), in(0).rows(), in(0).cols()));
        break;
      case Op::GammaStd:
        give(0, g.cwiseProduct((*n.attr.payload)[1]));
        break;
      case Op::Leaf:
      case Op::StopGradient:
      case Op::Count_:
        break;
    }
  }
  return Gradients(tag_, std::move(grads));
}

bool Tape::replay_matches() const {
  std::vector<Matrix> values(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::Leaf) {
      values[i] = n.value;
      continue;
    }
    std::vector<const Matrix*> in;
    for (std::uint32_t k : n.inputs) in.push_back(&values[k]);
    values[i] = forward(n.op, in, n.attr);
    const Matrix& a = values[i];
    if (a.rows() != n.value.rows() || a.cols() != n.value.cols()) return false;
    if (a.size() > 0 && std::memcmp(a.data(), n.value.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0)
      return false;
  }
  return true;
}

// ---- operations -------------------------------------------------------------

namespace {

Var rec(Op op, const std::vector<Var>& in, Attr attr = {}) { return in.front().tape().record(op, in, std::move(attr)); }

Var lift(const Var& like, double v) { return like.tape().constant(v); }

Attr ints(IndexList v) {
  Attr a;
  a.ints = std::move(v);
  return a;
}

}  // namespace

Var operator+(const Var& a, const Var& b) { return rec(Op::Add, {a, b}); }
Var operator-(const Var& a, const Var& b) { return rec(Op::Sub, {a, b}); }
Var operator*(const Var& a, const Var& b) { return rec(Op::Mul, {a, b}); }
Var operator/(const Var& a, const Var& b) { return rec(Op::Div, {a, b}); }
Var operator-(const Var& a) { return rec(Op::Neg, {a}); }
Var operator+(const Var& a, double b) { return a + lift(a, b); }
Var operator+(double a, const Var& b) { return lift(b, a) + b; }
Var operator-(const Var& a, double b) { return a - lift(a, b); }
Var operator-(double a, const Var& b) { return lift(b, a) - b; }
Var operator*(const Var& a, double b) { return a * lift(a, b); }
Var operator*(double a, const Var& b) { return lift(b, a) * b; }
Var operator/(const Var& a, double b) { return a / lift(a, b); }
Var operator/(double a, const Var& b) { return lift(b, a) / b; }

Var log(const Var& x) { return rec(Op::Log, {x}); }
Var exp(const Var& x) { return rec(Op::Exp, {x}); }
Var sqrt(const Var& x) { return rec(Op::Sqrt, {x}); }
Var square(const Var& x) { return rec(Op::Square, {x}); }
Var abs(const Var& x) { return rec(Op::Abs, {x}); }
Var softplus(const Var& x) { return rec(Op::Softplus, {x}); }
Var sigmoid(const Var& x) { return rec(Op::Sigmoid, {x}); }
Var lgamma(const Var& x) { return rec(Op::Lgamma, {x}); }
Var digamma(const Var& x) { return rec(Op::Digamma, {x}); }
Var pow(const Var& base, const Var& exponent) { return rec(Op::Pow, {base, exponent}); }
Var pow(const Var& base, double exponent) {
  Attr a;
  a.scalar = exponent;
  return rec(Op::PowScalar, {base}, a);
}

Var sum(const Var& x) { return rec(Op::Sum, {x}); }
Var sum_rows(const Var& x) { return rec(Op::SumRows, {x}); }
Var sum_cols(const Var& x) { return rec(Op::SumCols, {x}); }
Var mean(const Var& x) { return sum(x) * (1.0 / static_cast<double>(x.value().size())); }
Var logsumexp(const Var& x) { return rec(Op::LogSumExp, {x}); }
Var logsumexp_rows(const Var& x) { return rec(Op::LogSumExpRows, {x}); }
Var logmeanexp_rows(const Var& x) {
  const Var lse = logsumexp_rows(x);
  if (x.cols() == 1) return lse;
  return lse - std::log(static_cast<double>(x.cols()));
}
Var log_softmax_rows(const Var& x) { return x - logsumexp_rows(x); }

Var dot(const Var& a, const Var& b) { return rec(Op::Dot, {a, b}); }
Var matvec(const Var& a, const Var& v) { return rec(Op::MatVec, {a, v}); }
Var matmul(const Var& a, const Var& b) { return rec(Op::MatMul, {a, b}); }
Var transpose(const Var& x) { return rec(Op::Transpose, {x}); }
Var concat_cols(const std::vector<Var>& parts) {
  if (parts.size() == 1) return parts.front();
  return rec(Op::ConcatCols, parts);
}
Var concat_rows(const std::vector<Var>& parts) {
  if (parts.size() == 1) return parts.front();
  return rec(Op::ConcatRows, parts);
}
Var slice_rows(const Var& x, Index start, Index count) { return rec(Op::SliceRows, {x}, ints({start, count})); }
Var slice_cols(const Var& x, Index start, Index count) { return rec(Op::SliceCols, {x}, ints({start, count})); }
Var gather_rows(const Var& x, const IndexList& rows) { return rec(Op::GatherRows, {x}, ints(rows)); }
Var pick_cols(const Var& x, const IndexList& cols) { return rec(Op::PickCols, {x}, ints(cols)); }
Var reshape(const Var& x, Index rows, Index cols) {
  if (x.rows() == rows && x.cols() == cols) return x;
  return rec(Op::Reshape, {x}, ints({rows, cols}));
}
Var stop_gradient(const Var& x) { return rec(Op::StopGradient, {x}); }

Var gamma_standard(const Var& concentration, const Matrix& sample, const Matrix& dsample_dconc) {
  Attr a;
  a.payload = std::make_shared<const std::vector<Matrix>>(std::vector<Matrix>{sample, dsample_dconc});
  return rec(Op::GammaStd, {concentration}, a);
}

// ---- ParamStore ---------------------------------------------------------------

void ParamStore::add(const std::string& name, const Matrix& value) {
  if (blocks_.count(name)) throw ConfigError("parameter block '" + name + "' already exists");
  blocks_[name] = Block{value, Matrix::Zero(value.rows(), value.cols())};
}

bool ParamStore::contains(const std::string& name) const { return blocks_.count(name) > 0; }

const ParamStore::Block& ParamStore::block(const std::string& name) const {
  auto it = blocks_.find(name);
  if (it == blocks_.end()) throw ConfigError("unknown parameter block '" + name + "'");
  return it->second;
}

ParamStore::Block& ParamStore::block(const std::string& name) {
  auto it = blocks_.find(name);
  if (it == blocks_.end()) throw ConfigError("unknown parameter block '" + name + "'");
  return it->second;
}

const Matrix& ParamStore::value(const std::string& name) const { return block(name).value; }
const Matrix& ParamStore::grad(const std::string& name) const { return block(name).grad; }
Matrix& ParamStore::mutable_value(const std::string& name) { return block(name).value; }

void ParamStore::set(const std::string& name, const Matrix& value) {
  Block& b = block(name);
  if (b.value.rows() != value.rows() || b.value.cols() != value.cols())
    throw ShapeError("parameter '" + name + "' is " + shape_str(b.value) + ", got " + shape_str(value));
  b.value = value;
}

void ParamStore::accumulate(const std::string& name, const Matrix& g, double scale) {
  Block& b = block(name);
  if (b.grad.rows() != g.rows() || b.grad.cols() != g.cols())
    throw ShapeError("gradient for '" + name + "' is " + shape_str(g) + ", expected " + shape_str(b.grad));
  b.grad += scale * g;
}

void ParamStore::zero_grad() {
  for (auto& [name, b] : blocks_) b.grad.setZero();
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, b] : blocks_) out.push_back(name);
  return out;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, b] : blocks_) n += static_cast<std::size_t>(b.value.size());
  return n;
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

}  // namespace

void ParamStore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path, 0, "cannot open checkpoint for writing");
  for (const auto& [name, b] : blocks_) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, 2);
    put_u32(os, static_cast<std::uint32_t>(b.value.rows()));
    put_u32(os, static_cast<std::uint32_t>(b.value.cols()));
    for (Index i = 0; i < b.value.rows(); ++i)
      for (Index j = 0; j < b.value.cols(); ++j) {
        const double v = b.value(i, j);
        os.write(reinterpret_cast<const char*>(&v), 8);
      }
  }
  if (!os) throw DataError(path, 0, "write failed");
}

void ParamStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path, 0, "cannot open checkpoint");
  std::uint64_t offset = 0;
  auto read = [&](void* dst, std::size_t n) {
    is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::uint64_t>(is.gcount());
    if (got != n) throw DataError(path, offset + got, "truncated checkpoint");
    offset += n;
  };
  while (is.peek() != std::char_traits<char>::eof()) {
    std::uint32_t len = 0;
    read(&len, 4);
    std::string name(len, '\0');
    read(name.data(), len);
    std::uint32_t rank = 0;
    read(&rank, 4);
    if (rank < 1 || rank > 2) throw DataError(path, offset - 4, "unsupported block rank " + std::to_string(rank));
    std::uint32_t dims[2] = {1, 1};
    for (std::uint32_t k = 0; k < rank; ++k) read(&dims[k], 4);
    Matrix m(dims[0], dims[1]);
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) read(&m(i, j), 8);
    blocks_[name] = Block{m, Matrix::Zero(m.rows(), m.cols())};
  }
}

// ---- Scope ------------------------------------------------------------------------

Scope::Scope(Tape& tape, const ParamStore& store, ParamFilter trainable)
    : tape_(tape), store_(store), trainable_(std::move(trainable)) {}

Var Scope::param(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  if (auto it = frozen_.find(name); it != frozen_.end()) return it->second;
  const Matrix& v = store_.value(name);
  if (!trainable_ || trainable_(name)) return bound_[name] = tape_.variable(v);
  return frozen_[name] = tape_.constant(v);
}

std::map<std::string, Matrix> Scope::gradients(const Gradients& g) const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, v] : bound_) out[name] = g.of(v);
  return out;
}

void Scope::accumulate(const Gradients& g, ParamStore& into, double scale) const {
  for (const auto& [name, v] : bound_) into.accumulate(name, g.of(v), scale);
}

}  // namespace hvi
