#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace hvi {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using IndexList = std::vector<Index>;

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Neg,
  Log,
  Exp,
  Sqrt,
  Square,
  Abs,
  Softplus,
  Sigmoid,
  Lgamma,
  Digamma,
  PowScalar,
  Sum,
  SumRows,
  SumCols,
  LogSumExp,
  LogSumExpRows,
  Dot,
  MatVec,
  MatMul,
  Transpose,
  ConcatCols,
  ConcatRows,
  SliceRows,
  SliceCols,
  GatherRows,
  PickCols,
  Reshape,
  StopGradient,
  GammaStd,
  Count_  // sentinel, not an operation
};

const char* op_name(Op op);

/// Node id: an index into the tape plus the tag of the tape that issued it.
struct NodeId {
  std::uint32_t index = 0;
  std::uint32_t tape_tag = 0;
};

/// Non-input operands of an operation.
struct Attr {
  double scalar = 0.0;
  IndexList ints;
  /// Extra matrices (GammaStd: {sample, d sample / d concentration}).
  std::shared_ptr<const std::vector<Matrix>> payload;
};

class Tape;

/// Handle to a tape node. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  NodeId id() const { return id_; }
  const Matrix& value() const;
  /// Value of a 1x1 node.
  double scalar() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  NodeId id_{};
};

/// Result of a backward pass: d output / d node for every node the pass reached.
class Gradients {
 public:
  Gradients(std::uint32_t tape_tag, std::vector<Matrix> grads)
      : tape_tag_(tape_tag), grads_(std::move(grads)) {}

  bool contains(NodeId id) const;
  /// Gradient for `v`, zeros of v's shape when the pass did not reach it.
  Matrix of(const Var& v) const;
  /// Scalar gradient of a 1x1 node.
  double scalar(const Var& v) const;

 private:
  std::uint32_t tape_tag_;
  std::vector<Matrix> grads_;
};

/// Append-only record of a computation. Inputs of node i always have ids < i.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(const Matrix& value);
  Var constant(double value);
  /// Leaf that gradients flow into.
  Var variable(const Matrix& value);
  Var variable(double value);

  /// Appends an operation; the forward value is computed here.
  /// Throws UnsupportedError for an unknown opcode, DomainError outside an op's domain,
  /// ShapeError for incompatible operands.
  Var record(Op op, const std::vector<Var>& inputs, Attr attr = {});

  /// Reverse pass from a 1x1 output (seed 1) or from an arbitrary seed of the output's shape.
  Gradients backward(const Var& output) const;
  Gradients backward(const Var& output, const Matrix& seed) const;

  /// Recomputes every non-leaf value from the leaves and compares bit-for-bit.
  bool replay_matches() const;

  std::size_t size() const { return nodes_.size(); }
  std::uint32_t tag() const { return tag_; }
  const Matrix& value(NodeId id) const;
  Op op(NodeId id) const;
  bool requires_grad(NodeId id) const;
  void check(NodeId id) const;

  /// Set when a sample whose distribution depends on a variable was drawn without a
  /// pathwise derivative (discrete sampling); autodiff gradients are then biased.
  void mark_nonreparameterized() { nonreparameterized_ = true; }
  bool nonreparameterized() const { return nonreparameterized_; }

 private:
  struct Node {
    Op op;
    std::vector<std::uint32_t> inputs;
    Attr attr;
    Matrix value;
    bool requires_grad;
  };

  Var push(Node node);

  std::uint32_t tag_;
  std::vector<Node> nodes_;
  bool nonreparameterized_ = false;
};

// ---- operations -----------------------------------------------------------
// Binary arithmetic broadcasts 1x1, 1xn and mx1 operands against mxn.

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator+(const Var& a, double b);
Var operator+(double a, const Var& b);
Var operator-(const Var& a, double b);
Var operator-(double a, const Var& b);
Var operator*(const Var& a, double b);
Var operator*(double a, const Var& b);
Var operator/(const Var& a, double b);
Var operator/(double a, const Var& b);

Var log(const Var& x);
Var exp(const Var& x);
Var sqrt(const Var& x);
Var square(const Var& x);
Var abs(const Var& x);
Var softplus(const Var& x);
Var sigmoid(const Var& x);
Var lgamma(const Var& x);
Var digamma(const Var& x);
Var pow(const Var& base, const Var& exponent);
Var pow(const Var& base, double exponent);

/// Sum of all entries (1x1).
Var sum(const Var& x);
/// Per-row sums (rows x 1).
Var sum_rows(const Var& x);
/// Per-column sums (1 x cols).
Var sum_cols(const Var& x);
Var mean(const Var& x);
/// log Σ exp over all entries (1x1).
Var logsumexp(const Var& x);
/// Per-row log Σ exp (rows x 1).
Var logsumexp_rows(const Var& x);
/// Per-row log-mean-exp (rows x 1).
Var logmeanexp_rows(const Var& x);
Var log_softmax_rows(const Var& x);

Var dot(const Var& a, const Var& b);
Var matvec(const Var& a, const Var& v);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& x, Index start, Index count);
Var slice_cols(const Var& x, Index start, Index count);
Var gather_rows(const Var& x, const IndexList& rows);
/// out(i) = x(i, cols[i]).
Var pick_cols(const Var& x, const IndexList& cols);
/// Column-major reshape: out(i, j) = x[j * rows + i] in column-major reading order.
Var reshape(const Var& x, Index rows, Index cols);
Var stop_gradient(const Var& x);

/// Standard-Gamma draw recorded with its implicit derivative w.r.t. the concentration.
Var gamma_standard(const Var& concentration, const Matrix& sample, const Matrix& dsample_dconc);

// ---- parameters -----------------------------------------------------------

/// Named parameter blocks with gradient accumulators of identical shape.
class ParamStore {
 public:
  void add(const std::string& name, const Matrix& value);
  bool contains(const std::string& name) const;
  const Matrix& value(const std::string& name) const;
  const Matrix& grad(const std::string& name) const;
  /// Replaces a block value; the shape must match.
  void set(const std::string& name, const Matrix& value);
  Matrix& mutable_value(const std::string& name);
  void accumulate(const std::string& name, const Matrix& g, double scale = 1.0);
  void zero_grad();
  std::vector<std::string> names() const;
  std::size_t total_size() const;

  /// Flat binary checkpoint of every block (see README for the layout).
  void save(const std::string& path) const;
  /// Loads blocks from a checkpoint, replacing or adding them.
  void load(const std::string& path);

 private:
  struct Block {
    Matrix value;
    Matrix grad;
  };
  const Block& block(const std::string& name) const;
  Block& block(const std::string& name);
  std::map<std::string, Block> blocks_;
};

using ParamFilter = std::function<bool(const std::string&)>;

/// Binds ParamStore blocks as tape leaves for one forward/backward pass.
class Scope {
 public:
  Scope(Tape& tape, const ParamStore& store, ParamFilter trainable = {});

  Tape& tape() const { return tape_; }
  const ParamStore& store() const { return store_; }
  /// Leaf for a parameter block, created on first use. Non-trainable blocks become constants.
  Var param(const std::string& name);
  /// Trainable parameters bound so far, by name.
  const std::map<std::string, Var>& bound() const { return bound_; }
  /// Gradients of every bound trainable block.
  std::map<std::string, Matrix> gradients(const Gradients& g) const;
  void accumulate(const Gradients& g, ParamStore& into, double scale = 1.0) const;

 private:
  Tape& tape_;
  const ParamStore& store_;
  ParamFilter trainable_;
  std::map<std::string, Var> bound_;
  std::map<std::string, Var> frozen_;
};

}  // namespace hvi
