#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "hvi/autodiff.hpp"
#include "hvi/error.hpp"
#include "hvi/rng.hpp"

using namespace hvi;

namespace {

using UnaryOp = std::function<Var(const Var&)>;

// Central differences of sum(f(x)) against backward(), entry by entry.
void check_unary(const UnaryOp& f, const Matrix& x0, double rel = 1e-5) {
  Tape tape;
  const Var x = tape.variable(x0);
  const Gradients g = tape.backward(sum(f(x)));
  const Matrix analytic = g.of(x);
  const double h = 1e-6;
  for (Index i = 0; i < x0.size(); ++i) {
    Matrix up = x0, dn = x0;
    up.data()[i] += h;
    dn.data()[i] -= h;
    Tape t1, t2;
    const double fu = sum(f(t1.constant(up))).scalar();
    const double fd = sum(f(t2.constant(dn))).scalar();
    const double numeric = (fu - fd) / (2 * h);
    EXPECT_NEAR(analytic.data()[i], numeric, rel * std::max(1.0, std::abs(numeric))) << "entry " << i;
  }
}

Matrix random_matrix(Index r, Index c, RngStream& rng, double lo, double hi) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * rng.uniform();
  return m;
}

}  // namespace

TEST(Autodiff, LogPartialAtTwo) {
  Tape tape;
  const Var x = tape.variable(2.0);
  EXPECT_DOUBLE_EQ(tape.backward(log(x)).scalar(x), 0.5);
}

TEST(Autodiff, LogSumExpOfZeros) {
  Tape tape;
  EXPECT_NEAR(logsumexp(tape.constant(Matrix::Zero(1, 2))).scalar(), std::log(2.0), 1e-15);
}

TEST(Autodiff, DigammaAtOneMatchesLgammaSlope) {
  Tape tape;
  EXPECT_NEAR(digamma(tape.constant(1.0)).scalar(), -0.5772156649015329, 1e-10);
  const double h = 1e-6;
  Tape t2;
  const double fd = (lgamma(t2.constant(1.0 + h)).scalar() - lgamma(t2.constant(1.0 - h)).scalar()) / (2 * h);
  EXPECT_NEAR(fd, -0.577216, 1e-6);
}

TEST(Autodiff, SquareAtThree) {
  Tape tape;
  const Var x = tape.variable(3.0);
  EXPECT_DOUBLE_EQ(tape.backward(x * x).scalar(x), 6.0);
}

TEST(Autodiff, SoftplusAtZero) {
  Tape tape;
  const Var x = tape.variable(0.0);
  EXPECT_DOUBLE_EQ(tape.backward(softplus(x)).scalar(x), 0.5);
}

TEST(Autodiff, LogSumExpSymmetricGradient) {
  Tape tape;
  const Var x = tape.variable(1.0), y = tape.variable(1.0);
  const Gradients g = tape.backward(logsumexp(concat_cols({x, y})));
  EXPECT_DOUBLE_EQ(g.scalar(x), 0.5);
  EXPECT_DOUBLE_EQ(g.scalar(y), 0.5);
}

TEST(Autodiff, StopGradientFreezesFactor) {
  Tape tape;
  const Var x = tape.variable(3.0);
  const Var f = x * stop_gradient(x);
  EXPECT_DOUBLE_EQ(f.scalar(), 9.0);
  EXPECT_DOUBLE_EQ(tape.backward(f).scalar(x), 3.0);
}

TEST(Autodiff, StopGradientAloneIsConstant) {
  Tape tape;
  const Var x = tape.variable(-1.7);
  EXPECT_DOUBLE_EQ(tape.backward(stop_gradient(x)).scalar(x), 0.0);
}

TEST(Autodiff, StopGradientOnlyIdentityPathCounts) {
  Tape tape;
  const Var x = tape.variable(0.0);
  EXPECT_DOUBLE_EQ(tape.backward(stop_gradient(softplus(x)) + x).scalar(x), 1.0);
}

TEST(Autodiff, DomainErrorsCarryValue) {
  Tape tape;
  try {
    log(tape.constant(-2.0));
    FAIL() << "log of a negative number was accepted";
  } catch (const DomainError& e) {
    EXPECT_EQ(e.value(), -2.0);
  }
  EXPECT_THROW(sqrt(tape.constant(-1.0)), DomainError);
}

TEST(Autodiff, UnknownOpcodeRejected) {
  Tape tape;
  const Var x = tape.constant(1.0);
  EXPECT_THROW(tape.record(Op::Count_, {x}), UnsupportedError);
}

TEST(Autodiff, NodeIdsAreTopological) {
  Tape tape;
  const Var a = tape.variable(1.0);
  const Var b = exp(a) + a * a;
  EXPECT_GT(b.id().index, a.id().index);
  EXPECT_TRUE(tape.replay_matches());
}

TEST(Autodiff, LogSumExpOverflowSafe) {
  Tape tape;
  const double v = logsumexp(tape.constant(Matrix::Constant(1, 2, 1000.0))).scalar();
  EXPECT_NEAR(v, 1000.0 + std::log(2.0), 1e-12);
}

TEST(Autodiff, BackwardIsDeterministic) {
  RngStream rng(3);
  const Matrix x0 = random_matrix(3, 4, rng, -1, 1);
  Tape tape;
  const Var x = tape.variable(x0);
  const Var out = logsumexp(softplus(x) * x);
  const Matrix g1 = tape.backward(out).of(x);
  const Matrix g2 = tape.backward(out).of(x);
  EXPECT_EQ(g1, g2);
}

TEST(Autodiff, UnaryOpsMatchFiniteDifferences) {
  RngStream rng(11);
  const Matrix pos = random_matrix(2, 3, rng, 0.3, 3.0);
  const Matrix any = random_matrix(2, 3, rng, -2.0, 2.0);
  check_unary([](const Var& x) { return log(x); }, pos);
  check_unary([](const Var& x) { return exp(x); }, any);
  check_unary([](const Var& x) { return sqrt(x); }, pos);
  check_unary([](const Var& x) { return square(x); }, any);
  check_unary([](const Var& x) { return abs(x); }, any);
  check_unary([](const Var& x) { return softplus(x); }, any);
  check_unary([](const Var& x) { return sigmoid(x); }, any);
  check_unary([](const Var& x) { return lgamma(x); }, pos);
  check_unary([](const Var& x) { return digamma(x); }, pos);
  check_unary([](const Var& x) { return pow(x, 2.5); }, pos);
  check_unary([](const Var& x) { return -x; }, any);
  check_unary([](const Var& x) { return 1.0 / x; }, pos);
  check_unary([](const Var& x) { return logsumexp(x); }, any);
  check_unary([](const Var& x) { return logsumexp_rows(x); }, any);
  check_unary([](const Var& x) { return logmeanexp_rows(x); }, any);
  check_unary([](const Var& x) { return log_softmax_rows(x) * x; }, any);
  check_unary([](const Var& x) { return sum_rows(x) * 2.0; }, any);
  check_unary([](const Var& x) { return square(sum_cols(x)); }, any);
  check_unary([](const Var& x) { return mean(x * x); }, any);
  check_unary([](const Var& x) { return square(transpose(x)); }, any);
  check_unary([](const Var& x) { return square(reshape(x, 3, 2)); }, any);
  check_unary([](const Var& x) { return sum(square(slice_rows(x, 1, 1))) + sum(square(slice_cols(x, 1, 2))); }, any);
  check_unary([](const Var& x) { return square(gather_rows(x, {1, 0, 1})); }, any);
  check_unary([](const Var& x) { return pick_cols(x, {2, 0}) * 3.0; }, any);
  check_unary([](const Var& x) { return sum(square(concat_cols({x, x}))) + sum(square(concat_rows({x, exp(x)}))); },
              any);
}

TEST(Autodiff, BinaryOpsMatchFiniteDifferences) {
  RngStream rng(12);
  const Matrix b = random_matrix(2, 3, rng, 0.5, 2.0);
  const Matrix row = random_matrix(1, 3, rng, 0.5, 2.0);
  const Matrix col = random_matrix(2, 1, rng, 0.5, 2.0);
  const Matrix w = random_matrix(3, 4, rng, -1.0, 1.0);
  const Matrix x0 = random_matrix(2, 3, rng, 0.5, 2.0);
  for (const Matrix* other : {&b, &row, &col}) {
    const Matrix o = *other;
    check_unary([o](const Var& x) { return x + x.tape().constant(o); }, x0);
    check_unary([o](const Var& x) { return x - x.tape().constant(o); }, x0);
    check_unary([o](const Var& x) { return x * x.tape().constant(o); }, x0);
    check_unary([o](const Var& x) { return x / x.tape().constant(o); }, x0);
    check_unary([o](const Var& x) { return x.tape().constant(o) / x; }, x0);
    check_unary([o](const Var& x) { return pow(x, x.tape().constant(o)); }, x0);
    check_unary([o](const Var& x) { return pow(x.tape().constant(o), x); }, x0);
  }
  check_unary([w](const Var& x) { return matmul(x, x.tape().constant(w)); }, x0);
  check_unary([](const Var& x) { return dot(x, x); }, x0);
  const Matrix v = random_matrix(3, 1, rng, -1.0, 1.0);
  check_unary([v](const Var& x) { return matvec(x, x.tape().constant(v)); }, x0);
  // the right operand of broadcasting ops also receives gradients
  check_unary([x0](const Var& r) { return r.tape().constant(x0) * r; }, row);
}

TEST(Autodiff, BroadcastGradientsSumOverRows) {
  Tape tape;
  const Var r = tape.variable(Matrix::Ones(1, 2));
  const Var m = tape.constant(Matrix::Constant(3, 2, 2.0));
  const Matrix g = tape.backward(sum(m * r)).of(r);
  EXPECT_DOUBLE_EQ(g(0, 0), 6.0);
  EXPECT_DOUBLE_EQ(g(0, 1), 6.0);
}

TEST(Autodiff, ParamStoreShapesAndCheckpointRoundTrip) {
  ParamStore store;
  RngStream rng(5);
  store.add("a/W", random_matrix(3, 2, rng, -1, 1));
  store.add("b", Matrix::Constant(1, 1, std::nextafter(1.0, 2.0)));
  store.accumulate("a/W", Matrix::Ones(3, 2));
  EXPECT_EQ(store.grad("a/W").rows(), 3);
  EXPECT_THROW(store.accumulate("a/W", Matrix::Ones(2, 3)), ShapeError);
  EXPECT_THROW(store.set("b", Matrix::Ones(2, 2)), ShapeError);
  const auto path = (std::filesystem::temp_directory_path() / "hvi_ckpt_test.bin").string();
  store.save(path);
  ParamStore loaded;
  loaded.load(path);
  for (const auto& name : store.names()) EXPECT_EQ(loaded.value(name), store.value(name)) << name;
  EXPECT_EQ(loaded.names(), store.names());
  std::remove(path.c_str());
}

TEST(Autodiff, ScopeBindsParametersAsLeaves) {
  ParamStore store;
  store.add("w", Matrix::Constant(1, 1, 2.0));
  store.add("frozen", Matrix::Constant(1, 1, 5.0));
  Tape tape;
  Scope scope(tape, store, [](const std::string& n) { return n == "w"; });
  const Var out = scope.param("w") * scope.param("frozen");
  const auto grads = scope.gradients(tape.backward(out));
  ASSERT_EQ(grads.size(), 1u);
  EXPECT_DOUBLE_EQ(grads.at("w")(0, 0), 5.0);
}

TEST(Autodiff, VarsFromAnotherTapeRejected) {
  Tape t1, t2;
  const Var a = t1.variable(1.0);
  const Var b = t2.variable(2.0);
  EXPECT_THROW(a + b, Error);
}
