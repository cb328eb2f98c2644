#include "posedist/autodiff.hpp"
#include "posedist/error.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>

using namespace posedist;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix uniform(std::mt19937_64& rng, int r, int c, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  return m;
}

// Reduces any shape to a scalar with a non-uniform weighting so that every
// output entry contributes a distinct adjoint.
Var weighted(const Var& x) {
  Tape& t = x.tape();
  Matrix w(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = 0.3 + 0.17 * static_cast<double>(i % 7);
  return ad::sum(ad::mul(x, t.constant(w)));
}

void expect_fd(const std::string& what, const ad::Objective& f, const std::vector<Matrix>& leaves) {
  const ad::GradCheckReport r = ad::finite_diff_check(f, leaves, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed) << what << ": worst relative error " << r.worst();
}

}  // namespace

TEST(Autodiff, SquareValueAndGradient) {
  Tape t;
  Var x = t.variable(Matrix::Constant(1, 1, 3.0));
  Var y = ad::square(x);
  EXPECT_DOUBLE_EQ(y.scalar(), 9.0);
  t.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);
}

TEST(Autodiff, AddZeros) {
  Tape t;
  Var y = ad::add(t.constant(Matrix::Zero(2, 2)), t.constant(Matrix::Zero(2, 2)));
  EXPECT_TRUE(y.value().isZero(0.0));
}

TEST(Autodiff, MatmulIdentity) {
  std::mt19937_64 rng(1);
  const Matrix M = uniform(rng, 3, 3);
  Tape t;
  Var y = ad::matmul(t.constant(Matrix::Identity(3, 3)), t.constant(M));
  EXPECT_TRUE(y.value().isApprox(M, 0.0) || (y.value() - M).cwiseAbs().maxCoeff() == 0.0);
}

TEST(Autodiff, ConstantLossGivesZeroGrads) {
  Tape t;
  Var x = t.variable(Matrix::Constant(2, 2, 1.5));
  Var c = t.constant(Matrix::Constant(1, 1, 4.0));
  t.backward(c);
  EXPECT_TRUE(x.grad().isZero(0.0));
}

TEST(Autodiff, NonScalarLossRejected) {
  Tape t;
  Var x = t.variable(Matrix::Ones(2, 2));
  try {
    t.backward(x);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(Autodiff, ShapeErrorNamesOpAndShapes) {
  Tape t;
  Var a = t.constant(Matrix::Ones(2, 3));
  Var b = t.constant(Matrix::Ones(2, 3));
  try {
    ad::matmul(a, b);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
  EXPECT_THROW(ad::add(t.constant(Matrix::Ones(2, 3)), t.constant(Matrix::Ones(3, 2))), Error);
  EXPECT_THROW(ad::slice(a, 1, 1, 2, 2), Error);
  EXPECT_THROW(ad::reshape(a, 4, 2), Error);
}

TEST(Autodiff, QuadraticIsExactUnderCentralDifferences) {
  std::mt19937_64 rng(2);
  const ad::GradCheckReport r = ad::finite_diff_check(
      [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::square(v[0])); }, {uniform(rng, 3, 4)}, 1e-5, 1e-6);
  EXPECT_TRUE(r.passed) << r.worst();
  EXPECT_LT(r.worst(), 1e-6);
}

TEST(Autodiff, SumOfMatmulMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  expect_fd("sum(matmul)", [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::matmul(v[0], v[1])); },
            {uniform(rng, 3, 4), uniform(rng, 4, 2)});
}

TEST(Autodiff, EveryOpMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix A = uniform(rng, 3, 4), B = uniform(rng, 3, 4), C = uniform(rng, 4, 2);
    const Matrix P = uniform(rng, 3, 4, 0.5, 2.0);
    const Matrix row = uniform(rng, 1, 4), col = uniform(rng, 3, 1), one = uniform(rng, 1, 1);
    using F = ad::Objective;
    auto unary = [&](const std::string& name, std::function<Var(const Var&)> op, const Matrix& x) {
      expect_fd(name, F([op](Tape&, const std::vector<Var>& v) { return weighted(op(v[0])); }), {x});
    };
    auto binary = [&](const std::string& name, std::function<Var(const Var&, const Var&)> op, const Matrix& x,
                      const Matrix& y) {
      expect_fd(name, F([op](Tape&, const std::vector<Var>& v) { return weighted(op(v[0], v[1])); }), {x, y});
    };
    binary("matmul", ad::matmul, A, C);
    binary("add", ad::add, A, B);
    binary("sub", ad::sub, A, B);
    binary("mul", ad::mul, A, B);
    binary("add row", ad::add, A, row);
    binary("add col", ad::add, A, col);
    binary("add scalar", ad::add, A, one);
    binary("sub row first", ad::sub, row, A);
    binary("mul col", ad::mul, A, col);
    binary("mul scalar first", ad::mul, one, A);
    unary("exp", ad::exp, A);
    unary("log", ad::log, P);
    unary("tanh", ad::tanh, A);
    unary("sum", ad::sum, A);
    unary("mean", ad::mean, A);
    unary("square", ad::square, A);
    unary("abs", ad::abs, A);
    unary("scale", [](const Var& x) { return ad::scale(x, -1.7); }, A);
    unary("transpose", ad::transpose, A);
    unary("sqrt", ad::sqrt, P);
    unary("reciprocal", ad::reciprocal, P);
    unary("row_sum", ad::row_sum, A);
    unary("col_sum", ad::col_sum, A);
    unary("reshape", [](const Var& x) { return ad::reshape(x, 2, 6); }, A);
    unary("slice", [](const Var& x) { return ad::slice(x, 1, 1, 2, 3); }, A);
    unary("cols", [](const Var& x) { return ad::cols(x, 1, 2); }, A);
    unary("rows", [](const Var& x) { return ad::rows(x, 1, 2); }, A);
    unary("add_scalar", [](const Var& x) { return ad::add_scalar(x, 0.4); }, A);
    unary("relu", ad::relu, A);
    binary("concat cols", [](const Var& x, const Var& y) { return ad::concat({x, y}, ad::Axis::Cols); }, A, B);
    binary("concat rows", [](const Var& x, const Var& y) { return ad::concat({x, y}, ad::Axis::Rows); }, A, row);

    Matrix tri = uniform(rng, 4, 4);
    tri.diagonal() = uniform(rng, 4, 1, 1.0, 2.0);
    for (ad::Triangle kind : {ad::Triangle::Lower, ad::Triangle::UnitLower, ad::Triangle::Upper})
      binary("solve_triangular", [kind](const Var& a, const Var& y) { return ad::solve_triangular(a, y, kind); },
             tri, A);
  }
}

TEST(Autodiff, SolveTriangularSolvesRows) {
  std::mt19937_64 rng(5);
  Matrix a = uniform(rng, 4, 4);
  a.diagonal().setConstant(2.0);
  const Matrix y = uniform(rng, 3, 4);
  Tape t;
  const Matrix x = ad::solve_triangular(t.constant(a), t.constant(y), ad::Triangle::Upper).value();
  const Matrix U = a.triangularView<Eigen::Upper>();
  EXPECT_LT((x * U.transpose() - y).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Autodiff, LogClampsAtFloor) {
  Tape t;
  Var x = t.variable(Matrix::Zero(1, 1));
  Var y = ad::log(x);
  EXPECT_NEAR(y.scalar(), std::log(1e-12), 1e-9);
  EXPECT_TRUE(std::isfinite(y.scalar()));
}

TEST(Autodiff, BackwardTwiceDoublesGradients) {
  std::mt19937_64 rng(6);
  const Matrix A = uniform(rng, 3, 3);
  Tape t;
  Var x = t.variable(A);
  Var loss = ad::sum(ad::tanh(ad::matmul(x, x)));
  t.backward(loss);
  const Matrix once = x.grad();
  t.backward(loss);
  EXPECT_EQ((x.grad() - 2.0 * once).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Autodiff, ParameterGradientsAccumulateAcrossTapes) {
  std::mt19937_64 rng(7);
  ad::Parameter w("w", uniform(rng, 4, 2));
  const Matrix x = uniform(rng, 3, 4);
  auto run = [&] {
    Tape t;
    t.backward(ad::sum(ad::square(ad::matmul(t.constant(x), t.param(w)))));
  };
  w.zero_grad();
  run();
  const Matrix once = w.grad;
  run();
  EXPECT_LT((w.grad - 2.0 * once).cwiseAbs().maxCoeff(), 1e-12);
  // d/dW sum((xW)^2) = 2 x^T x W
  EXPECT_LT((once - 2.0 * x.transpose() * x * w.value).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Autodiff, ReplayReproducesValuesBitIdentically) {
  std::mt19937_64 rng(8);
  ad::Parameter w("w", uniform(rng, 4, 4));
  Tape t;
  Var y = ad::sum(ad::exp(ad::tanh(ad::matmul(t.constant(uniform(rng, 2, 4)), t.param(w)))));
  const double first = y.scalar();
  for (int k = 0; k < 3; ++k) {
    t.replay();
    EXPECT_EQ(y.scalar(), first);
  }
  w.value *= 0.5;
  t.replay();
  EXPECT_NE(y.scalar(), first);
}

TEST(Autodiff, OperandsPrecedeNodes) {
  Tape t;
  Var a = t.variable(Matrix::Ones(2, 2));
  Var b = ad::square(a);
  Var c = ad::add(a, b);
  EXPECT_LT(a.index(), b.index());
  EXPECT_LT(b.index(), c.index());
  EXPECT_EQ(t.size(), 3u);
}

TEST(Autodiff, GradDisabledTapeRecordsConstants) {
  ad::Parameter w("w", Matrix::Ones(2, 2));
  Tape t(false);
  Var x = t.param(w);
  EXPECT_FALSE(x.requires_grad());
  EXPECT_FALSE(ad::square(x).requires_grad());
}
