#include "posedist/autodiff.hpp"

#include "posedist/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace posedist::ad {

namespace {

constexpr double kLogFloor = 1e-12;

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void shape_error(Op op, const Matrix& a, const Matrix& b) {
  fail(ErrorKind::Shape, std::string(op_name(op)) + ": shape mismatch " + shape_str(a) + " vs " +
                             shape_str(b));
}

[[noreturn]] void shape_error(Op op, const Matrix& a, const std::string& why) {
  fail(ErrorKind::Shape, std::string(op_name(op)) + ": " + why + " (operand " + shape_str(a) + ")");
}

bool broadcastable(const Matrix& big, const Matrix& small) {
  return (small.rows() == big.rows() || small.rows() == 1) &&
         (small.cols() == big.cols() || small.cols() == 1);
}

// Output shape for the elementwise binary ops; throws when neither operand
// can be expanded to the other.
std::pair<Index, Index> binary_shape(Op op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return {a.rows(), a.cols()};
  if (broadcastable(a, b)) return {a.rows(), a.cols()};
  if (broadcastable(b, a)) return {b.rows(), b.cols()};
  shape_error(op, a, b);
}

Matrix expand(const Matrix& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

// Sums an adjoint of the broadcast shape back down to the operand shape.
Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

void accumulate(std::vector<Matrix>& adjoints, std::size_t i, Matrix g) {
  Matrix& slot = adjoints[i];
  if (slot.size() == 0)
    slot = std::move(g);
  else
    slot += g;
}

Matrix reshape_row_major(const Matrix& x, Index rows, Index cols) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor rm = x;
  return Eigen::Map<const RowMajor>(rm.data(), rows, cols);
}

Matrix triangular_solve_rows(const Matrix& a, const Matrix& y, Triangle tri) {
  Matrix yt = y.transpose();
  switch (tri) {
    case Triangle::Lower:
      a.triangularView<Eigen::Lower>().solveInPlace(yt);
      break;
    case Triangle::UnitLower:
      a.triangularView<Eigen::UnitLower>().solveInPlace(yt);
      break;
    case Triangle::Upper:
      a.triangularView<Eigen::Upper>().solveInPlace(yt);
      break;
  }
  return yt.transpose();
}

// Solves tri(a)^T w_i = g_i per row.
Matrix triangular_solve_rows_transposed(const Matrix& a, const Matrix& g, Triangle tri) {
  Matrix gt = g.transpose();
  switch (tri) {
    case Triangle::Lower:
      a.triangularView<Eigen::Lower>().transpose().solveInPlace(gt);
      break;
    case Triangle::UnitLower:
      a.triangularView<Eigen::UnitLower>().transpose().solveInPlace(gt);
      break;
    case Triangle::Upper:
      a.triangularView<Eigen::Upper>().transpose().solveInPlace(gt);
      break;
  }
  return gt.transpose();
}

Matrix triangle_mask(const Matrix& m, Triangle tri) {
  switch (tri) {
    case Triangle::Lower:
      return m.triangularView<Eigen::Lower>();
    case Triangle::UnitLower:
      return m.triangularView<Eigen::StrictlyLower>();
    case Triangle::Upper:
      return m.triangularView<Eigen::Upper>();
  }
  return m;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Slice: return "slice";
    case Op::Concat: return "concat";
    case Op::Square: return "square";
    case Op::Abs: return "abs";
    case Op::Scale: return "scale";
    case Op::Transpose: return "transpose";
    case Op::Sqrt: return "sqrt";
    case Op::Reciprocal: return "reciprocal";
    case Op::RowSum: return "row_sum";
    case Op::ColSum: return "col_sum";
    case Op::Reshape: return "reshape";
    case Op::SolveTriangular: return "solve_triangular";
  }
  return "unknown";
}

Parameter::Parameter(std::string n, Matrix v)
    : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

// ---- Var ----------------------------------------------------------------------

const Matrix& Var::value() const { return tape_->nodes_[index_].data(); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1)
    fail(ErrorKind::Shape, "scalar(): expected 1x1, got " + shape_str(v));
  return v(0, 0);
}

const Matrix& Var::grad() const {
  const auto& node = tape_->nodes_[index_];
  if (node.param) return node.param->grad;
  return node.grad;
}

bool Var::requires_grad() const { return tape_->nodes_[index_].requires_grad; }

// ---- Tape ---------------------------------------------------------------------

Tape::Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}

Var Tape::variable(Matrix value, bool requires_grad) {
  Node node;
  node.requires_grad = requires_grad && grad_enabled_;
  node.grad = Matrix::Zero(value.rows(), value.cols());
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) { return variable(std::move(value), false); }

Var Tape::param(Parameter& p) {
  Node node;
  node.requires_grad = grad_enabled_;
  node.source = &p.value;
  node.param = grad_enabled_ ? &p : nullptr;
  if (grad_enabled_ && (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()))
    p.zero_grad();
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Op op, std::span<const Var> operands, const Aux& aux) {
  Node node;
  node.op = op;
  node.aux = aux;
  node.operands.reserve(operands.size());
  for (const Var& v : operands) {
    if (v.tape_ != this) fail(ErrorKind::Shape, std::string(op_name(op)) + ": operand from another tape");
    node.operands.push_back(static_cast<std::uint32_t>(v.index_));
    node.requires_grad = node.requires_grad || nodes_[v.index_].requires_grad;
  }
  node.value = evaluate(node);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Matrix Tape::evaluate(const Node& node) const {
  auto in = [&](std::size_t k) -> const Matrix& { return nodes_[node.operands[k]].data(); };
  const auto& aux = node.aux;
  switch (node.op) {
    case Op::Leaf:
      return node.data();
    case Op::MatMul: {
      const Matrix& a = in(0);
      const Matrix& b = in(1);
      if (a.cols() != b.rows()) shape_error(node.op, a, b);
      Matrix out(a.rows(), b.cols());
      out.noalias() = a * b;
      return out;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const Matrix& a = in(0);
      const Matrix& b = in(1);
      auto [r, c] = binary_shape(node.op, a, b);
      if (node.op == Op::Add) return expand(a, r, c) + expand(b, r, c);
      if (node.op == Op::Sub) return expand(a, r, c) - expand(b, r, c);
      return expand(a, r, c).cwiseProduct(expand(b, r, c));
    }
    case Op::Exp:
      return in(0).array().exp().matrix();
    case Op::Log:
      return in(0).array().max(kLogFloor).log().matrix();
    case Op::Tanh:
      return in(0).array().tanh().matrix();
    case Op::Sum:
      return Matrix::Constant(1, 1, in(0).sum());
    case Op::Mean: {
      const Matrix& x = in(0);
      if (x.size() == 0) shape_error(node.op, x, "empty operand");
      return Matrix::Constant(1, 1, x.mean());
    }
    case Op::Slice: {
      const Matrix& x = in(0);
      if (aux.i[0] < 0 || aux.i[1] < 0 || aux.i[2] < 0 || aux.i[3] < 0 ||
          aux.i[0] + aux.i[2] > x.rows() || aux.i[1] + aux.i[3] > x.cols()) {
        std::ostringstream os;
        os << "block (" << aux.i[0] << "," << aux.i[1] << ") size " << aux.i[2] << "x" << aux.i[3]
           << " out of range";
        shape_error(node.op, x, os.str());
      }
      return x.block(aux.i[0], aux.i[1], aux.i[2], aux.i[3]);
    }
    case Op::Concat: {
      const bool by_rows = aux.i[0] == 0;
      Index r = 0, c = 0;
      for (std::size_t k = 0; k < node.operands.size(); ++k) {
        const Matrix& p = in(k);
        if (k == 0) {
          r = p.rows();
          c = p.cols();
          continue;
        }
        if (by_rows) {
          if (p.cols() != c) shape_error(node.op, in(0), p);
          r += p.rows();
        } else {
          if (p.rows() != r) shape_error(node.op, in(0), p);
          c += p.cols();
        }
      }
      Matrix out(r, c);
      Index offset = 0;
      for (std::size_t k = 0; k < node.operands.size(); ++k) {
        const Matrix& p = in(k);
        if (by_rows) {
          out.middleRows(offset, p.rows()) = p;
          offset += p.rows();
        } else {
          out.middleCols(offset, p.cols()) = p;
          offset += p.cols();
        }
      }
      return out;
    }
    case Op::Square:
      return in(0).array().square().matrix();
    case Op::Abs:
      return in(0).cwiseAbs();
    case Op::Scale:
      return in(0) * aux.s;
    case Op::Transpose:
      return in(0).transpose();
    case Op::Sqrt: {
      const Matrix& x = in(0);
      if ((x.array() < 0.0).any()) shape_error(node.op, x, "negative input");
      return x.array().sqrt().matrix();
    }
    case Op::Reciprocal:
      return in(0).array().inverse().matrix();
    case Op::RowSum:
      return in(0).rowwise().sum();
    case Op::ColSum:
      return in(0).colwise().sum();
    case Op::Reshape: {
      const Matrix& x = in(0);
      if (aux.i[0] * aux.i[1] != x.size()) {
        std::ostringstream os;
        os << "cannot reshape to " << aux.i[0] << "x" << aux.i[1];
        shape_error(node.op, x, os.str());
      }
      return reshape_row_major(x, aux.i[0], aux.i[1]);
    }
    case Op::SolveTriangular: {
      const Matrix& a = in(0);
      const Matrix& y = in(1);
      if (a.rows() != a.cols()) shape_error(node.op, a, "matrix not square");
      if (y.cols() != a.rows()) shape_error(node.op, a, y);
      return triangular_solve_rows(a, y, static_cast<Triangle>(aux.i[0]));
    }
  }
  return {};
}

void Tape::propagate(const Node& node, const Matrix& g, std::vector<Matrix>& adj) const {
  auto idx = [&](std::size_t k) { return static_cast<std::size_t>(node.operands[k]); };
  auto in = [&](std::size_t k) -> const Matrix& { return nodes_[idx(k)].data(); };
  auto wants = [&](std::size_t k) { return nodes_[idx(k)].requires_grad; };
  const auto& aux = node.aux;

  switch (node.op) {
    case Op::Leaf:
      return;
    case Op::MatMul:
      if (wants(0)) accumulate(adj, idx(0), g * in(1).transpose());
      if (wants(1)) {
        Parameter* p = nodes_[idx(1)].param;
        if (p && nodes_[idx(1)].op == Op::Leaf)
          p->grad.noalias() += in(0).transpose() * g;
        else
          accumulate(adj, idx(1), in(0).transpose() * g);
      }
      return;
    case Op::Add:
    case Op::Sub: {
      const double sign_b = node.op == Op::Add ? 1.0 : -1.0;
      if (wants(0)) accumulate(adj, idx(0), reduce_to(g, in(0).rows(), in(0).cols()));
      if (wants(1)) accumulate(adj, idx(1), sign_b * reduce_to(g, in(1).rows(), in(1).cols()));
      return;
    }
    case Op::Mul: {
      const Matrix& a = in(0);
      const Matrix& b = in(1);
      const Index r = g.rows(), c = g.cols();
      if (wants(0)) accumulate(adj, idx(0), reduce_to(g.cwiseProduct(expand(b, r, c)), a.rows(), a.cols()));
      if (wants(1)) accumulate(adj, idx(1), reduce_to(g.cwiseProduct(expand(a, r, c)), b.rows(), b.cols()));
      return;
    }
    case Op::Exp:
      accumulate(adj, idx(0), g.cwiseProduct(node.value));
      return;
    case Op::Log:
      accumulate(adj, idx(0), (g.array() / in(0).array().max(kLogFloor)).matrix());
      return;
    case Op::Tanh:
      accumulate(adj, idx(0), (g.array() * (1.0 - node.value.array().square())).matrix());
      return;
    case Op::Sum:
      accumulate(adj, idx(0), Matrix::Constant(in(0).rows(), in(0).cols(), g(0, 0)));
      return;
    case Op::Mean: {
      const Matrix& x = in(0);
      accumulate(adj, idx(0), Matrix::Constant(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
      return;
    }
    case Op::Slice: {
      const Matrix& x = in(0);
      Matrix gx = Matrix::Zero(x.rows(), x.cols());
      gx.block(aux.i[0], aux.i[1], aux.i[2], aux.i[3]) = g;
      accumulate(adj, idx(0), std::move(gx));
      return;
    }
    case Op::Concat: {
      const bool by_rows = aux.i[0] == 0;
      Index offset = 0;
      for (std::size_t k = 0; k < node.operands.size(); ++k) {
        const Matrix& p = in(k);
        if (wants(k)) {
          if (by_rows)
            accumulate(adj, idx(k), g.middleRows(offset, p.rows()));
          else
            accumulate(adj, idx(k), g.middleCols(offset, p.cols()));
        }
        offset += by_rows ? p.rows() : p.cols();
      }
      return;
    }
    case Op::Square:
      accumulate(adj, idx(0), 2.0 * g.cwiseProduct(in(0)));
      return;
    case Op::Abs:
      accumulate(adj, idx(0), g.cwiseProduct(in(0).unaryExpr([](double v) {
        return static_cast<double>((v > 0.0) - (v < 0.0));
      })));
      return;
    case Op::Scale:
      accumulate(adj, idx(0), aux.s * g);
      return;
    case Op::Transpose:
      accumulate(adj, idx(0), g.transpose());
      return;
    case Op::Sqrt:
      accumulate(adj, idx(0), (0.5 * g.array() / node.value.array()).matrix());
      return;
    case Op::Reciprocal:
      accumulate(adj, idx(0), (-g.array() * node.value.array().square()).matrix());
      return;
    case Op::RowSum:
      accumulate(adj, idx(0), g.replicate(1, in(0).cols()));
      return;
    case Op::ColSum:
      accumulate(adj, idx(0), g.replicate(in(0).rows(), 1));
      return;
    case Op::Reshape:
      accumulate(adj, idx(0), reshape_row_major(g, in(0).rows(), in(0).cols()));
      return;
    case Op::SolveTriangular: {
      const auto tri = static_cast<Triangle>(aux.i[0]);
      const Matrix& a = in(0);
      Matrix gy = triangular_solve_rows_transposed(a, g, tri);
      if (wants(0)) accumulate(adj, idx(0), triangle_mask(-gy.transpose() * node.value, tri));
      if (wants(1)) accumulate(adj, idx(1), std::move(gy));
      return;
    }
  }
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) fail(ErrorKind::Shape, "backward: loss recorded on another tape");
  const Matrix& lv = nodes_[loss.index_].data();
  if (lv.rows() != 1 || lv.cols() != 1)
    fail(ErrorKind::Shape, "backward: loss must be 1x1, got " + shape_str(lv));
  if (!nodes_[loss.index_].requires_grad) return;

  std::vector<Matrix> adjoints(loss.index_ + 1);
  adjoints[loss.index_] = Matrix::Ones(1, 1);
  for (std::size_t i = loss.index_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || adjoints[i].size() == 0) continue;
    if (node.op == Op::Leaf) {
      if (node.param)
        node.param->grad += adjoints[i];
      else
        node.grad += adjoints[i];
      continue;
    }
    propagate(node, adjoints[i], adjoints);
    adjoints[i].resize(0, 0);
  }
}

void Tape::replay() {
  for (Node& node : nodes_) {
    if (node.op == Op::Leaf) continue;
    node.value = evaluate(node);
  }
}

void Tape::zero_grad() {
  for (Node& node : nodes_) {
    if (node.op != Op::Leaf) continue;
    if (node.param)
      node.param->zero_grad();
    else
      node.grad.setZero();
  }
}

// ---- ops ----------------------------------------------------------------------

namespace {

Var unary(Op op, const Var& x, Tape::Aux aux = {}) {
  const Var ops[] = {x};
  return x.tape().record(op, ops, aux);
}

Var binary(Op op, const Var& a, const Var& b, Tape::Aux aux = {}) {
  const Var ops[] = {a, b};
  return a.tape().record(op, ops, aux);
}

}  // namespace

Var matmul(const Var& a, const Var& b) { return binary(Op::MatMul, a, b); }
Var add(const Var& a, const Var& b) { return binary(Op::Add, a, b); }
Var sub(const Var& a, const Var& b) { return binary(Op::Sub, a, b); }
Var mul(const Var& a, const Var& b) { return binary(Op::Mul, a, b); }
Var exp(const Var& x) { return unary(Op::Exp, x); }
Var log(const Var& x) { return unary(Op::Log, x); }
Var tanh(const Var& x) { return unary(Op::Tanh, x); }
Var sum(const Var& x) { return unary(Op::Sum, x); }
Var mean(const Var& x) { return unary(Op::Mean, x); }

Var slice(const Var& x, Index row, Index col, Index rows, Index cols) {
  Tape::Aux aux;
  aux.i[0] = row;
  aux.i[1] = col;
  aux.i[2] = rows;
  aux.i[3] = cols;
  return unary(Op::Slice, x, aux);
}

Var concat(std::span<const Var> parts, Axis axis) {
  if (parts.empty()) fail(ErrorKind::Shape, "concat: no operands");
  Tape::Aux aux;
  aux.i[0] = axis == Axis::Rows ? 0 : 1;
  return parts.front().tape().record(Op::Concat, parts, aux);
}

Var concat(std::initializer_list<Var> parts, Axis axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var square(const Var& x) { return unary(Op::Square, x); }
Var abs(const Var& x) { return unary(Op::Abs, x); }

Var scale(const Var& x, double s) {
  Tape::Aux aux;
  aux.s = s;
  return unary(Op::Scale, x, aux);
}

Var transpose(const Var& x) { return unary(Op::Transpose, x); }
Var sqrt(const Var& x) { return unary(Op::Sqrt, x); }
Var reciprocal(const Var& x) { return unary(Op::Reciprocal, x); }
Var row_sum(const Var& x) { return unary(Op::RowSum, x); }
Var col_sum(const Var& x) { return unary(Op::ColSum, x); }

Var reshape(const Var& x, Index rows, Index cols) {
  Tape::Aux aux;
  aux.i[0] = rows;
  aux.i[1] = cols;
  return unary(Op::Reshape, x, aux);
}

Var solve_triangular(const Var& a, const Var& y, Triangle tri) {
  Tape::Aux aux;
  aux.i[0] = static_cast<std::int64_t>(tri);
  return binary(Op::SolveTriangular, a, y, aux);
}

Var add_scalar(const Var& x, double c) { return add(x, x.tape().constant(Matrix::Constant(1, 1, c))); }

Var relu(const Var& x) { return scale(add(x, abs(x)), 0.5); }

Var cols(const Var& x, Index first, Index count) { return slice(x, 0, first, x.rows(), count); }

Var rows(const Var& x, Index first, Index count) { return slice(x, first, 0, count, x.cols()); }

// ---- finite differences ---------------------------------------------------------

double GradCheckReport::worst() const {
  double w = 0.0;
  for (double e : max_rel_error) w = std::max(w, e);
  return w;
}

GradCheckReport finite_diff_check(const Objective& objective, const std::vector<Matrix>& leaves,
                                  double step, double tolerance) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(leaves.size());
    for (const Matrix& m : leaves) vars.push_back(tape.variable(m, true));
    Var loss = objective(tape, vars);
    tape.backward(loss);
    for (const Var& v : vars) analytic.push_back(v.grad());
  }

  auto eval = [&](const std::vector<Matrix>& values) {
    Tape tape(false);
    std::vector<Var> vars;
    vars.reserve(values.size());
    for (const Matrix& m : values) vars.push_back(tape.variable(m, false));
    return objective(tape, vars).scalar();
  };

  GradCheckReport report;
  report.tolerance = tolerance;
  std::vector<Matrix> probe = leaves;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    Matrix numeric(leaves[k].rows(), leaves[k].cols());
    for (Index i = 0; i < leaves[k].size(); ++i) {
      const double x0 = leaves[k](i);
      probe[k](i) = x0 + step;
      const double fp = eval(probe);
      probe[k](i) = x0 - step;
      const double fm = eval(probe);
      probe[k](i) = x0;
      numeric(i) = (fp - fm) / (2.0 * step);
    }
    const double scale_ref =
        std::max({analytic[k].cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), 1e-12});
    const double err = leaves[k].size() == 0 ? 0.0 : (analytic[k] - numeric).cwiseAbs().maxCoeff() / scale_ref;
    report.max_rel_error.push_back(err);
  }
  report.passed = report.worst() < tolerance;
  return report;
}

}  // namespace posedist::ad
