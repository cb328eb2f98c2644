#pragma once

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records operations in topological order. Every node keeps its
// value and the indices of its operands, so the tape can be replayed
// forward and differentiated backward without closures. Vars are light
// handles (tape pointer + node index) and are only valid while their tape
// is alive.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace posedist::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Persistent trainable tensor. The tape binds to it through Tape::param;
/// backward accumulates into `grad`.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v);

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Exp,
  Log,
  Tanh,
  Sum,
  Mean,
  Slice,
  Concat,
  Square,
  Abs,
  Scale,
  // Added on top of the base set; each has a finite-difference test.
  Transpose,
  Sqrt,
  Reciprocal,
  RowSum,
  ColSum,
  Reshape,
  SolveTriangular,
};

const char* op_name(Op op);

enum class Axis { Rows, Cols };

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  /// Accumulated gradient of a leaf.
  const Matrix& grad() const;
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  /// With grad_enabled == false every leaf is recorded as a constant and
  /// backward() has nothing to propagate.
  explicit Tape(bool grad_enabled = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Matrix value, bool requires_grad = true);
  Var constant(Matrix value);
  Var param(Parameter& p);

  /// Accumulates d(loss)/d(leaf) into every requires-grad leaf. `loss`
  /// must be 1x1. Calling twice without zero_grad() doubles the gradients.
  void backward(const Var& loss);

  /// Recomputes every non-leaf node from its operands. Parameter-bound
  /// leaves always read their Parameter's current value, so a tape must not
  /// outlive the Parameters it binds.
  void replay();

  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

  // Recording entry point used by the free-function ops below.
  struct Aux {
    std::int64_t i[4] = {0, 0, 0, 0};
    double s = 0.0;
  };
  Var record(Op op, std::span<const Var> operands, const Aux& aux);

 private:
  friend class Var;

  struct Node {
    Op op = Op::Leaf;
    bool requires_grad = false;
    std::vector<std::uint32_t> operands;
    Aux aux;
    Matrix value;
    Matrix grad;  // leaves only
    Parameter* param = nullptr;
    const Matrix* source = nullptr;  // parameter leaves read this instead of `value`

    const Matrix& data() const { return source ? *source : value; }
  };

  Matrix evaluate(const Node& node) const;
  void propagate(const Node& node, const Matrix& adjoint, std::vector<Matrix>& adjoints) const;

  // deque keeps value references stable while recording
  std::deque<Node> nodes_;
  bool grad_enabled_;
};

// ---- op set ---------------------------------------------------------------
//
// add/sub/mul accept equal shapes or a 1x1, 1xC or Rx1 second (or first)
// operand that is expanded along the missing dimension.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var exp(const Var& x);
/// Natural log with inputs clamped below at 1e-12; the adjoint uses the
/// clamped value.
Var log(const Var& x);
Var tanh(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);
Var slice(const Var& x, Index row, Index col, Index rows, Index cols);
Var concat(std::span<const Var> parts, Axis axis);
Var concat(std::initializer_list<Var> parts, Axis axis);
Var square(const Var& x);
Var abs(const Var& x);
Var scale(const Var& x, double s);
Var transpose(const Var& x);
Var sqrt(const Var& x);
Var reciprocal(const Var& x);
/// Sum over columns: R x C -> R x 1.
Var row_sum(const Var& x);
/// Sum over rows: R x C -> 1 x C.
Var col_sum(const Var& x);
/// Row-major reshape.
Var reshape(const Var& x, Index rows, Index cols);

enum class Triangle { Lower, UnitLower, Upper };
/// Solves tri(a) * x_i = y_i for every row y_i of y, i.e. returns y * tri(a)^-T.
/// Only the referenced triangle of `a` is read and receives gradient.
Var solve_triangular(const Var& a, const Var& y, Triangle tri);

// ---- composites -----------------------------------------------------------

Var add_scalar(const Var& x, double c);
Var relu(const Var& x);
Var cols(const Var& x, Index first, Index count);
Var rows(const Var& x, Index first, Index count);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator-(const Var& x) { return scale(x, -1.0); }
inline Var operator*(double s, const Var& x) { return scale(x, s); }
inline Var operator*(const Var& x, double s) { return scale(x, s); }

// ---- verification ---------------------------------------------------------

struct GradCheckReport {
  /// Per leaf: max_i |g_tape_i - g_fd_i| / max(|g_tape|_inf, |g_fd|_inf, 1e-12).
  std::vector<double> max_rel_error;
  double tolerance = 0.0;
  bool passed = false;

  double worst() const;
};

/// Builds the objective on a fresh tape with the leaves as requires-grad
/// variables. Must be a pure function of the leaf values.
using Objective = std::function<Var(Tape&, const std::vector<Var>&)>;

GradCheckReport finite_diff_check(const Objective& objective, const std::vector<Matrix>& leaves,
                                  double step = 1e-5, double tolerance = 1e-4);

}  // namespace posedist::ad
