#include "posedist/flow.hpp"

#include "posedist/checkpoint.hpp"
#include "posedist/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace posedist::flow {

namespace {

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) fail(ErrorKind::Numeric, std::string("flow: non-finite ") + what);
}

std::string join(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  return out;
}

// Repeats a single context row to match the batch.
Var match_rows(Tape& tape, const Var& c, ad::Index rows) {
  if (c.rows() == rows) return c;
  if (c.rows() != 1)
    fail(ErrorKind::Shape, "flow: context has " + std::to_string(c.rows()) + " rows for a batch of " +
                               std::to_string(rows));
  return ad::matmul(tape.constant(Matrix::Ones(rows, 1)), c);
}

}  // namespace

void FlowConfig::validate() const {
  if (dim < 2 || dim % 2 != 0) fail(ErrorKind::Config, "flow: dim must be even and >= 2, got " + std::to_string(dim));
  if (context_dim < 0) fail(ErrorKind::Config, "flow: context_dim must be >= 0");
  if (num_blocks < 1) fail(ErrorKind::Config, "flow: num_blocks must be >= 1");
  for (int h : coupling_hidden)
    if (h < 1) fail(ErrorKind::Config, "flow: coupling hidden widths must be positive");
}

Matrix FlowBlock::permutation_matrix() const {
  const int d = static_cast<int>(permutation.size());
  Matrix P = Matrix::Zero(d, d);
  for (int i = 0; i < d; ++i) P(i, permutation[i]) = 1.0;
  return P;
}

Matrix FlowBlock::lower_matrix() const {
  Matrix L = lower.value.triangularView<Eigen::StrictlyLower>();
  L.diagonal().setOnes();
  return L;
}

Matrix FlowBlock::upper_matrix() const {
  Matrix U = upper.value.triangularView<Eigen::StrictlyUpper>();
  for (ad::Index i = 0; i < U.rows(); ++i) U(i, i) = u_sign[i] * std::exp(log_u.value(0, i));
  return U;
}

Matrix FlowBlock::weight() const { return permutation_matrix() * lower_matrix() * upper_matrix(); }

double FlowBlock::log_det() const { return log_scale.value.sum() + log_u.value.sum(); }

CondFlow::CondFlow(FlowConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  nn::Rng rng(seed);
  const int d = config_.dim;
  const int k = config_.split();
  for (int b = 0; b < config_.num_blocks; ++b) {
    const std::string name = "block" + std::to_string(b);
    FlowBlock blk;
    blk.log_scale = Parameter(name + ".log_scale", Matrix::Zero(1, d));
    blk.shift = Parameter(name + ".shift", Matrix::Zero(1, d));
    blk.permutation.resize(d);
    std::iota(blk.permutation.begin(), blk.permutation.end(), 0);
    if (config_.random_permutation) std::shuffle(blk.permutation.begin(), blk.permutation.end(), rng);
    blk.u_sign.assign(d, 1.0);
    blk.lower = Parameter(name + ".lower", Matrix::Zero(d, d));
    blk.upper = Parameter(name + ".upper", Matrix::Zero(d, d));
    blk.log_u = Parameter(name + ".log_u", Matrix::Zero(1, d));
    blk.lin_bias = Parameter(name + ".lin_bias", Matrix::Zero(1, d));
    blk.coupling = nn::Mlp(name + ".coupling", k + config_.context_dim, config_.coupling_hidden, d - k,
                           nn::Activation::Tanh, rng, /*zero_last=*/true);
    blocks_.push_back(std::move(blk));
  }
}

Var CondFlow::weight_factors(Tape& tape, const FlowBlock& blk, Var& L, Var& U) const {
  const int d = config_.dim;
  static thread_local int cached_dim = -1;
  static thread_local Matrix strict_lower, strict_upper, identity, ones_col;
  if (cached_dim != d) {
    strict_lower = Matrix::Ones(d, d).triangularView<Eigen::StrictlyLower>();
    strict_upper = Matrix::Ones(d, d).triangularView<Eigen::StrictlyUpper>();
    identity = Matrix::Identity(d, d);
    ones_col = Matrix::Ones(d, 1);
    cached_dim = d;
  }
  Matrix sign(1, d);
  for (int i = 0; i < d; ++i) sign(0, i) = blk.u_sign[i];

  const Var Ivar = tape.constant(identity);
  L = ad::add(ad::mul(nn::bind(tape, blk.lower), tape.constant(strict_lower)), Ivar);
  const Var diag_row = ad::mul(ad::exp(nn::bind(tape, blk.log_u)), tape.constant(sign));
  const Var diag = ad::mul(Ivar, ad::matmul(tape.constant(ones_col), diag_row));
  U = ad::add(ad::mul(nn::bind(tape, blk.upper), tape.constant(strict_upper)), diag);
  return tape.constant(blk.permutation_matrix());
}

Var CondFlow::block_forward(Tape& tape, const FlowBlock& blk, const Var& z, const Var& c) const {
  const int d = config_.dim;
  const int k = config_.split();
  const Var u = ad::add(ad::mul(z, ad::exp(nn::bind(tape, blk.log_scale))), nn::bind(tape, blk.shift));

  Var L, U;
  const Var P = weight_factors(tape, blk, L, U);
  // Rows: y = u W^T = u U^T L^T P^T.
  Var y = ad::matmul(ad::matmul(ad::matmul(u, ad::transpose(U)), ad::transpose(L)), ad::transpose(P));
  y = ad::add(y, nn::bind(tape, blk.lin_bias));

  const Var y1 = ad::cols(y, 0, k);
  const Var y2 = ad::cols(y, k, d - k);
  const Var cond = config_.context_dim > 0 ? ad::concat({y1, c}, ad::Axis::Cols) : y1;
  const Var shift = blk.coupling(tape, cond);
  return ad::concat({y1, ad::add(y2, shift)}, ad::Axis::Cols);
}

Var CondFlow::block_inverse(Tape& tape, const FlowBlock& blk, const Var& y, const Var& c) const {
  const int d = config_.dim;
  const int k = config_.split();
  const Var y1 = ad::cols(y, 0, k);
  const Var y2 = ad::cols(y, k, d - k);
  const Var cond = config_.context_dim > 0 ? ad::concat({y1, c}, ad::Axis::Cols) : y1;
  const Var x = ad::concat({y1, ad::sub(y2, blk.coupling(tape, cond))}, ad::Axis::Cols);

  Var L, U;
  const Var P = weight_factors(tape, blk, L, U);
  // Rows: u = U^-1 L^-1 P^T (x - b_lin).
  const Var v = ad::matmul(ad::sub(x, nn::bind(tape, blk.lin_bias)), P);
  const Var u = ad::solve_triangular(U, ad::solve_triangular(L, v, ad::Triangle::UnitLower), ad::Triangle::Upper);
  return ad::mul(ad::sub(u, nn::bind(tape, blk.shift)), ad::exp(-nn::bind(tape, blk.log_scale)));
}

Var CondFlow::log_det(Tape& tape) const {
  std::vector<Var> terms;
  for (const FlowBlock& blk : blocks_) {
    terms.push_back(ad::sum(nn::bind(tape, blk.log_scale)));
    terms.push_back(ad::sum(nn::bind(tape, blk.log_u)));
  }
  return ad::sum(ad::concat(terms, ad::Axis::Cols));
}

FlowResult CondFlow::forward(Tape& tape, const Var& z, const Var& c) const {
  if (z.cols() != config_.dim)
    fail(ErrorKind::Shape, "flow forward: latent has " + std::to_string(z.cols()) + " columns, expected " +
                               std::to_string(config_.dim));
  if (c.cols() != config_.context_dim)
    fail(ErrorKind::Shape, "flow forward: context has " + std::to_string(c.cols()) + " columns, expected " +
                               std::to_string(config_.context_dim));
  check_finite(z.value(), "latent");
  check_finite(c.value(), "context");
  const Var ctx = match_rows(tape, c, z.rows());
  Var h = z;
  for (const FlowBlock& blk : blocks_) h = block_forward(tape, blk, h, ctx);
  return {h, log_det(tape)};
}

FlowResult CondFlow::inverse(Tape& tape, const Var& theta, const Var& c) const {
  if (theta.cols() != config_.dim)
    fail(ErrorKind::Shape, "flow inverse: pose has " + std::to_string(theta.cols()) + " columns, expected " +
                               std::to_string(config_.dim));
  if (c.cols() != config_.context_dim)
    fail(ErrorKind::Shape, "flow inverse: context has " + std::to_string(c.cols()) + " columns, expected " +
                               std::to_string(config_.context_dim));
  check_finite(theta.value(), "pose");
  check_finite(c.value(), "context");
  const Var ctx = match_rows(tape, c, theta.rows());
  Var h = theta;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) h = block_inverse(tape, *it, h, ctx);
  return {h, log_det(tape)};
}

Var standard_normal_log_prob(const Var& z) {
  const double d = static_cast<double>(z.cols());
  return ad::add_scalar(ad::scale(ad::row_sum(ad::square(z)), -0.5), -0.5 * d * std::log(2.0 * std::numbers::pi));
}

Var CondFlow::log_prob(Tape& tape, const Var& theta, const Var& c) const {
  const FlowResult inv = inverse(tape, theta, c);
  return ad::sub(standard_normal_log_prob(inv.value), inv.log_det);
}

// ---- plain evaluation -----------------------------------------------------------------

Matrix CondFlow::forward(const Matrix& z, const Matrix& c, double* log_det_out) const {
  Tape tape(false);
  const FlowResult r = forward(tape, tape.constant(z), tape.constant(c));
  if (log_det_out) *log_det_out = r.log_det.scalar();
  return r.value.value();
}

Matrix CondFlow::inverse(const Matrix& theta, const Matrix& c, double* log_det_out) const {
  Tape tape(false);
  const FlowResult r = inverse(tape, tape.constant(theta), tape.constant(c));
  if (log_det_out) *log_det_out = r.log_det.scalar();
  return r.value.value();
}

Eigen::VectorXd CondFlow::log_prob(const Matrix& theta, const Matrix& c) const {
  Tape tape(false);
  return log_prob(tape, tape.constant(theta), tape.constant(c)).value().col(0);
}

double CondFlow::log_det() const {
  double s = 0.0;
  for (const FlowBlock& blk : blocks_) s += blk.log_det();
  return s;
}

Matrix CondFlow::mode(const Matrix& c) const { return forward(Matrix::Zero(c.rows(), config_.dim), c); }

Samples CondFlow::sample(const Matrix& c, int n, nn::Rng& rng) const {
  if (n < 1) fail(ErrorKind::Config, "sample: n must be >= 1");
  if (c.rows() != 1) fail(ErrorKind::Shape, "sample: expects a single context row");
  Samples out;
  out.z = nn::randn(rng, n, config_.dim);
  double ld = 0.0;
  out.theta = forward(out.z, c, &ld);
  const double d = static_cast<double>(config_.dim);
  out.log_prob = (-0.5 * out.z.rowwise().squaredNorm()).array() - 0.5 * d * std::log(2.0 * std::numbers::pi) - ld;
  return out;
}

void CondFlow::collect(std::vector<Parameter*>& out) {
  for (FlowBlock& blk : blocks_) {
    out.push_back(&blk.log_scale);
    out.push_back(&blk.shift);
    out.push_back(&blk.lower);
    out.push_back(&blk.upper);
    out.push_back(&blk.log_u);
    out.push_back(&blk.lin_bias);
    blk.coupling.collect(out);
  }
}

void CondFlow::project_parameters() {
  for (FlowBlock& blk : blocks_)
    blk.log_u.value = blk.log_u.value.cwiseMax(-kLogMagnitudeBound).cwiseMin(kLogMagnitudeBound);
}

void CondFlow::init_from_data(const Matrix& theta, const Matrix& c) {
  if (theta.rows() < 2) fail(ErrorKind::Config, "init_from_data: need at least 2 samples");
  Tape tape(false);
  const Var ctx = match_rows(tape, tape.constant(c), theta.rows());
  // Only the block nearest theta is initialized. Repeating the
  // standardization in every block compounds the floor on near-constant
  // coordinates into huge latents.
  FlowBlock& blk = blocks_.back();
  blk.log_scale.value.setZero();
  blk.shift.value.setZero();
  const Matrix u = block_inverse(tape, blk, tape.constant(theta), ctx).value();
  const Eigen::RowVectorXd mu = u.colwise().mean();
  const Eigen::RowVectorXd sd = ((u.rowwise() - mu).array().square().colwise().mean()).sqrt().max(0.05).matrix();
  blk.shift.value = mu;
  blk.log_scale.value = sd.array().log().matrix();
}

// ---- checkpoint --------------------------------------------------------------------

void CondFlow::save(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.set_meta(prefix + ".dim", std::to_string(config_.dim));
  ckpt.set_meta(prefix + ".context_dim", std::to_string(config_.context_dim));
  ckpt.set_meta(prefix + ".num_blocks", std::to_string(config_.num_blocks));
  ckpt.set_meta(prefix + ".coupling_hidden", join(config_.coupling_hidden));
  for (const FlowBlock& blk : blocks_) {
    const std::string p = prefix + "." + blk.log_scale.name.substr(0, blk.log_scale.name.find('.'));
    Matrix perm(1, config_.dim), sign(1, config_.dim);
    for (int i = 0; i < config_.dim; ++i) {
      perm(0, i) = blk.permutation[i];
      sign(0, i) = blk.u_sign[i];
    }
    ckpt.put(p + ".permutation", perm);
    ckpt.put(p + ".u_sign", sign);
    for (const Parameter* param : {&blk.log_scale, &blk.shift, &blk.lower, &blk.upper, &blk.log_u, &blk.lin_bias})
      ckpt.put(prefix + "." + param->name, param->value);
    for (const nn::Dense& layer : blk.coupling.layers) {
      ckpt.put(prefix + "." + layer.weight.name, layer.weight.value);
      ckpt.put(prefix + "." + layer.bias.name, layer.bias.value);
    }
  }
}

CondFlow CondFlow::load(const Checkpoint& ckpt, const std::string& prefix) {
  FlowConfig cfg;
  cfg.dim = std::stoi(ckpt.meta(prefix + ".dim"));
  cfg.context_dim = std::stoi(ckpt.meta(prefix + ".context_dim"));
  cfg.num_blocks = std::stoi(ckpt.meta(prefix + ".num_blocks"));
  cfg.coupling_hidden = split_ints(ckpt.meta(prefix + ".coupling_hidden"));
  CondFlow flow(cfg, 0);
  for (FlowBlock& blk : flow.blocks_) {
    const std::string p = prefix + "." + blk.log_scale.name.substr(0, blk.log_scale.name.find('.'));
    const Matrix& perm = ckpt.get(p + ".permutation", 1, cfg.dim);
    const Matrix& sign = ckpt.get(p + ".u_sign", 1, cfg.dim);
    for (int i = 0; i < cfg.dim; ++i) {
      blk.permutation[i] = static_cast<int>(perm(0, i));
      blk.u_sign[i] = sign(0, i);
    }
    std::vector<int> check = blk.permutation;
    std::sort(check.begin(), check.end());
    for (int i = 0; i < cfg.dim; ++i)
      if (check[i] != i) fail(ErrorKind::Data, "checkpoint: " + p + ".permutation is not a permutation");
    for (Parameter* param : {&blk.log_scale, &blk.shift, &blk.lower, &blk.upper, &blk.log_u, &blk.lin_bias})
      param->value = ckpt.get(prefix + "." + param->name, param->value.rows(), param->value.cols());
    for (nn::Dense& layer : blk.coupling.layers) {
      layer.weight.value = ckpt.get(prefix + "." + layer.weight.name, layer.weight.value.rows(), layer.weight.value.cols());
      layer.bias.value = ckpt.get(prefix + "." + layer.bias.name, layer.bias.value.rows(), layer.bias.value.cols());
    }
  }
  flow.project_parameters();
  return flow;
}

}  // namespace posedist::flow
