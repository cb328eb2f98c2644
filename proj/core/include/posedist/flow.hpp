#pragma once

// Conditional normalizing flow theta = f(z; c).
//
// Each block applies, in order:
//   norm:     a * z + b                       (a = exp(log_scale) > 0)
//   linear:   W z + b_lin,  W = P L U        (P fixed permutation, L unit
//                                             lower, U upper with diagonal
//                                             sign * exp(log_u))
//   coupling: [z_1:k, z_k+1:d + t(z_1:k, c)]  (k = d / 2, additive)
//
// The log-determinant sum(log a) + sum(log |U_ii|) does not depend on z or c,
// so the density maximizer is f(0; c).

#include "posedist/autodiff.hpp"
#include "posedist/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace posedist {
class Checkpoint;
}

namespace posedist::flow {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

constexpr double kLogMagnitudeBound = 8.0;

struct FlowConfig {
  int dim = 96;
  int context_dim = 128;
  int num_blocks = 4;
  std::vector<int> coupling_hidden = {256, 256};
  bool random_permutation = true;

  int split() const { return dim / 2; }
  /// Throws ErrorKind::Config.
  void validate() const;
};

struct FlowBlock {
  Parameter log_scale;  // 1 x d
  Parameter shift;      // 1 x d
  std::vector<int> permutation;  // P(i, permutation[i]) = 1
  std::vector<double> u_sign;    // fixed signs of diag(U)
  Parameter lower;      // d x d, strictly lower triangle used
  Parameter upper;      // d x d, strictly upper triangle used
  Parameter log_u;      // 1 x d
  Parameter lin_bias;   // 1 x d
  nn::Mlp coupling;     // (k + context) -> hidden -> (d - k)

  Matrix permutation_matrix() const;
  Matrix lower_matrix() const;
  Matrix upper_matrix() const;
  /// W = P L U.
  Matrix weight() const;
  double log_det() const;
};

struct FlowResult {
  Var value;    // B x d
  Var log_det;  // 1 x 1, summed over blocks
};

struct Samples {
  Matrix theta;              // n x d
  Eigen::VectorXd log_prob;  // n
  Matrix z;                  // n x d latent draws
};

class CondFlow {
 public:
  CondFlow() = default;
  /// Identity-initialized blocks (a = 1, b = 0, L = U = I, zero final
  /// coupling layer) with random permutations drawn from `seed`.
  CondFlow(FlowConfig config, std::uint64_t seed);

  const FlowConfig& config() const { return config_; }
  int dim() const { return config_.dim; }
  int context_dim() const { return config_.context_dim; }
  std::vector<FlowBlock>& blocks() { return blocks_; }
  const std::vector<FlowBlock>& blocks() const { return blocks_; }

  // Differentiable, row-batched.
  FlowResult forward(Tape& tape, const Var& z, const Var& c) const;
  FlowResult inverse(Tape& tape, const Var& theta, const Var& c) const;
  /// B x 1 log-densities.
  Var log_prob(Tape& tape, const Var& theta, const Var& c) const;
  Var log_det(Tape& tape) const;

  // Plain evaluation; rows of `z`/`theta` share the single context `c`
  // unless `c` has one row per sample.
  Matrix forward(const Matrix& z, const Matrix& c, double* log_det = nullptr) const;
  Matrix inverse(const Matrix& theta, const Matrix& c, double* log_det = nullptr) const;
  Eigen::VectorXd log_prob(const Matrix& theta, const Matrix& c) const;
  double log_det() const;
  /// f(0; c) for each context row.
  Matrix mode(const Matrix& c) const;
  Samples sample(const Matrix& c, int n, nn::Rng& rng) const;

  void collect(std::vector<Parameter*>& out);
  /// Clamps log_u into [-8, 8]; call after every optimizer step.
  void project_parameters();
  /// Data-dependent normalization init: sets the norm layer of the last
  /// block so that its latent-side output has zero mean and unit variance
  /// over `theta` (standard deviations floored at 0.05).
  void init_from_data(const Matrix& theta, const Matrix& c);

  void save(Checkpoint& ckpt, const std::string& prefix = "flow") const;
  static CondFlow load(const Checkpoint& ckpt, const std::string& prefix = "flow");

 private:
  Var block_forward(Tape& tape, const FlowBlock& blk, const Var& z, const Var& c) const;
  Var block_inverse(Tape& tape, const FlowBlock& blk, const Var& y, const Var& c) const;
  Var weight_factors(Tape& tape, const FlowBlock& blk, Var& L, Var& U) const;

  FlowConfig config_;
  std::vector<FlowBlock> blocks_;
};

/// -0.5 * (d * ln(2 pi) + |z|^2) per row.
Var standard_normal_log_prob(const Var& z);

}  // namespace posedist::flow
