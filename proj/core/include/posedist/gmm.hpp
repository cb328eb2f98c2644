#pragma once

// Full-covariance Gaussian mixture over body-pose vectors, fit with EM.

#include "posedist/autodiff.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace posedist {
class Checkpoint;
}

namespace posedist::gmm {

struct GmmPrior {
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;

  int components() const { return static_cast<int>(weights.size()); }
  int dims() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }

  /// Caches Cholesky factors; throws ErrorKind::Numeric when a covariance
  /// is not positive definite or the weights do not sum to 1.
  void finalize();
  /// log p(x) for each row of x.
  Eigen::VectorXd log_density(const Eigen::MatrixXd& x) const;
  /// n x K matrix of log w_k + log N(x_i; mu_k, Sigma_k).
  Eigen::MatrixXd component_log_density(const Eigen::MatrixXd& x) const;
  /// trace(Sigma_k^-1).
  double precision_trace(int k) const { return whiten_[k].squaredNorm(); }
  /// Per-row -log p(x) on the tape; n x 1. The log-sum-exp shift is a
  /// constant, which leaves values and gradients exact.
  ad::Var nll(const ad::Var& x) const;

  void save(Checkpoint& ckpt, const std::string& prefix = "gmm") const;
  static GmmPrior load(const Checkpoint& ckpt, const std::string& prefix = "gmm");

 private:
  /// Per component: rows of (x - mu) * whiten give standard-normal
  /// coordinates; log_norm = log w - d/2 log 2pi - 1/2 log det.
  std::vector<Eigen::MatrixXd> whiten_;
  std::vector<double> log_norm_;
};

struct FitOptions {
  int components = 8;
  int max_iters = 200;
  double rel_tol = 1e-6;
  /// Ridge added to each scatter matrix before normalizing.
  double reg = 1e-4;
  std::uint64_t seed = 0;
};

struct FitReport {
  GmmPrior prior;
  /// Penalized log-likelihood per iteration (EM maximizes it exactly, so
  /// the sequence never decreases).
  std::vector<double> objective;
  int iterations = 0;
  int reinitialized = 0;
};

/// Rows of `x` are samples. Needs at least components * dims rows.
FitReport fit(const Eigen::MatrixXd& x, const FitOptions& options);

}  // namespace posedist::gmm
