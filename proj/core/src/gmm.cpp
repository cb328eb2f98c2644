#include "posedist/gmm.hpp"

#include "posedist/checkpoint.hpp"
#include "posedist/error.hpp"

#include <cmath>
#include <iostream>
#include <numbers>
#include <random>

namespace posedist::gmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void GmmPrior::finalize() {
  const int K = components();
  if (K < 1 || static_cast<int>(means.size()) != K || static_cast<int>(covariances.size()) != K)
    fail(ErrorKind::Numeric, "gmm: inconsistent component counts");
  if (std::abs(weights.sum() - 1.0) > 1e-9 || (weights.array() < 0.0).any())
    fail(ErrorKind::Numeric, "gmm: weights must be non-negative and sum to 1");
  const int d = dims();
  whiten_.resize(K);
  log_norm_.resize(K);
  for (int k = 0; k < K; ++k) {
    Eigen::LLT<MatrixXd> llt(covariances[k]);
    if (llt.info() != Eigen::Success) fail(ErrorKind::Numeric, "gmm: covariance " + std::to_string(k) + " is not positive definite");
    const MatrixXd L = llt.matrixL();
    // (x - mu) L^-T has identity covariance.
    whiten_[k] = L.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(d, d)).transpose();
    const double log_det = 2.0 * L.diagonal().array().log().sum();
    log_norm_[k] = std::log(weights(k)) - 0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * log_det;
  }
}

MatrixXd GmmPrior::component_log_density(const MatrixXd& x) const {
  const int K = components();
  MatrixXd a(x.rows(), K);
  for (int k = 0; k < K; ++k)
    a.col(k) = (log_norm_[k] - 0.5 * ((x.rowwise() - means[k].transpose()) * whiten_[k]).rowwise().squaredNorm().array())
                   .matrix();
  return a;
}

VectorXd GmmPrior::log_density(const MatrixXd& x) const {
  const MatrixXd a = component_log_density(x);
  const VectorXd m = a.rowwise().maxCoeff();
  return m.array() + (a.colwise() - m).array().exp().rowwise().sum().log();
}

ad::Var GmmPrior::nll(const ad::Var& x) const {
  ad::Tape& t = x.tape();
  const int K = components();
  if (x.cols() != dims()) fail(ErrorKind::Shape, "gmm: input width does not match the prior");
  std::vector<ad::Var> cols;
  for (int k = 0; k < K; ++k) {
    const ad::Var y = ad::matmul(ad::sub(x, t.constant(means[k].transpose())), t.constant(whiten_[k]));
    cols.push_back(ad::add_scalar(ad::scale(ad::row_sum(ad::square(y)), -0.5), log_norm_[k]));
  }
  const ad::Var a = ad::concat(cols, ad::Axis::Cols);
  const ad::Var shift = t.constant(a.value().rowwise().maxCoeff());
  const ad::Var lse = ad::add(ad::log(ad::row_sum(ad::exp(ad::sub(a, shift)))), shift);
  return ad::scale(lse, -1.0);
}

void GmmPrior::save(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.set_meta(prefix + ".components", std::to_string(components()));
  ckpt.set_meta(prefix + ".dims", std::to_string(dims()));
  ckpt.put(prefix + ".weights", weights.transpose());
  for (int k = 0; k < components(); ++k) {
    ckpt.put(prefix + ".mean" + std::to_string(k), means[k].transpose());
    ckpt.put(prefix + ".cov" + std::to_string(k), covariances[k]);
  }
}

GmmPrior GmmPrior::load(const Checkpoint& ckpt, const std::string& prefix) {
  const int K = std::stoi(ckpt.meta(prefix + ".components"));
  const int d = std::stoi(ckpt.meta(prefix + ".dims"));
  GmmPrior g;
  g.weights = ckpt.get(prefix + ".weights", 1, K).transpose();
  for (int k = 0; k < K; ++k) {
    g.means.push_back(ckpt.get(prefix + ".mean" + std::to_string(k), 1, d).transpose());
    g.covariances.push_back(ckpt.get(prefix + ".cov" + std::to_string(k), d, d));
  }
  g.finalize();
  return g;
}

FitReport fit(const MatrixXd& x, const FitOptions& opt) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  const int K = opt.components;
  if (K < 1) fail(ErrorKind::Config, "gmm: need at least one component");
  if (n < K * d) fail(ErrorKind::Config, "gmm: need at least components * dims samples");
  if (!(opt.reg > 0.0)) fail(ErrorKind::Config, "gmm: reg must be positive");

  std::mt19937_64 rng(opt.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  const VectorXd mu_all = x.colwise().mean().transpose();
  const MatrixXd xc_all = x.rowwise() - mu_all.transpose();
  const MatrixXd cov_all = (xc_all.transpose() * xc_all + opt.reg * MatrixXd::Identity(d, d)) / n;

  FitReport rep;
  GmmPrior& g = rep.prior;
  g.weights = VectorXd::Constant(K, 1.0 / K);
  for (int k = 0; k < K; ++k) {
    g.means.push_back(K == 1 ? mu_all : VectorXd(x.row(pick(rng)).transpose()));
    g.covariances.push_back(cov_all);
  }
  g.finalize();

  auto penalized = [&](const VectorXd& logp) {
    double pen = 0.0;
    for (int k = 0; k < K; ++k) pen += 0.5 * opt.reg * g.precision_trace(k);
    return logp.sum() - pen;
  };

  double prev = penalized(g.log_density(x));
  rep.objective.push_back(prev);
  for (int it = 0; it < opt.max_iters; ++it) {
    // E step
    const MatrixXd a = g.component_log_density(x);
    const VectorXd m = a.rowwise().maxCoeff();
    MatrixXd r = (a.colwise() - m).array().exp().matrix();
    r.array().colwise() /= r.rowwise().sum().array();

    // M step
    for (int k = 0; k < K; ++k) {
      const double nk = r.col(k).sum();
      if (nk < 1e-8 * n) {
        std::cerr << "gmm: component " << k << " is empty at iteration " << it << ", reinitializing\n";
        ++rep.reinitialized;
        g.means[k] = x.row(pick(rng)).transpose();
        g.covariances[k] = cov_all;
        g.weights(k) = 1.0 / n;
        continue;
      }
      g.weights(k) = nk / n;
      g.means[k] = (x.transpose() * r.col(k)) / nk;
      const MatrixXd xc = x.rowwise() - g.means[k].transpose();
      g.covariances[k] = (xc.transpose() * r.col(k).asDiagonal() * xc + opt.reg * MatrixXd::Identity(d, d)) / nk;
    }
    g.weights /= g.weights.sum();
    g.finalize();
    const double cur = penalized(g.log_density(x));
    rep.objective.push_back(cur);
    rep.iterations = it + 1;
    if (std::abs(cur - prev) < opt.rel_tol * std::abs(prev)) break;
    prev = cur;
  }
  return rep;
}

}  // namespace posedist::gmm
