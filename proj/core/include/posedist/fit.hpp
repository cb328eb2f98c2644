#pragma once

// MAP fitting on top of a trained model: latent-space keypoint fitting,
// the pose-space SMPLify-style baseline, multi-view fusion and the
// rotation-averaging baseline.

#include "posedist/autodiff.hpp"
#include "posedist/body.hpp"
#include "posedist/gmm.hpp"
#include "posedist/model.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace posedist::fit {

using ad::Matrix;
using ad::Tape;
using ad::Var;

// ---- optimizer ------------------------------------------------------------------

struct MinimizeOptions {
  int max_iters = 300;
  double step = 1e-2;
  double rel_tol = 1e-6;
  double min_step = 1e-12;
};

struct MinimizeResult {
  std::vector<Matrix> x;
  double value = 0.0;
  /// Objective at the start and after every accepted step.
  std::vector<double> trace;
  int iterations = 0;
  int rejected = 0;
  std::string stop_reason;
};

/// Returns f(x) and, when `grad` is non-null, fills it with df/dx.
using Evaluate = std::function<double(const std::vector<Matrix>& x, std::vector<Matrix>* grad)>;

/// Adam with step rejection: a proposal that does not lower the objective
/// (or is non-finite, or throws) is discarded, the moments are restored and
/// the step is halved. Stops when an accepted step changes the objective by
/// less than rel_tol relative, the step underflows min_step, or after
/// max_iters proposals. Throws ErrorKind::Numeric if f(x0) is not finite.
MinimizeResult minimize(const Evaluate& f, std::vector<Matrix> x0, const MinimizeOptions& options);

// ---- problems -------------------------------------------------------------------

/// 2D evidence for one view.
struct Observation {
  Eigen::Matrix2Xd keypoints;  // 2 x J
  Eigen::VectorXd confidence;  // J
};

struct FitOptions {
  double lambda_j = 10.0;
  double lambda_beta = 1e-3;
  double lambda_mv = 1.0;
  // Baseline weights.
  double lambda_theta = 0.01;
  double lambda_alpha = 1.0;
  MinimizeOptions optimizer;
  /// Fusion only: one shape (the mean head prediction) for every view.
  bool share_beta = true;

  /// Throws ErrorKind::Config.
  void validate() const;
};

using Terms = std::vector<std::pair<std::string, double>>;

struct FitResult {
  Eigen::VectorXd theta;
  Eigen::VectorXd beta;
  body::Camera camera;
  Eigen::VectorXd z;  // empty for the baseline
  double objective = 0.0;
  Terms terms;
  std::vector<double> trace;
  int iterations = 0;
  int rejected = 0;
  std::string stop_reason;
};

/// Weighted L1 reprojection error sum_j conf_j (|du_j| + |dv_j|) for 1-row
/// pose/shape/raw-camera inputs.
Var reprojection(const body::BodyModel& body, const Var& theta, const Var& beta, const Var& camera_raw,
                 const Observation& obs);

/// lambda_j E_J + 1/2 |z|^2 + lambda_beta |beta|^2 with theta = f(z; c).
Var keypoint_objective(const model::PoseModel& model, const body::BodyModel& body, const Matrix& context,
                       const Var& z, const Var& beta, const Var& camera_raw, const Observation& obs,
                       const FitOptions& options, Terms* terms = nullptr);

/// Starts at z = 0 with shape and camera from the heads.
FitResult fit_keypoints(const model::PoseModel& model, const body::BodyModel& body, const Observation& obs,
                        const FitOptions& options);
/// Same, with the context supplied (for example computed from other evidence).
FitResult fit_keypoints(const model::PoseModel& model, const body::BodyModel& body, const Matrix& context,
                        const Observation& obs, const FitOptions& options);

/// Sum over hinge joints of exp(max(0, -sin phi)) - 1, where phi is the
/// bend about the joint's hinge axis; 1 x 1.
Var hinge_penalty(const body::BodyModel& body, const Var& theta);

/// lambda_j E_J + lambda_theta GMM-NLL(theta_body) + lambda_alpha E_alpha
/// + lambda_beta |beta|^2.
Var smplify_objective(const body::BodyModel& body, const gmm::GmmPrior& prior, const Var& theta, const Var& beta,
                      const Var& camera_raw, const Observation& obs, const FitOptions& options,
                      Terms* terms = nullptr);

FitResult fit_smplify_baseline(const body::BodyModel& body, const gmm::GmmPrior& prior, const Eigen::VectorXd& theta,
                               const Eigen::VectorXd& beta, const body::Camera& camera, const Observation& obs,
                               const FitOptions& options);

struct FusionResult {
  std::vector<Eigen::VectorXd> theta;  // per view
  std::vector<Eigen::VectorXd> beta;
  std::vector<body::Camera> camera;
  Matrix z;  // views x d
  double objective = 0.0;
  double initial_objective = 0.0;
  Terms terms;
  std::vector<double> trace;
  int iterations = 0;
  int rejected = 0;
  std::string stop_reason;
};

/// 1/2 sum_n |z_n|^2 + lambda_mv sum_n |theta_n^b - mean_m theta_m^b|^2,
/// theta_n = f(z_n; c_n). Rows of z and contexts are views.
Var fusion_objective(const model::PoseModel& model, const Matrix& contexts, const Var& z, double lambda_mv,
                     Terms* terms = nullptr);

/// Starts at the per-view modes; cameras stay at the head predictions.
FusionResult fuse_multiview(const model::PoseModel& model, const std::vector<Observation>& views,
                            const FitOptions& options);

/// Replaces every body joint's rotation by its average over views; global
/// rotations are kept.
std::vector<Eigen::VectorXd> rot_avg_baseline(const std::vector<Eigen::VectorXd>& thetas);

/// Encoder input row for one observation.
Matrix observation_inputs(const Observation& obs);

/// One JSON line describing a fit (id, iterations, objective, terms,
/// theta, beta, camera).
std::string fit_record(int id, const FitResult& result);

}  // namespace posedist::fit
