#pragma once

// Training losses. Every function returns a 1x1 Var averaged over the
// batch rows unless noted.

#include "posedist/autodiff.hpp"
#include "posedist/body.hpp"
#include "posedist/flow.hpp"
#include "posedist/model.hpp"

namespace posedist::losses {

using ad::Matrix;
using ad::Tape;
using ad::Var;

/// Row-batched 2D evidence, each n x J.
struct Keypoints {
  Matrix u, v, conf;
};

/// Row-batched 3D annotations. Masks are n x 1 with entries in {0, 1}.
struct Annotations3d {
  Matrix joints;  // n x 3J, camera frame
  Matrix theta;   // n x 6J
  Matrix beta;    // n x B
  Matrix joint_mask;
  Matrix param_mask;
};

struct LossWeights {
  double nll = 1.0;
  double exp_2d = 0.01;
  double exp_adv = 0.001;
  double mode_3d = 0.05;
  double mode_2d = 0.01;
  double mode_adv = 0.001;
  double orth = 0.1;

  bool any_adv() const { return exp_adv > 0.0 || mode_adv > 0.0; }
  bool any_exp() const { return exp_2d > 0.0 || exp_adv > 0.0; }
  bool any_mode() const { return mode_3d > 0.0 || mode_2d > 0.0 || mode_adv > 0.0; }
  /// Throws ErrorKind::Config on negative or non-finite weights.
  void validate() const;
};

/// Mean over rows of -log p(theta | c).
Var loss_nll(const flow::CondFlow& flow, Tape& tape, const Var& theta_gt, const Var& context);

/// Mean over rows of sum_j conf_j (|u_j - ku_j| + |v_j - kv_j|).
Var loss_2d(const body::Projection& proj, const Keypoints& kp);
Var loss_2d(const body::BodyModel& body, const Var& theta, const Var& beta, const Var& camera, const Keypoints& kp);

struct Loss3d {
  Var value;
  /// False when no row carries any annotation; value is then 0.
  bool annotated = false;
};

/// Per row: joint_mask * (1/J) sum_j |root-centered joint error|_1
///        + param_mask * (mean squared 6D error + mean squared beta error),
/// averaged over rows.
Loss3d loss_3d(const body::BodyModel& body, const Var& theta, const Var& beta, const Annotations3d& gt);

/// Least-squares GAN terms. The discriminator loss detaches `fake_*` by
/// copying them onto the tape as constants.
Var loss_adv_generator(const model::PoseModel& model, const Var& theta, const Var& beta);
Var loss_disc(const model::PoseModel& model, Tape& tape, const Matrix& real_theta, const Matrix& real_beta,
              const Matrix& fake_theta, const Matrix& fake_beta);

/// Mean orth_residual over every 6D block of every row.
Var loss_orth(const Var& theta);

struct TermValues {
  Var total;
  Var d2;
  Var adv;
  Var d3;
};

/// One reparametrized draw theta = f(z; c) scored with the 2D and
/// adversarial terms. `z` has one row per context row.
TermValues loss_exp(const model::PoseModel& model, const body::BodyModel& body, Tape& tape, const Var& context,
                    const Var& beta, const Var& camera, const Keypoints& kp, const Matrix& z,
                    const LossWeights& w, Var* theta_out = nullptr);

/// theta* = f(0; c) scored with the 3D, 2D and adversarial terms.
TermValues loss_mode(const model::PoseModel& model, const body::BodyModel& body, Tape& tape, const Var& context,
                     const Var& beta, const Var& camera, const Keypoints& kp, const Annotations3d& gt,
                     const LossWeights& w, Var* theta_out = nullptr);

}  // namespace posedist::losses
