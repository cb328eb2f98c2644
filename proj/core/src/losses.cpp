#include "posedist/losses.hpp"

#include "posedist/error.hpp"
#include "posedist/rotation.hpp"

#include <cmath>

namespace posedist::losses {

void LossWeights::validate() const {
  for (double w : {nll, exp_2d, exp_adv, mode_3d, mode_2d, mode_adv, orth})
    if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorKind::Config, "loss weights must be finite and non-negative");
}

namespace {

double rows_of(const Var& x) { return static_cast<double>(x.rows()); }

Var joints_3d(const body::BodyModel& body, const Var& joints, const Var& theta, const Var& beta,
              const Annotations3d& gt) {
  Tape& t = theta.tape();
  const double J = body.num_joints();
  const Var gt_joints = body.root_center(t.constant(gt.joints));
  const Var err = ad::row_sum(ad::abs(ad::sub(body.root_center(joints), gt_joints)));
  Var per_row = ad::mul(ad::scale(err, 1.0 / J), t.constant(gt.joint_mask));
  const Var dtheta = ad::scale(ad::row_sum(ad::square(ad::sub(theta, t.constant(gt.theta)))), 1.0 / theta.cols());
  const Var dbeta = ad::scale(ad::row_sum(ad::square(ad::sub(beta, t.constant(gt.beta)))), 1.0 / beta.cols());
  per_row = ad::add(per_row, ad::mul(ad::add(dtheta, dbeta), t.constant(gt.param_mask)));
  return ad::scale(ad::sum(per_row), 1.0 / rows_of(theta));
}

bool has_annotation(const Annotations3d& gt) {
  return (gt.joint_mask.array() != 0.0).any() || (gt.param_mask.array() != 0.0).any();
}

}  // namespace

Var loss_nll(const flow::CondFlow& flow, Tape& tape, const Var& theta_gt, const Var& context) {
  return ad::scale(ad::sum(flow.log_prob(tape, theta_gt, context)), -1.0 / rows_of(theta_gt));
}

Var loss_2d(const body::Projection& proj, const Keypoints& kp) {
  Tape& t = proj.u.tape();
  const Var du = ad::abs(ad::sub(proj.u, t.constant(kp.u)));
  const Var dv = ad::abs(ad::sub(proj.v, t.constant(kp.v)));
  return ad::scale(ad::sum(ad::mul(ad::add(du, dv), t.constant(kp.conf))), 1.0 / rows_of(proj.u));
}

Var loss_2d(const body::BodyModel& body, const Var& theta, const Var& beta, const Var& camera, const Keypoints& kp) {
  return loss_2d(body.project(body.forward(theta, beta).joints, camera), kp);
}

Loss3d loss_3d(const body::BodyModel& body, const Var& theta, const Var& beta, const Annotations3d& gt) {
  if (!has_annotation(gt)) return {theta.tape().constant(Matrix::Zero(1, 1)), false};
  return {joints_3d(body, body.forward(theta, beta).joints, theta, beta, gt), true};
}

Var loss_adv_generator(const model::PoseModel& model, const Var& theta, const Var& beta) {
  const Var d = model.discriminate(theta.tape(), theta, beta);
  return ad::mean(ad::square(ad::add_scalar(d, -1.0)));
}

Var loss_disc(const model::PoseModel& model, Tape& tape, const Matrix& real_theta, const Matrix& real_beta,
              const Matrix& fake_theta, const Matrix& fake_beta) {
  const Var real = model.discriminate(tape, tape.constant(real_theta), tape.constant(real_beta));
  const Var fake = model.discriminate(tape, tape.constant(fake_theta), tape.constant(fake_beta));
  return ad::add(ad::mean(ad::square(ad::add_scalar(real, -1.0))), ad::mean(ad::square(fake)));
}

Var loss_orth(const Var& theta) {
  if (theta.cols() % 6 != 0) fail(ErrorKind::Shape, "loss_orth: pose width is not a multiple of 6");
  return ad::mean(rotation::orth_residual(ad::reshape(theta, theta.rows() * theta.cols() / 6, 6)));
}

TermValues loss_exp(const model::PoseModel& model, const body::BodyModel& body, Tape& tape, const Var& context,
                    const Var& beta, const Var& camera, const Keypoints& kp, const Matrix& z,
                    const LossWeights& w, Var* theta_out) {
  const Var theta = model.flow.forward(tape, tape.constant(z), context).value;
  if (theta_out) *theta_out = theta;
  TermValues out;
  const Var zero = tape.constant(Matrix::Zero(1, 1));
  out.d2 = w.exp_2d > 0.0 ? loss_2d(body, theta, beta, camera, kp) : zero;
  out.adv = w.exp_adv > 0.0 ? loss_adv_generator(model, theta, beta) : zero;
  out.d3 = zero;
  out.total = ad::add(ad::scale(out.d2, w.exp_2d), ad::scale(out.adv, w.exp_adv));
  return out;
}

TermValues loss_mode(const model::PoseModel& model, const body::BodyModel& body, Tape& tape, const Var& context,
                     const Var& beta, const Var& camera, const Keypoints& kp, const Annotations3d& gt,
                     const LossWeights& w, Var* theta_out) {
  const Var z = tape.constant(Matrix::Zero(context.rows(), model.flow.dim()));
  const Var theta = model.flow.forward(tape, z, context).value;
  if (theta_out) *theta_out = theta;
  TermValues out;
  const Var zero = tape.constant(Matrix::Zero(1, 1));
  const bool need_body = (w.mode_3d > 0.0 && has_annotation(gt)) || w.mode_2d > 0.0;
  const Var joints = need_body ? body.forward(theta, beta).joints : zero;
  out.d3 = w.mode_3d > 0.0 && has_annotation(gt) ? joints_3d(body, joints, theta, beta, gt) : zero;
  out.d2 = w.mode_2d > 0.0 ? loss_2d(body.project(joints, camera), kp) : zero;
  out.adv = w.mode_adv > 0.0 ? loss_adv_generator(model, theta, beta) : zero;
  out.total = ad::add(ad::add(ad::scale(out.d3, w.mode_3d), ad::scale(out.d2, w.mode_2d)),
                      ad::scale(out.adv, w.mode_adv));
  return out;
}

}  // namespace posedist::losses
