#include "posedist/fit.hpp"

#include "posedist/data.hpp"
#include "posedist/error.hpp"
#include "posedist/rotation.hpp"

#include <json.hpp>

#include <cmath>

namespace posedist::fit {

// ---- optimizer ------------------------------------------------------------------

MinimizeResult minimize(const Evaluate& f, std::vector<Matrix> x0, const MinimizeOptions& opt) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  MinimizeResult res;
  res.x = std::move(x0);
  std::vector<Matrix> grad;
  res.value = f(res.x, &grad);
  if (!std::isfinite(res.value)) fail(ErrorKind::Numeric, "minimize: objective is not finite at the initial point");
  res.trace.push_back(res.value);

  std::vector<Matrix> m, v;
  for (const Matrix& x : res.x) {
    m.push_back(Matrix::Zero(x.rows(), x.cols()));
    v.push_back(Matrix::Zero(x.rows(), x.cols()));
  }
  double step = opt.step;
  long t = 0;
  res.stop_reason = "max_iters";
  for (int it = 0; it < opt.max_iters; ++it) {
    res.iterations = it + 1;
    const std::vector<Matrix> m_old = m, v_old = v;
    ++t;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    std::vector<Matrix> proposal = res.x;
    for (std::size_t i = 0; i < proposal.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i].cwiseAbs2();
      proposal[i].array() -= step * (m[i].array() / bc1) / ((v[i].array() / bc2).sqrt() + kEps);
    }
    std::vector<Matrix> g_new;
    double value = std::numeric_limits<double>::quiet_NaN();
    try {
      value = f(proposal, &g_new);
    } catch (const Error&) {
      value = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(value) || value > res.value) {
      m = m_old;
      v = v_old;
      --t;
      ++res.rejected;
      step *= 0.5;
      if (step < opt.min_step) {
        res.stop_reason = "step_underflow";
        break;
      }
      continue;
    }
    const double change = std::abs(res.value - value) / std::max(std::abs(res.value), 1e-12);
    res.x = std::move(proposal);
    res.value = value;
    grad = std::move(g_new);
    res.trace.push_back(value);
    if (change < opt.rel_tol) {
      res.stop_reason = "converged";
      break;
    }
  }
  return res;
}

void FitOptions::validate() const {
  for (double w : {lambda_j, lambda_beta, lambda_mv, lambda_theta, lambda_alpha})
    if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorKind::Config, "fit: weights must be finite and non-negative");
  if (optimizer.max_iters < 0) fail(ErrorKind::Config, "fit: max_iters must be non-negative");
  if (!(optimizer.step > 0.0)) fail(ErrorKind::Config, "fit: step must be positive");
  if (!(optimizer.rel_tol >= 0.0)) fail(ErrorKind::Config, "fit: rel_tol must be non-negative");
}

// ---- shared pieces ----------------------------------------------------------------

namespace {

Var camera_from_raw(const Var& raw) {
  return ad::concat({ad::exp(ad::cols(raw, 0, 1)), ad::cols(raw, 1, 2)}, ad::Axis::Cols);
}

Matrix row(const Eigen::VectorXd& v) { return v.transpose(); }

Matrix raw_camera(const body::Camera& c) {
  if (!(c.s > 0.0)) fail(ErrorKind::Numeric, "fit: camera scale must be positive");
  return (Matrix(1, 3) << std::log(c.s), c.tx, c.ty).finished();
}

body::Camera camera_of(const Matrix& raw) { return {std::exp(raw(0, 0)), raw(0, 1), raw(0, 2)}; }

void check_obs(const body::BodyModel& body, const Observation& obs) {
  const int J = body.num_joints();
  if (obs.keypoints.cols() != J || obs.confidence.size() != J)
    fail(ErrorKind::Shape, "fit: observation must hold one keypoint and confidence per joint");
}

// Runs `build` on a fresh tape over requires-grad leaves and returns the
// value (and gradients).
double evaluate_on_tape(const std::function<Var(Tape&, const std::vector<Var>&)>& build, const std::vector<Matrix>& x,
                        std::vector<Matrix>* grad) {
  Tape tape(grad != nullptr);
  std::vector<Var> leaves;
  for (const Matrix& m : x) leaves.push_back(tape.variable(m, true));
  const Var loss = build(tape, leaves);
  if (grad) {
    if (std::isfinite(loss.scalar())) {
      tape.backward(loss);
      grad->clear();
      for (const Var& l : leaves) grad->push_back(l.grad());
    }
  }
  return loss.scalar();
}

}  // namespace

Matrix observation_inputs(const Observation& obs) {
  return data::encode_keypoints(obs.keypoints.row(0), obs.keypoints.row(1), obs.confidence.transpose());
}

Var reprojection(const body::BodyModel& body, const Var& theta, const Var& beta, const Var& camera_raw,
                 const Observation& obs) {
  check_obs(body, obs);
  Tape& t = theta.tape();
  const body::Projection p = body.project(body.forward(theta, beta).joints, camera_from_raw(camera_raw));
  const Var du = ad::abs(ad::sub(p.u, t.constant(obs.keypoints.row(0))));
  const Var dv = ad::abs(ad::sub(p.v, t.constant(obs.keypoints.row(1))));
  return ad::sum(ad::mul(ad::add(du, dv), t.constant(obs.confidence.transpose())));
}

// ---- latent keypoint fitting --------------------------------------------------------

Var keypoint_objective(const model::PoseModel& model, const body::BodyModel& body, const Matrix& context,
                       const Var& z, const Var& beta, const Var& camera_raw, const Observation& obs,
                       const FitOptions& opt, Terms* terms) {
  Tape& t = z.tape();
  const Var theta = model.flow.forward(t, z, t.constant(context)).value;
  const Var e_j = reprojection(body, theta, beta, camera_raw, obs);
  const Var prior = ad::scale(ad::sum(ad::square(z)), 0.5);
  const Var e_beta = ad::sum(ad::square(beta));
  if (terms) *terms = {{"E_J", e_j.scalar()}, {"prior", prior.scalar()}, {"E_beta", e_beta.scalar()}};
  return ad::add(ad::add(ad::scale(e_j, opt.lambda_j), prior), ad::scale(e_beta, opt.lambda_beta));
}

FitResult fit_keypoints(const model::PoseModel& model, const body::BodyModel& body, const Observation& obs,
                        const FitOptions& opt) {
  check_obs(body, obs);
  Tape tape(false);
  const Matrix c = model.context(tape, tape.constant(observation_inputs(obs))).value();
  return fit_keypoints(model, body, c, obs, opt);
}

FitResult fit_keypoints(const model::PoseModel& model, const body::BodyModel& body, const Matrix& context,
                        const Observation& obs, const FitOptions& opt) {
  opt.validate();
  check_obs(body, obs);
  Tape tape(false);
  const model::HeadOutput h = model.head(tape, tape.constant(context));
  std::vector<Matrix> x0 = {Matrix::Zero(1, model.flow.dim()), h.beta.value(),
                            h.raw.value().rightCols(3)};
  auto build = [&](Tape&, const std::vector<Var>& v) {
    return keypoint_objective(model, body, context, v[0], v[1], v[2], obs, opt);
  };
  const MinimizeResult mr = minimize([&](const std::vector<Matrix>& x, std::vector<Matrix>* g) {
    return evaluate_on_tape(build, x, g);
  }, std::move(x0), opt.optimizer);

  FitResult res;
  res.z = mr.x[0].transpose();
  res.theta = model.flow.forward(mr.x[0], context).transpose();
  res.beta = mr.x[1].transpose();
  res.camera = camera_of(mr.x[2]);
  res.objective = mr.value;
  res.trace = mr.trace;
  res.iterations = mr.iterations;
  res.rejected = mr.rejected;
  res.stop_reason = mr.stop_reason;
  Tape t2(false);
  keypoint_objective(model, body, context, t2.constant(mr.x[0]), t2.constant(mr.x[1]), t2.constant(mr.x[2]), obs, opt,
                     &res.terms);
  return res;
}

// ---- pose-space baseline -------------------------------------------------------------

Var hinge_penalty(const body::BodyModel& body, const Var& theta) {
  Tape& t = theta.tape();
  const body::BodySpec& spec = body.spec();
  Var total = t.constant(Matrix::Zero(1, 1));
  for (int j : spec.hinge_joints()) {
    const Eigen::Vector3d& a = spec.joints[j].hinge_axis;
    // 1/2 a . vee(R - R^T); rotation columns are stored at 3c + i.
    Matrix k = Matrix::Zero(9, 1);
    k(5, 0) += 0.5 * a.x();
    k(7, 0) -= 0.5 * a.x();
    k(6, 0) += 0.5 * a.y();
    k(2, 0) -= 0.5 * a.y();
    k(1, 0) += 0.5 * a.z();
    k(3, 0) -= 0.5 * a.z();
    const Var R = rotation::sixd_to_rotmat(ad::cols(theta, 6 * j, 6));
    const Var back = ad::scale(ad::matmul(R, t.constant(k)), -1.0);
    total = ad::add(total, ad::sum(ad::add_scalar(ad::exp(ad::relu(back)), -1.0)));
  }
  return total;
}

Var smplify_objective(const body::BodyModel& body, const gmm::GmmPrior& prior, const Var& theta, const Var& beta,
                      const Var& camera_raw, const Observation& obs, const FitOptions& opt, Terms* terms) {
  const Var e_j = reprojection(body, theta, beta, camera_raw, obs);
  const Var e_theta = ad::sum(prior.nll(ad::cols(theta, 6, theta.cols() - 6)));
  const Var e_alpha = hinge_penalty(body, theta);
  const Var e_beta = ad::sum(ad::square(beta));
  if (terms)
    *terms = {{"E_J", e_j.scalar()}, {"E_theta", e_theta.scalar()}, {"E_alpha", e_alpha.scalar()},
              {"E_beta", e_beta.scalar()}};
  return ad::add(ad::add(ad::scale(e_j, opt.lambda_j), ad::scale(e_theta, opt.lambda_theta)),
                 ad::add(ad::scale(e_alpha, opt.lambda_alpha), ad::scale(e_beta, opt.lambda_beta)));
}

FitResult fit_smplify_baseline(const body::BodyModel& body, const gmm::GmmPrior& prior, const Eigen::VectorXd& theta,
                               const Eigen::VectorXd& beta, const body::Camera& camera, const Observation& obs,
                               const FitOptions& opt) {
  opt.validate();
  check_obs(body, obs);
  if (theta.size() != body.pose_dim() || beta.size() != body.shape_dims())
    fail(ErrorKind::Shape, "fit_smplify_baseline: init does not match the body");
  auto build = [&](Tape&, const std::vector<Var>& v) {
    return smplify_objective(body, prior, v[0], v[1], v[2], obs, opt);
  };
  const MinimizeResult mr = minimize([&](const std::vector<Matrix>& x, std::vector<Matrix>* g) {
    return evaluate_on_tape(build, x, g);
  }, {row(theta), row(beta), raw_camera(camera)}, opt.optimizer);

  FitResult res;
  res.theta = mr.x[0].transpose();
  res.beta = mr.x[1].transpose();
  res.camera = camera_of(mr.x[2]);
  res.objective = mr.value;
  res.trace = mr.trace;
  res.iterations = mr.iterations;
  res.rejected = mr.rejected;
  res.stop_reason = mr.stop_reason;
  Tape t2(false);
  smplify_objective(body, prior, t2.constant(mr.x[0]), t2.constant(mr.x[1]), t2.constant(mr.x[2]), obs, opt,
                    &res.terms);
  return res;
}

// ---- multi-view fusion ----------------------------------------------------------------

Var fusion_objective(const model::PoseModel& model, const Matrix& contexts, const Var& z, double lambda_mv,
                     Terms* terms) {
  Tape& t = z.tape();
  const Var theta = model.flow.forward(t, z, t.constant(contexts)).value;
  const Var body = ad::cols(theta, 6, theta.cols() - 6);
  const Var mean = ad::scale(ad::col_sum(body), 1.0 / static_cast<double>(theta.rows()));
  const Var consistency = ad::sum(ad::square(ad::sub(body, mean)));
  const Var prior = ad::scale(ad::sum(ad::square(z)), 0.5);
  if (terms) *terms = {{"prior", prior.scalar()}, {"consistency", consistency.scalar()}};
  return ad::add(prior, ad::scale(consistency, lambda_mv));
}

FusionResult fuse_multiview(const model::PoseModel& model, const std::vector<Observation>& views,
                            const FitOptions& opt) {
  opt.validate();
  if (views.empty()) fail(ErrorKind::Config, "fuse_multiview: need at least one view");
  const int N = static_cast<int>(views.size());
  const int J = model.config.num_joints;
  Matrix inputs(N, 3 * J);
  for (int n = 0; n < N; ++n) {
    if (views[n].keypoints.cols() != J || views[n].confidence.size() != J)
      fail(ErrorKind::Shape, "fuse_multiview: observation must hold one keypoint and confidence per joint");
    inputs.row(n) = observation_inputs(views[n]);
  }
  const model::Prediction pred = model::predict(model, inputs);
  auto build = [&](Tape&, const std::vector<Var>& v) {
    return fusion_objective(model, pred.context, v[0], opt.lambda_mv);
  };
  const MinimizeResult mr = minimize([&](const std::vector<Matrix>& x, std::vector<Matrix>* g) {
    return evaluate_on_tape(build, x, g);
  }, {Matrix::Zero(N, model.flow.dim())}, opt.optimizer);

  FusionResult res;
  res.z = mr.x[0];
  const Matrix theta = model.flow.forward(mr.x[0], pred.context);
  const Eigen::VectorXd shared = pred.beta.colwise().mean().transpose();
  for (int n = 0; n < N; ++n) {
    res.theta.push_back(theta.row(n).transpose());
    res.beta.push_back(opt.share_beta ? shared : Eigen::VectorXd(pred.beta.row(n).transpose()));
    res.camera.push_back({pred.camera(n, 0), pred.camera(n, 1), pred.camera(n, 2)});
  }
  res.objective = mr.value;
  res.initial_objective = mr.trace.front();
  res.trace = mr.trace;
  res.iterations = mr.iterations;
  res.rejected = mr.rejected;
  res.stop_reason = mr.stop_reason;
  Tape t2(false);
  fusion_objective(model, pred.context, t2.constant(mr.x[0]), opt.lambda_mv, &res.terms);
  return res;
}

std::vector<Eigen::VectorXd> rot_avg_baseline(const std::vector<Eigen::VectorXd>& thetas) {
  if (thetas.empty()) return {};
  const Eigen::Index d = thetas.front().size();
  if (d % 6 != 0) fail(ErrorKind::Shape, "rot_avg_baseline: pose length is not a multiple of 6");
  for (const auto& t : thetas)
    if (t.size() != d) fail(ErrorKind::Shape, "rot_avg_baseline: pose lengths differ");
  std::vector<Eigen::VectorXd> out = thetas;
  if (thetas.size() == 1) return out;
  for (Eigen::Index j = 1; j < d / 6; ++j) {
    std::vector<rotation::Mat3> rots;
    for (const auto& t : thetas) rots.push_back(rotation::sixd_to_rotmat(rotation::Vector6(t.segment<6>(6 * j))));
    const rotation::Vector6 avg = rotation::rotmat_to_sixd(rotation::average_rotations(rots));
    for (auto& t : out) t.segment<6>(6 * j) = avg;
  }
  return out;
}

std::string fit_record(int id, const FitResult& r) {
  nlohmann::json terms = nlohmann::json::object();
  for (const auto& [k, v] : r.terms) terms[k] = v;
  const nlohmann::json rec = {{"id", id},
                              {"iterations", r.iterations},
                              {"rejected", r.rejected},
                              {"stop", r.stop_reason},
                              {"objective", r.objective},
                              {"terms", terms},
                              {"theta", std::vector<double>(r.theta.data(), r.theta.data() + r.theta.size())},
                              {"beta", std::vector<double>(r.beta.data(), r.beta.data() + r.beta.size())},
                              {"camera", {r.camera.s, r.camera.tx, r.camera.ty}}};
  return rec.dump();
}

}  // namespace posedist::fit
