#include "posedist/evaluate.hpp"

#include "posedist/error.hpp"

#include <algorithm>

namespace posedist::eval {

namespace {

fit::Observation observation(const data::Examples& ex, int i) {
  fit::Observation obs;
  obs.keypoints.resize(2, ex.num_joints());
  obs.keypoints.row(0) = ex.ku.row(i);
  obs.keypoints.row(1) = ex.kv.row(i);
  obs.confidence = ex.conf.row(i).transpose();
  return obs;
}

bool increases(const std::vector<double>& trace) {
  for (std::size_t k = 1; k < trace.size(); ++k)
    if (trace[k] > trace[k - 1]) return true;
  return false;
}

}  // namespace

Matrix pose_joints(const body::BodyModel& body, const Matrix& theta, const Matrix& beta) {
  if (theta.rows() != beta.rows()) fail(ErrorKind::Shape, "pose_joints: row counts differ");
  Matrix out(theta.rows(), 3 * body.num_joints());
  constexpr Eigen::Index kChunk = 512;
  for (Eigen::Index first = 0; first < theta.rows(); first += kChunk) {
    const Eigen::Index n = std::min(kChunk, theta.rows() - first);
    ad::Tape tape(false);
    out.middleRows(first, n) =
        body.forward(tape.constant(theta.middleRows(first, n)), tape.constant(beta.middleRows(first, n))).joints.value();
  }
  return out;
}

metrics::EvalReport evaluate_mode(const model::PoseModel& model, const body::BodyModel& body,
                                  const data::Examples& ex) {
  const model::Prediction pred = model::predict(model, ex.inputs);
  const Matrix joints = pose_joints(body, pred.mode, pred.beta);
  metrics::EvalReport rep;
  for (int i = 0; i < ex.size(); ++i)
    rep.add(ex.sample_id[i], ex.view[i], "mode", metrics::joints_from_row(joints.row(i)),
            metrics::joints_from_row(ex.joints.row(i)));
  return rep;
}

metrics::MinOfNReport min_of_n(const model::PoseModel& model, const body::BodyModel& body, const data::Examples& ex,
                               const std::vector<int>& n_list, std::uint64_t seed) {
  if (n_list.empty()) fail(ErrorKind::Config, "min_of_n: empty n list");
  const int max_n = *std::max_element(n_list.begin(), n_list.end());
  if (max_n < 1) fail(ErrorKind::Config, "min_of_n: n must be at least 1");
  const model::Prediction pred = model::predict(model, ex.inputs);
  nn::Rng rng(seed);
  std::vector<std::vector<double>> errors;
  for (int i = 0; i < ex.size(); ++i) {
    Matrix hyp(max_n, model.flow.dim());
    hyp.row(0) = pred.mode.row(i);
    if (max_n > 1) hyp.bottomRows(max_n - 1) = model.flow.sample(pred.context.row(i), max_n - 1, rng).theta;
    const Matrix beta = pred.beta.row(i).replicate(max_n, 1);
    const Matrix joints = pose_joints(body, hyp, beta);
    const Eigen::Matrix3Xd gt = metrics::joints_from_row(ex.joints.row(i));
    std::vector<double> e(max_n);
    for (int h = 0; h < max_n; ++h) e[h] = metrics::pa_mpjpe(metrics::joints_from_row(joints.row(h)), gt);
    errors.push_back(std::move(e));
  }
  return metrics::min_of_n_curve(errors, n_list, ex.sample_id, ex.view);
}

FitEvaluation evaluate_fitting(const model::PoseModel& model, const body::BodyModel& body, const data::Examples& ex,
                               const fit::FitOptions& options) {
  FitEvaluation out;
  const model::Prediction pred = model::predict(model, ex.inputs);
  const Matrix mode_joints = pose_joints(body, pred.mode, pred.beta);
  for (int i = 0; i < ex.size(); ++i) {
    fit::FitResult r = fit::fit_keypoints(model, body, pred.context.row(i), observation(ex, i), options);
    if (increases(r.trace)) ++out.non_monotone;
    const Eigen::Matrix3Xd gt = metrics::joints_from_row(ex.joints.row(i));
    out.report.add(ex.sample_id[i], ex.view[i], "mode", metrics::joints_from_row(mode_joints.row(i)), gt);
    const Matrix fitted = pose_joints(body, r.theta.transpose(), r.beta.transpose());
    out.report.add(ex.sample_id[i], ex.view[i], "fit", metrics::joints_from_row(fitted.row(0)), gt);
    out.fits.push_back(std::move(r));
  }
  return out;
}

FitEvaluation evaluate_smplify(const model::PoseModel& model, const body::BodyModel& body, const data::Examples& ex,
                               const gmm::GmmPrior& prior, const fit::FitOptions& options) {
  FitEvaluation out;
  const model::Prediction pred = model::predict(model, ex.inputs);
  const Matrix mode_joints = pose_joints(body, pred.mode, pred.beta);
  for (int i = 0; i < ex.size(); ++i) {
    const body::Camera cam{pred.camera(i, 0), pred.camera(i, 1), pred.camera(i, 2)};
    fit::FitResult r = fit::fit_smplify_baseline(body, prior, pred.mode.row(i).transpose(),
                                                 pred.beta.row(i).transpose(), cam, observation(ex, i), options);
    if (increases(r.trace)) ++out.non_monotone;
    const Eigen::Matrix3Xd gt = metrics::joints_from_row(ex.joints.row(i));
    out.report.add(ex.sample_id[i], ex.view[i], "mode", metrics::joints_from_row(mode_joints.row(i)), gt);
    const Matrix fitted = pose_joints(body, r.theta.transpose(), r.beta.transpose());
    out.report.add(ex.sample_id[i], ex.view[i], "smplify", metrics::joints_from_row(fitted.row(0)), gt);
    out.fits.push_back(std::move(r));
  }
  return out;
}

FusionEvaluation evaluate_fusion(const model::PoseModel& model, const body::BodyModel& body,
                                 const data::Dataset& dataset, const fit::FitOptions& options) {
  FusionEvaluation out;
  for (const data::SyntheticSample& s : dataset.samples) {
    const int N = static_cast<int>(s.views.size());
    std::vector<fit::Observation> views;
    Matrix inputs(N, 3 * body.num_joints());
    for (int v = 0; v < N; ++v) {
      views.push_back({s.views[v].keypoints, s.views[v].confidence});
      inputs.row(v) = fit::observation_inputs(views.back());
    }
    const model::Prediction pred = model::predict(model, inputs);
    std::vector<Eigen::VectorXd> modes;
    for (int v = 0; v < N; ++v) modes.push_back(pred.mode.row(v).transpose());
    const std::vector<Eigen::VectorXd> averaged = fit::rot_avg_baseline(modes);
    fit::FusionResult fused = fit::fuse_multiview(model, views, options);
    if (fused.objective > fused.initial_objective) ++out.worse_than_init;

    Matrix theta(3 * N, model.flow.dim());
    Matrix beta(3 * N, model.config.shape_dims);
    for (int v = 0; v < N; ++v) {
      theta.row(v) = modes[v].transpose();
      theta.row(N + v) = averaged[v].transpose();
      theta.row(2 * N + v) = fused.theta[v].transpose();
      beta.row(v) = pred.beta.row(v);
      beta.row(N + v) = fused.beta[v].transpose();
      beta.row(2 * N + v) = fused.beta[v].transpose();
    }
    const Matrix joints = pose_joints(body, theta, beta);
    for (int v = 0; v < N; ++v) {
      const Eigen::Matrix3Xd gt = data::view_joints(body, s, v);
      out.report.add(s.id, v, "mode", metrics::joints_from_row(joints.row(v)), gt);
      out.report.add(s.id, v, "rot_avg", metrics::joints_from_row(joints.row(N + v)), gt);
      out.report.add(s.id, v, "fused", metrics::joints_from_row(joints.row(2 * N + v)), gt);
    }
    out.fusions.push_back(std::move(fused));
  }
  return out;
}

}  // namespace posedist::eval
