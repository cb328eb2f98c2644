#include "posedist/gradcheck.hpp"

#include "posedist/fit.hpp"
#include "posedist/gmm.hpp"
#include "posedist/losses.hpp"
#include "posedist/nn.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace posedist::gradcheck {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

body::BodySpec tiny_body_spec() {
  body::JointInfo root;
  root.name = "root";
  body::JointInfo child;
  child.name = "child";
  child.parent = 0;
  child.offset = body::Vec3(0.05, -0.4, 0.1);
  child.hinge = true;
  child.hinge_axis = body::Vec3::UnitX();
  Eigen::MatrixXd basis(2, 2);
  basis << 0.0, 0.0, 0.1, -0.05;
  return body::make_body_spec({root, child}, basis);
}

model::ModelConfig tiny_model_config() {
  model::ModelConfig c;
  c.num_joints = 2;
  c.shape_dims = 2;
  c.encoder_width = 8;
  c.encoder_blocks = 1;
  c.context_dim = 4;
  c.head_hidden = 6;
  c.disc_hidden = 6;
  c.flow_blocks = 2;
  c.coupling_hidden = {6};
  return c;
}

double param_check(const std::function<Var(Tape&)>& loss, const std::vector<Parameter*>& params, double step,
                   int* entries) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    Tape tape(false);
    return loss(tape).scalar();
  };
  double diff = 0.0, ref = 1e-12;
  int count = 0;
  for (Parameter* p : params) {
    const Matrix analytic = p->grad;
    Matrix numeric(p->value.rows(), p->value.cols());
    for (ad::Index i = 0; i < p->value.size(); ++i) {
      const double x0 = p->value(i);
      p->value(i) = x0 + step;
      const double fp = eval();
      p->value(i) = x0 - step;
      const double fm = eval();
      p->value(i) = x0;
      numeric(i) = (fp - fm) / (2.0 * step);
    }
    count += static_cast<int>(p->value.size());
    if (p->value.size() == 0) continue;
    ref = std::max({ref, analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff()});
    diff = std::max(diff, (analytic - numeric).cwiseAbs().maxCoeff());
  }
  const double worst = diff / ref;
  for (Parameter* p : params) p->zero_grad();
  if (entries) *entries = count;
  return worst;
}

namespace {

struct Fixture {
  body::BodyModel body{tiny_body_spec()};
  model::PoseModel model;
  int rows = 3;
  int J = 2;
  int B = 2;
  int d = 12;
  int c = 4;
  Matrix inputs, theta, beta, camera, context, z;
  losses::Keypoints kp;
  losses::Annotations3d gt;
  losses::LossWeights weights;
  fit::Observation obs;
  fit::FitOptions fit_options;
  gmm::GmmPrior prior;

  explicit Fixture(std::uint64_t seed) {
    nn::Rng rng(seed);
    model = model::PoseModel(tiny_model_config(), rng());
    // Move every parameter (including zero-initialized final layers) off
    // its special initial value so all paths carry gradient.
    std::vector<Parameter*> all = model.generator_parameters();
    for (Parameter* p : model.discriminator_parameters()) all.push_back(p);
    for (Parameter* p : all) p->value += nn::randn(rng, p->value.rows(), p->value.cols(), 0.2);

    inputs = nn::randn(rng, rows, 3 * J);
    theta = nn::randn(rng, rows, d);
    beta = nn::randn(rng, rows, B, 0.5);
    camera = Matrix(rows, 3);
    for (int i = 0; i < rows; ++i) camera.row(i) << 1.0 + 0.1 * i, 0.05 * i, -0.03 * i;
    context = nn::randn(rng, rows, c);
    z = nn::randn(rng, rows, d);
    kp = {nn::randn(rng, rows, J, 0.3), nn::randn(rng, rows, J, 0.3), Matrix::Ones(rows, J)};
    kp.conf(0, 1) = 0.0;
    gt.theta = nn::randn(rng, rows, d);
    gt.beta = nn::randn(rng, rows, B, 0.5);
    gt.joints = nn::randn(rng, rows, 3 * J, 0.3);
    gt.joint_mask = Matrix::Ones(rows, 1);
    gt.param_mask = Matrix::Ones(rows, 1);
    gt.param_mask(1, 0) = 0.0;
    weights.nll = 1.0;
    weights.exp_2d = 0.7;
    weights.exp_adv = 0.3;
    weights.mode_3d = 0.9;
    weights.mode_2d = 0.4;
    weights.mode_adv = 0.2;

    obs.keypoints = nn::randn(rng, 2, J, 0.3);
    obs.confidence = Eigen::VectorXd::Ones(J);
    fit_options.lambda_j = 2.0;
    fit_options.lambda_beta = 0.3;
    fit_options.lambda_theta = 0.5;
    fit_options.lambda_alpha = 0.7;

    const int body_dims = d - 6;
    prior.weights = Eigen::Vector2d(0.4, 0.6);
    for (int k = 0; k < 2; ++k) {
      prior.means.push_back(nn::randn(rng, body_dims, 1, 0.5));
      const Matrix a = nn::randn(rng, body_dims, body_dims, 0.3);
      prior.covariances.push_back(a * a.transpose() + 0.5 * Matrix::Identity(body_dims, body_dims));
    }
    prior.finalize();
  }

  std::vector<Parameter*> generator() { return model.generator_parameters(); }
  std::vector<Parameter*> flow_params() {
    std::vector<Parameter*> out;
    model.flow.collect(out);
    return out;
  }
};

CheckResult make_check(const std::string& name, const ad::Objective& objective, const std::vector<Matrix>& leaves,
                       const std::function<Var(Tape&)>& param_loss, const std::vector<Parameter*>& params,
                       const SuiteOptions& opt) {
  CheckResult r;
  r.name = name;
  if (!leaves.empty()) {
    const ad::GradCheckReport rep = ad::finite_diff_check(objective, leaves, opt.step, opt.tolerance);
    r.input_error = rep.worst();
    for (const Matrix& m : leaves) r.input_entries += static_cast<int>(m.size());
  }
  if (!params.empty()) r.param_error = param_check(param_loss, params, opt.step, &r.param_entries);
  r.passed = r.worst() < opt.tolerance;
  return r;
}

}  // namespace

std::vector<CheckResult> run_suite(const SuiteOptions& opt) {
  Fixture f(opt.seed);
  std::vector<CheckResult> out;
  const model::PoseModel& m = f.model;
  const body::BodyModel& body = f.body;

  // Training losses: inputs are the encoder outputs and head outputs the
  // loss consumes; parameters are every generator parameter reached from
  // the raw keypoint features.
  out.push_back(make_check(
      "loss_nll",
      [&](Tape& t, const std::vector<Var>& v) { return losses::loss_nll(m.flow, t, v[0], v[1]); },
      {f.theta, f.context},
      [&](Tape& t) { return losses::loss_nll(m.flow, t, t.constant(f.theta), m.context(t, t.constant(f.inputs))); },
      f.generator(), opt));

  out.push_back(make_check(
      "loss_exp",
      [&](Tape& t, const std::vector<Var>& v) {
        return losses::loss_exp(m, body, t, v[0], v[1], v[2], f.kp, f.z, f.weights).total;
      },
      {f.context, f.beta, f.camera},
      [&](Tape& t) {
        const Var c = m.context(t, t.constant(f.inputs));
        const model::HeadOutput h = m.head(t, c);
        return losses::loss_exp(m, body, t, c, h.beta, h.camera, f.kp, f.z, f.weights).total;
      },
      f.generator(), opt));

  out.push_back(make_check(
      "loss_mode",
      [&](Tape& t, const std::vector<Var>& v) {
        return losses::loss_mode(m, body, t, v[0], v[1], v[2], f.kp, f.gt, f.weights).total;
      },
      {f.context, f.beta, f.camera},
      [&](Tape& t) {
        const Var c = m.context(t, t.constant(f.inputs));
        const model::HeadOutput h = m.head(t, c);
        return losses::loss_mode(m, body, t, c, h.beta, h.camera, f.kp, f.gt, f.weights).total;
      },
      f.generator(), opt));

  out.push_back(make_check(
      "loss_2d",
      [&](Tape&, const std::vector<Var>& v) { return losses::loss_2d(body, v[0], v[1], v[2], f.kp); },
      {f.theta, f.beta, f.camera}, {}, {}, opt));

  out.push_back(make_check(
      "loss_3d",
      [&](Tape&, const std::vector<Var>& v) { return losses::loss_3d(body, v[0], v[1], f.gt).value; },
      {f.theta, f.beta}, {}, {}, opt));

  out.push_back(make_check(
      "loss_orth", [&](Tape&, const std::vector<Var>& v) { return losses::loss_orth(v[0]); }, {f.theta}, {}, {},
      opt));

  out.push_back(make_check(
      "loss_adv_generator",
      [&](Tape&, const std::vector<Var>& v) { return losses::loss_adv_generator(m, v[0], v[1]); },
      {f.theta, f.beta}, {}, {}, opt));

  {
    const Matrix fake_theta = f.z;
    const Matrix fake_beta = f.gt.beta;
    out.push_back(make_check(
        "loss_disc", {}, {},
        [&](Tape& t) { return losses::loss_disc(m, t, f.theta, f.beta, fake_theta, fake_beta); },
        f.model.discriminator_parameters(), opt));
  }

  // Fitting objectives, with respect to the optimized variables and the
  // flow parameters.
  const Matrix c1 = f.context.topRows(1);
  const Matrix z1 = f.z.topRows(1) * 0.5;
  const Matrix beta1 = f.beta.topRows(1);
  const Matrix cam1 = (Matrix(1, 3) << 0.1, 0.02, -0.04).finished();
  out.push_back(make_check(
      "keypoint_objective",
      [&](Tape&, const std::vector<Var>& v) {
        return fit::keypoint_objective(m, body, c1, v[0], v[1], v[2], f.obs, f.fit_options);
      },
      {z1, beta1, cam1},
      [&](Tape& t) {
        return fit::keypoint_objective(m, body, c1, t.constant(z1), t.constant(beta1), t.constant(cam1), f.obs,
                                       f.fit_options);
      },
      f.flow_params(), opt));

  out.push_back(make_check(
      "fusion_objective",
      [&](Tape&, const std::vector<Var>& v) { return fit::fusion_objective(m, f.context, v[0], 0.8); }, {f.z},
      [&](Tape& t) { return fit::fusion_objective(m, f.context, t.constant(f.z), 0.8); }, f.flow_params(), opt));

  const Matrix theta1 = f.theta.topRows(1);
  out.push_back(make_check(
      "smplify_objective",
      [&](Tape&, const std::vector<Var>& v) {
        return fit::smplify_objective(body, f.prior, v[0], v[1], v[2], f.obs, f.fit_options);
      },
      {theta1, beta1, cam1}, {}, {}, opt));

  out.push_back(make_check(
      "hinge_penalty", [&](Tape&, const std::vector<Var>& v) { return fit::hinge_penalty(body, v[0]); }, {theta1},
      {}, {}, opt));

  return out;
}

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

}  // namespace

std::string to_csv(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  os << "name,input_rel_error,param_rel_error,input_entries,param_entries,passed\n";
  for (const CheckResult& r : results)
    os << r.name << ',' << sci(r.input_error) << ',' << sci(r.param_error) << ','
       << r.input_entries << ',' << r.param_entries << ',' << (r.passed ? "true" : "false") << '\n';
  return os.str();
}

}  // namespace posedist::gradcheck
