#include "posedist/train.hpp"

#include "posedist/error.hpp"
#include "posedist/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace posedist::train {

using ad::Matrix;
using ad::Tape;
using ad::Var;

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  auto bad = [](const std::string& what) { fail(ErrorKind::Config, "train: " + what); };
  if (epochs < 0) bad("epochs must be non-negative");
  if (batch < 1) bad("batch must be at least 1");
  if (!(lr > 0.0) || !(disc_lr > 0.0)) bad("learning rates must be positive");
  if (!std::isfinite(lr_final)) bad("lr_final must be finite");
  if (init_rows < 2) bad("init_rows must be at least 2");
  if (!(grad_clip >= 0.0)) bad("grad_clip must be non-negative");
  if (val_rows < 0) bad("val_rows must be non-negative");
  if (exp_samples < 1) bad("exp_samples must be at least 1");
}

namespace {

Matrix pick_rows(const Matrix& m, const std::vector<int>& idx, std::size_t first, std::size_t count) {
  Matrix out(count, m.cols());
  for (std::size_t i = 0; i < count; ++i) out.row(i) = m.row(idx[first + i]);
  return out;
}

void check_finite(const Var& v, const char* term, int epoch, long step) {
  if (!std::isfinite(v.scalar()))
    fail(ErrorKind::Numeric, std::string("train: loss term '") + term + "' is not finite (epoch " +
                                 std::to_string(epoch) + ", step " + std::to_string(step) + ")");
}

double grad_norm(const std::vector<ad::Parameter*>& params) {
  double sq = 0.0;
  for (const ad::Parameter* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

void clip_gradients(const std::vector<ad::Parameter*>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm)
    for (ad::Parameter* p : params) p->grad *= max_norm / norm;
}

/// Cosine annealing from `start` at step 0 to `end` at the last step.
double cosine_lr(double start, double end, long step, long total) {
  if (total <= 1) return start;
  const double progress = static_cast<double>(step) / static_cast<double>(total - 1);
  return end + 0.5 * (start - end) * (1.0 + std::cos(M_PI * progress));
}

}  // namespace

ValMetrics validate(const model::PoseModel& m, const body::BodyModel& body, const data::Examples& val) {
  ValMetrics out;
  const int n = val.size();
  if (n == 0) return out;
  constexpr int kChunk = 512;
  for (int first = 0; first < n; first += kChunk) {
    const int count = std::min(kChunk, n - first);
    const model::Prediction pred = model::predict(m, val.inputs.middleRows(first, count));
    out.nll -= m.flow.log_prob(val.theta.middleRows(first, count), pred.context).sum();
    Tape tape(false);
    const Matrix joints = body.forward(tape.constant(pred.mode), tape.constant(pred.beta)).joints.value();
    for (int i = 0; i < count; ++i) {
      const Eigen::Matrix3Xd p = metrics::joints_from_row(joints.row(i));
      const Eigen::Matrix3Xd g = metrics::joints_from_row(val.joints.row(first + i));
      out.mpjpe_mm += metrics::mpjpe(p, g);
      out.pa_mpjpe_mm += metrics::pa_mpjpe(p, g);
    }
  }
  out.nll /= n;
  out.mpjpe_mm /= n;
  out.pa_mpjpe_mm /= n;
  return out;
}

TrainResult train(const body::BodyModel& body, const data::Examples& train_set, const data::Examples& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.size() == 0) fail(ErrorKind::Data, "train: empty training set");
  if (config.model.num_joints != body.num_joints() || config.model.shape_dims != body.shape_dims())
    fail(ErrorKind::Config, "train: model dimensions do not match the body");

  const losses::LossWeights& w = config.weights;
  nn::Rng rng(config.seed);
  model::PoseModel m(config.model, rng());
  const int n = train_set.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  if (config.data_init) {
    std::vector<int> init = order;
    std::shuffle(init.begin(), init.end(), rng);
    const std::size_t rows = std::min<std::size_t>(config.init_rows, init.size());
    const Matrix x = pick_rows(train_set.inputs, init, 0, rows);
    Tape tape(false);
    const Matrix c = m.context(tape, tape.constant(x)).value();
    m.flow.init_from_data(pick_rows(train_set.theta, init, 0, rows), c);
  }

  data::Examples val = val_set;
  if (config.val_rows > 0 && config.val_rows < val.size()) {
    std::vector<int> rows(config.val_rows);
    std::iota(rows.begin(), rows.end(), 0);
    val = val.subset(rows);
  }

  const std::vector<ad::Parameter*> gen_params = m.generator_parameters();
  nn::Adam gen(gen_params, {config.lr});
  nn::Adam disc(m.discriminator_parameters(), {config.disc_lr});

  TrainResult result;
  result.best = m;
  double best_pa = std::numeric_limits<double>::infinity();
  long step = 0;
  const long batches_per_epoch = (static_cast<long>(order.size()) + config.batch - 1) / config.batch;
  const long total_steps = batches_per_epoch * config.epochs;
  const int d = m.flow.dim();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double nll_sum = 0.0;
    int nll_batches = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch, ++step) {
      if (config.lr_final >= 0.0) gen.set_lr(cosine_lr(config.lr, config.lr_final, step, total_steps));
      const std::size_t b = std::min<std::size_t>(config.batch, order.size() - first);
      const Matrix theta_gt = pick_rows(train_set.theta, order, first, b);
      const Matrix beta_gt = pick_rows(train_set.beta, order, first, b);
      const losses::Keypoints kp{pick_rows(train_set.ku, order, first, b), pick_rows(train_set.kv, order, first, b),
                                 pick_rows(train_set.conf, order, first, b)};

      Tape tape;
      const Var c = m.context(tape, tape.constant(pick_rows(train_set.inputs, order, first, b)));
      const model::HeadOutput head = m.head(tape, c);
      Var total = tape.constant(Matrix::Zero(1, 1));

      if (w.nll > 0.0) {
        const Var nll = losses::loss_nll(m.flow, tape, tape.constant(theta_gt), c);
        check_finite(nll, "nll", epoch, step);
        nll_sum += nll.scalar();
        ++nll_batches;
        total = ad::add(total, ad::scale(nll, w.nll));
      }
      Var theta_mode, theta_sample;
      if (w.any_mode()) {
        const losses::Annotations3d gt{pick_rows(train_set.joints, order, first, b), theta_gt, beta_gt,
                                       Matrix::Ones(b, 1), Matrix::Ones(b, 1)};
        const losses::TermValues t = losses::loss_mode(m, body, tape, c, head.beta, head.camera, kp, gt, w, &theta_mode);
        check_finite(t.d3, "mode_3d", epoch, step);
        check_finite(t.d2, "mode_2d", epoch, step);
        check_finite(t.adv, "mode_adv", epoch, step);
        total = ad::add(total, t.total);
      }
      if (w.any_exp() || w.orth > 0.0) {
        const double share = 1.0 / config.exp_samples;
        for (int k = 0; k < config.exp_samples; ++k) {
          const Matrix z = nn::randn(rng, b, d);
          const losses::TermValues t =
              losses::loss_exp(m, body, tape, c, head.beta, head.camera, kp, z, w, &theta_sample);
          check_finite(t.d2, "exp_2d", epoch, step);
          check_finite(t.adv, "exp_adv", epoch, step);
          total = ad::add(total, ad::scale(t.total, share));
          if (w.orth > 0.0) {
            const Var orth = losses::loss_orth(theta_sample);
            check_finite(orth, "orth", epoch, step);
            total = ad::add(total, ad::scale(orth, w.orth * share));
          }
        }
      }
      check_finite(total, "total", epoch, step);

      gen.zero_grad();
      tape.backward(total);
      if (config.grad_clip > 0.0) clip_gradients(gen_params, config.grad_clip);
      gen.step();
      m.flow.project_parameters();

      if (w.any_adv()) {
        Matrix fake_theta = theta_sample.valid() ? theta_sample.value() : theta_mode.value();
        Matrix fake_beta = head.beta.value();
        if (theta_sample.valid() && theta_mode.valid()) {
          fake_theta = (Matrix(2 * b, d) << theta_sample.value(), theta_mode.value()).finished();
          fake_beta = (Matrix(2 * b, fake_beta.cols()) << fake_beta, fake_beta).finished();
        }
        Tape dtape;
        const Var dl = losses::loss_disc(m, dtape, theta_gt, beta_gt, fake_theta, fake_beta);
        check_finite(dl, "disc", epoch, step);
        disc.zero_grad();
        dtape.backward(dl);
        disc.step();
      }
    }

    const ValMetrics vm = validate(m, body, val);
    EpochMetrics em{epoch, nll_batches ? nll_sum / nll_batches : 0.0, vm.nll, vm.mpjpe_mm, vm.pa_mpjpe_mm};
    result.log.push_back(em);
    if (on_epoch) on_epoch(em);
    if (vm.pa_mpjpe_mm < best_pa) {
      best_pa = vm.pa_mpjpe_mm;
      result.best = m;
      result.best_epoch = epoch;
    }
  }
  if (config.epochs == 0) result.best = m;
  result.last = m;
  return result;
}

std::string metrics_csv(const std::vector<EpochMetrics>& log) {
  std::ostringstream os;
  os << "epoch,train_nll,val_nll,val_mpjpe_mm,val_pa_mpjpe_mm\n";
  for (const EpochMetrics& e : log)
    os << e.epoch << ',' << metrics::fmt(e.train_nll) << ',' << metrics::fmt(e.val_nll) << ','
       << metrics::fmt(e.val_mpjpe_mm) << ',' << metrics::fmt(e.val_pa_mpjpe_mm) << '\n';
  return os.str();
}

}  // namespace posedist::train
