// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 1
// when any fails. Trains the bundled configuration and its mode-loss
// ablation at full size, so expect it to take most of an hour on one core.
//
//   posedist_acceptance [config] [cli]
//
// Defaults for both arguments are baked in at build time.

#include "posedist/config.hpp"
#include "posedist/error.hpp"
#include "posedist/evaluate.hpp"
#include "posedist/gradcheck.hpp"
#include "posedist/metrics.hpp"
#include "posedist/rotation.hpp"
#include "posedist/train.hpp"
#include "test_util.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>

using namespace posedist;
using ad::Matrix;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("[%s] %2d %-28s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

/// Runs `check`, reporting an exception as a failure of that criterion.
void criterion(int id, const std::string& name, const std::function<std::pair<bool, std::string>()>& check) {
  try {
    const auto [pass, detail] = check();
    report(id, name, pass, detail);
  } catch (const std::exception& e) {
    report(id, name, false, std::string("threw: ") + e.what());
  }
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

// ---- flow properties ---------------------------------------------------------

std::pair<bool, std::string> flow_roundtrip() {
  const auto t0 = Clock::now();
  const flow::CondFlow f = testing::random_flow(96, 128, 4, {256, 256}, 1);
  nn::Rng rng(1);
  const Matrix z = nn::randn(rng, 1000, 96), c = nn::randn(rng, 1000, 128);
  const double err = max_abs(f.inverse(f.forward(z, c), c) - z);
  const double t = seconds_since(t0);
  return {err < 1e-6 && t < 30.0, fmt("max |f^-1(f(z)) - z| = %.2e over 1000 draws, %.2f s", err, t)};
}

std::pair<bool, std::string> flow_logdet() {
  double worst = 0.0;
  for (int d : {2, 4, 8})
    for (int draw = 0; draw < 50; ++draw) {
      const flow::CondFlow f = testing::random_flow(d, 3, 3, {16}, 1000 * d + draw);
      nn::Rng rng(draw);
      const Matrix z = nn::randn(rng, 1, d), c = nn::randn(rng, 1, 3);
      double ld = 0.0;
      f.forward(z, c, &ld);
      const double numeric = std::log(std::abs(testing::numeric_jacobian(f, z, c).determinant()));
      worst = std::max(worst, std::abs(ld - numeric));
    }
  return {worst < 1e-3, fmt("max |log-det - FD log|det J|| = %.2e over 150 draws", worst)};
}

std::pair<bool, std::string> flow_normalization() {
  const flow::CondFlow f = testing::random_flow(2, 2, 3, {16}, 3);
  const Matrix c = (Matrix(1, 2) << -0.3, 0.8).finished();
  const double h = 0.02;
  const int n = 800;
  double total = 0.0;
  Matrix grid(n, 2);
  for (int i = 0; i < n; ++i) {
    const double x = -8.0 + (i + 0.5) * h;
    for (int j = 0; j < n; ++j) grid.row(j) << x, -8.0 + (j + 0.5) * h;
    total += f.log_prob(grid, c).array().exp().sum() * h * h;
  }
  return {std::abs(total - 1.0) <= 1e-2, fmt("integral over [-8,8]^2 = %.5f", total)};
}

/// Backtracking gradient ascent on log p(theta | c).
Matrix ascend(const flow::CondFlow& f, Matrix theta, const Matrix& c) {
  auto value_and_grad = [&](const Matrix& th, Matrix* g) {
    ad::Tape t;
    ad::Var x = t.variable(th);
    ad::Var lp = ad::sum(f.log_prob(t, x, t.constant(c)));
    t.backward(lp);
    *g = x.grad();
    return lp.scalar();
  };
  Matrix g;
  double v = value_and_grad(theta, &g);
  double step = 0.1;
  for (int it = 0; it < 20000 && g.norm() > 1e-11; ++it) {
    Matrix gn;
    Matrix cand = theta + step * g;
    double vn = value_and_grad(cand, &gn);
    while (vn < v && step > 1e-14) {
      step *= 0.5;
      cand = theta + step * g;
      vn = value_and_grad(cand, &gn);
    }
    theta = cand, v = vn, g = gn;
    step *= 1.5;
  }
  return theta;
}

std::pair<bool, std::string> flow_mode() {
  int violations = 0;
  for (int d : {8, 96}) {
    const flow::CondFlow f = testing::random_flow(d, 4, 4, {32}, 40 + d);
    nn::Rng rng(d);
    const Matrix c = nn::randn(rng, 1, 4);
    const double at_mode = f.log_prob(f.mode(c), c)(0);
    const flow::Samples s = f.sample(c, 10000, rng);
    violations += static_cast<int>((s.log_prob.array() > at_mode).count());
  }
  const flow::CondFlow f = testing::random_flow(4, 3, 3, {8}, 44);
  nn::Rng rng(44);
  const Matrix c = nn::randn(rng, 1, 3);
  const Matrix mode = f.mode(c);
  double worst = 0.0;
  for (int start = 0; start < 20; ++start) worst = std::max(worst, max_abs(ascend(f, nn::randn(rng, 1, 4), c) - mode));
  return {violations == 0 && worst < 1e-4,
          fmt("%.0f samples above the mode (2 x 10000, d=8,96); ascent from 20 starts off by %.2e", violations,
              worst)};
}

std::pair<bool, std::string> gradient_suite() {
  const std::vector<gradcheck::CheckResult> results = gradcheck::run_suite();
  double worst = 0.0;
  std::string failed;
  for (const auto& r : results) {
    worst = std::max(worst, r.worst());
    if (!r.passed || !(r.worst() < 1e-4)) failed += " " + r.name;
  }
  return {failed.empty(), fmt("%.0f checks, worst relative error %.2e", results.size(), worst) +
                              (failed.empty() ? "" : "; failed:" + failed)};
}

// ---- rotation and metrics ----------------------------------------------------

std::pair<bool, std::string> rotation_suite() {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> pos(0.05, 20.0), any(-10.0, 10.0);
  auto vec3 = [&] { return Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng)); };

  double scaling = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Eigen::Vector3d x = vec3(), y = vec3();
    rotation::Vector6 r, s;
    r << x, y;
    s << pos(rng) * x, any(rng) * x + pos(rng) * y;
    scaling = std::max(scaling, max_abs(rotation::sixd_to_rotmat(r) - rotation::sixd_to_rotmat(s)));
  }

  double residual = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Eigen::Matrix3Xd p(3, 16);
    for (int j = 0; j < 16; ++j) p.col(j) = 0.3 * vec3();
    const Eigen::Matrix3Xd q =
        ((std::exp(0.5 * gauss(rng)) * rotation::rotation_from_vector(2.0 * vec3()) * p).colwise() + vec3()).eval();
    residual = std::max(residual, rotation::procrustes_align(p, q).residual);
  }

  int violations = 0;
  for (int i = 0; i < 10000; ++i) {
    Eigen::Matrix3Xd a(3, 16), b(3, 16);
    for (int j = 0; j < 16; ++j) a.col(j) = 0.3 * vec3(), b.col(j) = 0.3 * vec3();
    if (metrics::pa_mpjpe(a, b) > metrics::mpjpe(a, b)) ++violations;
  }
  return {scaling < 1e-9 && residual < 1e-9 && violations == 0,
          fmt("6D scaling %.1e; Procrustes residual %.1e; %.0f of 10000 pairs with PA > MPJPE", scaling, residual,
              violations)};
}

// ---- trained-model criteria --------------------------------------------------

struct Trained {
  train::TrainResult result;
  double seconds = 0.0;
};

Trained run_training(const body::BodyModel& body, const data::Examples& tr, const data::Examples& te,
                     const train::TrainConfig& cfg, const std::string& label) {
  const auto t0 = Clock::now();
  Trained out;
  out.result = train::train(body, tr, te, cfg, [&](const train::EpochMetrics& m) {
    std::fprintf(stderr, "  %s epoch %d: val nll %.3f, mode PA %.2f mm (%.0f s)\n", label.c_str(), m.epoch, m.val_nll,
                 m.val_pa_mpjpe_mm, seconds_since(t0));
  });
  out.seconds = seconds_since(t0);
  return out;
}

double summary_pa(const metrics::EvalReport& rep, const std::string& method) {
  for (const metrics::MethodSummary& m : rep.summary())
    if (m.method == method) return m.pa_mpjpe_mm;
  fail(ErrorKind::Data, "no method " + method + " in report");
}

std::string curve_text(const metrics::MinOfNReport& r) {
  std::string s;
  for (std::size_t k = 0; k < r.curve_mm.size(); ++k) s += (k ? "/" : "") + fmt("%.2f", r.curve_mm[k]);
  return s;
}

std::vector<int> dropped_rows(const data::Examples& ex) {
  std::vector<int> rows;
  for (int i = 0; i < ex.size(); ++i)
    if ((ex.conf.row(i).array() == 0.0).any()) rows.push_back(i);
  return rows;
}

// ---- CLI determinism ---------------------------------------------------------

int run(const std::string& cli, const std::string& args) {
  const int status = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::pair<bool, std::string> cli_determinism(const std::string& cli) {
  const char* config = R"(train_count = 300
test_count = 60
multiview_count = 6
encoder_width = 32
encoder_blocks = 1
context_dim = 16
head_hidden = 32
disc_hidden = 32
flow_blocks = 2
coupling_hidden = 32
epochs = 3
batch = 32
data_init = true
init_rows = 128
fit_max_iters = 30
fit_limit = 8
gmm_components = 2
)";
  const std::vector<std::string> commands = {"gen-data", "train", "eval-mode", "eval-min-n",
                                             "eval-min-n --subset dropped", "fit", "smplify", "fuse",
                                             "gradcheck", "sample --index 2 --count 5"};
  std::vector<std::map<std::string, std::string>> outputs(2);
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = fs::temp_directory_path() / ("posedist_acceptance_cli" + std::to_string(rep));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "run.cfg") << config;
    for (const std::string& cmd : commands) {
      const int code = run(cli, "-c " + (dir / "run.cfg").string() + " -o " + dir.string() + " " + cmd);
      if (code != 0) return {false, "'" + cmd + "' exited with " + std::to_string(code)};
      // eval-min-n writes the same file for both subsets; keep each.
      for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".csv")
          outputs[rep][cmd + ":" + entry.path().filename().string()] = slurp(entry.path());
    }
  }
  int differing = 0;
  for (const auto& [name, text] : outputs[0])
    if (outputs[1].count(name) == 0 || outputs[1].at(name) != text) ++differing;
  return {differing == 0 && !outputs[0].empty(),
          fmt("%.0f subcommands, %.0f CSV snapshots compared, %.0f differ", commands.size(), outputs[0].size(),
              differing)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string config_path = argc > 1 ? argv[1] : POSEDIST_DEFAULT_CONFIG;
  const std::string cli = argc > 2 ? argv[2] : POSEDIST_CLI;

  criterion(1, "flow invertibility", flow_roundtrip);
  criterion(2, "log-det vs FD Jacobian", flow_logdet);
  criterion(3, "density normalization", flow_normalization);
  criterion(4, "mode dominance", flow_mode);
  criterion(5, "gradient suite", gradient_suite);
  criterion(11, "rotation suite", rotation_suite);
  criterion(12, "CLI determinism", [&] { return cli_determinism(cli); });

  ExperimentConfig cfg;
  std::optional<body::BodyModel> body_holder;
  data::Examples train_set, test_set;
  data::Dataset multiview;
  try {
    cfg = load_config(config_path);
    body_holder.emplace(cfg.body_spec.empty() ? body::default_body_spec() : body::load_body_spec(cfg.body_spec));
    const body::BodyModel& body = *body_holder;
    train_set = data::make_examples(body, data::generate(body, cfg.split("train")));
    test_set = data::make_examples(body, data::generate(body, cfg.split("test")));
    multiview = data::generate(body, cfg.split("multiview"));
  } catch (const std::exception& e) {
    for (int id : {6, 7, 8, 9, 10}) report(id, "trained-model criteria", false, std::string("setup threw: ") + e.what());
    return 1;
  }
  const body::BodyModel& body = *body_holder;
  std::fprintf(stderr, "config %s: %d train / %d test rows, %d epochs\n", config_path.c_str(), train_set.size(),
               test_set.size(), cfg.train.epochs);

  Trained main_run;
  bool trained = false;
  criterion(6, "training sanity", [&] {
    main_run = run_training(body, train_set, test_set, cfg.train, "default");
    trained = true;
    const auto& log = main_run.result.log;
    const auto& first = log.front();
    const auto& last = log.back();
    const bool pass = log.size() == 50 && last.val_nll < first.val_nll &&
                      last.val_pa_mpjpe_mm < first.val_pa_mpjpe_mm && main_run.seconds < 1800.0;
    return std::pair{pass, fmt("val NLL %.2f -> %.2f, mode PA %.2f", first.val_nll, last.val_nll,
                               first.val_pa_mpjpe_mm) +
                               fmt(" -> %.2f mm over %.0f epochs, %.0f s", last.val_pa_mpjpe_mm, log.size(),
                                   main_run.seconds)};
  });
  if (!trained) {
    for (int id : {7, 8, 9, 10}) report(id, "trained-model criteria", false, "default training failed");
    return 1;
  }
  const model::PoseModel& model = main_run.result.best;

  criterion(7, "mode-loss ablation", [&] {
    train::TrainConfig abl = cfg.train;
    abl.weights.mode_3d = abl.weights.mode_2d = abl.weights.mode_adv = 0.0;
    const Trained ablated = run_training(body, train_set, test_set, abl, "ablation");
    const double base = summary_pa(eval::evaluate_mode(model, body, test_set), "mode");
    const double without = summary_pa(eval::evaluate_mode(ablated.result.best, body, test_set), "mode");
    return std::pair{without >= 1.15 * base,
                     fmt("mode PA %.2f mm without L_mode vs %.2f mm default, ratio %.3f (need >= 1.15)", without,
                         base, without / base)};
  });

  criterion(8, "min-of-n", [&] {
    const std::vector<int> n_list = {1, 5, 10, 25};
    const metrics::MinOfNReport all = eval::min_of_n(model, body, test_set, n_list, cfg.seed);
    const metrics::MinOfNReport dropped =
        eval::min_of_n(model, body, test_set.subset(dropped_rows(test_set)), n_list, cfg.seed);
    bool decreasing = true;
    for (const auto* r : {&all, &dropped})
      for (std::size_t k = 1; k < r->curve_mm.size(); ++k) decreasing = decreasing && r->curve_mm[k] < r->curve_mm[k - 1];
    const auto& d = dropped.curve_mm;
    return std::pair{decreasing && d[3] <= 0.9 * d[0],
                     "all rows " + curve_text(all) + " mm; dropped subset " + curve_text(dropped) +
                         fmt(" mm, min-of-25 / n=1 = %.3f", d[3] / d[0])};
  });

  criterion(9, "keypoint fitting", [&] {
    data::Examples clean = data::make_examples(body, data::generate(body, cfg.split("test")), true);
    std::vector<int> rows;
    for (int i = 0; i < std::min(clean.size(), cfg.fit_limit > 0 ? cfg.fit_limit : clean.size()); ++i)
      rows.push_back(i);
    clean = clean.subset(rows);
    const eval::FitEvaluation res = eval::evaluate_fitting(model, body, clean, cfg.fit);
    const double mode = summary_pa(res.report, "mode"), fitted = summary_pa(res.report, "fit");
    return std::pair{fitted <= 0.95 * mode && res.non_monotone == 0,
                     fmt("mode PA %.2f mm -> fit %.2f mm (%.1f%% lower)", mode, fitted, 100.0 * (1.0 - fitted / mode)) +
                         fmt(" on %.0f rows; %.0f non-monotone traces", clean.size(), res.non_monotone)};
  });

  criterion(10, "multi-view fusion", [&] {
    const eval::FusionEvaluation res = eval::evaluate_fusion(model, body, multiview, cfg.fit);
    const double mode = summary_pa(res.report, "mode"), avg = summary_pa(res.report, "rot_avg"),
                 fused = summary_pa(res.report, "fused");
    return std::pair{fused <= avg && avg <= mode,
                     fmt("fused %.2f <= rot_avg %.2f <= mode %.2f mm", fused, avg, mode) +
                         fmt(" (%.0f samples x %.0f views)", multiview.samples.size(), multiview.num_views())};
  });

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
  return failures == 0 ? 0 : 1;
}
