// posedist: data generation, training, evaluation and fitting from the
// command line. Exit codes: 0 success, 2 usage, 3 config, 4 data,
// 5 numeric failure.

#include "posedist/body.hpp"
#include "posedist/checkpoint.hpp"
#include "posedist/config.hpp"
#include "posedist/data.hpp"
#include "posedist/error.hpp"
#include "posedist/evaluate.hpp"
#include "posedist/gmm.hpp"
#include "posedist/gradcheck.hpp"
#include "posedist/metrics.hpp"
#include "posedist/model.hpp"
#include "posedist/train.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace posedist;
using ad::Matrix;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitData = 4;
constexpr int kExitNumeric = 5;

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;

  // inputs
  std::string train_data, val_data, data, model, prior_data;
  // gen-data
  std::string split = "all";
  // evaluation
  bool clean = false;
  std::string subset = "all";
  std::vector<int> n_list;
  int limit = -1;
  // sample
  int index = 0;
  int count = 25;
};

struct Log {
  void field(const std::string& key, const std::string& value) const { std::cerr << "  " << key << ": " << value << '\n'; }
  void line(const std::string& text) const { std::cerr << text << '\n'; }
};

ExperimentConfig load(const Options& opt) {
  ExperimentConfig cfg = opt.config.empty() ? ExperimentConfig{} : load_config(opt.config);
  if (opt.seed) cfg.set_seed(*opt.seed);
  cfg.validate();
  return cfg;
}

body::BodyModel load_body(const ExperimentConfig& cfg) {
  return body::BodyModel(cfg.body_spec.empty() ? body::default_body_spec() : body::load_body_spec(cfg.body_spec));
}

std::string in_out(const Options& opt, const std::string& given, const std::string& fallback) {
  return given.empty() ? (fs::path(opt.out) / fallback).string() : given;
}

std::string out_path(const Options& opt, const std::string& name) { return (fs::path(opt.out) / name).string(); }

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Data, "cannot write " + path);
  f << text;
  if (!f) fail(ErrorKind::Data, "failed writing " + path);
}

Log header(const std::string& command, const Options& opt, const ExperimentConfig& cfg) {
  std::cerr << "posedist " << command << '\n';
  Log log;
  log.field("config", opt.config.empty() ? "(defaults)" : fs::absolute(opt.config).string());
  log.field("seed", std::to_string(cfg.seed));
  log.field("out", fs::absolute(opt.out).string());
  log.field("body_spec", cfg.body_spec.empty() ? "(bundled default)" : cfg.body_spec);
  return log;
}

void input_field(const Log& log, const std::string& key, const std::string& path) {
  log.field(key, fs::absolute(path).string());
}

std::vector<int> limit_rows(int available, int limit) {
  const int n = limit > 0 ? std::min(limit, available) : available;
  std::vector<int> rows(n);
  for (int i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

void check_dims(const model::PoseModel& m, const body::BodyModel& body) {
  if (m.config.num_joints != body.num_joints() || m.config.shape_dims != body.shape_dims())
    fail(ErrorKind::Config, "model checkpoint does not match the configured body");
}

void write_report(const Options& opt, const std::string& stem, const metrics::EvalReport& rep) {
  write_file(out_path(opt, stem + ".csv"), rep.to_csv());
  write_file(out_path(opt, stem + "_summary.csv"), rep.summary_csv());
  std::cout << rep.to_text();
}

// ---- subcommands ------------------------------------------------------------

int cmd_gen_data(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  Log log = header("gen-data", opt, cfg);
  const body::BodyModel body = load_body(cfg);
  std::vector<std::string> splits = {"train", "test", "multiview"};
  if (opt.split != "all") splits = {opt.split};
  for (const std::string& s : splits) {
    const data::GenerateConfig g = cfg.split(s);
    const std::string path = out_path(opt, s + ".jsonl");
    data::save_dataset(data::generate(body, g), path);
    log.field(s, fs::absolute(path).string() + " (" + std::to_string(g.count) + " samples, " +
                     std::to_string(g.views) + " views, seed " + std::to_string(g.seed) + ")");
  }
  return 0;
}

int cmd_train(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  Log log = header("train", opt, cfg);
  const std::string train_path = in_out(opt, opt.train_data, "train.jsonl");
  const std::string val_path = in_out(opt, opt.val_data, "test.jsonl");
  input_field(log, "train_data", train_path);
  input_field(log, "val_data", val_path);
  log.field("train_seed", std::to_string(cfg.train.seed));

  const body::BodyModel body = load_body(cfg);
  const data::Examples train_set = data::make_examples(body, data::load_dataset(train_path));
  const data::Examples val_set = data::make_examples(body, data::load_dataset(val_path));

  const std::string metrics_path = out_path(opt, "metrics.csv");
  std::vector<train::EpochMetrics> log_rows;
  const train::TrainResult res = train::train(body, train_set, val_set, cfg.train, [&](const train::EpochMetrics& e) {
    log_rows.push_back(e);
    write_file(metrics_path, train::metrics_csv(log_rows));
    std::ostringstream os;
    os << "epoch " << e.epoch << "  train_nll " << metrics::fmt(e.train_nll) << "  val_nll "
       << metrics::fmt(e.val_nll) << "  val_mpjpe_mm " << metrics::fmt(e.val_mpjpe_mm) << "  val_pa_mpjpe_mm "
       << metrics::fmt(e.val_pa_mpjpe_mm);
    log.line(os.str());
  });
  write_file(metrics_path, train::metrics_csv(res.log));
  res.best.save(out_path(opt, "model.ckpt"));
  res.last.save(out_path(opt, "model_last.ckpt"));
  write_file(out_path(opt, "config_used.txt"), to_text(cfg));
  log.field("best_epoch", std::to_string(res.best_epoch));
  log.field("model", fs::absolute(out_path(opt, "model.ckpt")).string());
  return 0;
}

struct Loaded {
  Log log;
  ExperimentConfig cfg;
  body::BodyModel body;
  model::PoseModel model;
  data::Dataset dataset;
};

Loaded load_eval(const std::string& command, const Options& opt, const std::string& default_data) {
  ExperimentConfig cfg = load(opt);
  Log log = header(command, opt, cfg);
  const std::string model_path = in_out(opt, opt.model, "model.ckpt");
  const std::string data_path = in_out(opt, opt.data, default_data);
  input_field(log, "model", model_path);
  input_field(log, "data", data_path);
  body::BodyModel body = load_body(cfg);
  model::PoseModel m = model::PoseModel::load(model_path);
  check_dims(m, body);
  data::Dataset ds = data::load_dataset(data_path);
  return {log, std::move(cfg), std::move(body), std::move(m), std::move(ds)};
}

int cmd_eval_mode(const Options& opt) {
  const Loaded in = load_eval("eval-mode", opt, "test.jsonl");
  in.log.field("clean", opt.clean ? "true" : "false");
  const data::Examples ex = data::make_examples(in.body, in.dataset, opt.clean);
  write_report(opt, "eval_mode", eval::evaluate_mode(in.model, in.body, ex));
  return 0;
}

/// Rows with at least one dropped keypoint.
std::vector<int> dropped_rows(const data::Examples& ex) {
  std::vector<int> rows;
  for (int i = 0; i < ex.size(); ++i)
    if ((ex.conf.row(i).array() == 0.0).any()) rows.push_back(i);
  return rows;
}

int cmd_eval_min_n(const Options& opt) {
  const Loaded in = load_eval("eval-min-n", opt, "test.jsonl");
  data::Examples ex = data::make_examples(in.body, in.dataset);
  if (opt.subset == "dropped") ex = ex.subset(dropped_rows(ex));
  const std::vector<int> n_list = opt.n_list.empty() ? in.cfg.min_n : opt.n_list;
  const std::uint64_t seed = in.cfg.seed;
  in.log.field("subset", opt.subset + " (" + std::to_string(ex.size()) + " rows)");
  in.log.field("sample_seed", std::to_string(seed));
  const metrics::MinOfNReport rep = eval::min_of_n(in.model, in.body, ex, n_list, seed);
  write_file(out_path(opt, "min_of_n.csv"), rep.to_csv());
  write_file(out_path(opt, "min_of_n_samples.csv"), rep.per_sample_csv());
  std::cout << rep.to_csv();
  return 0;
}

std::string fits_jsonl(const data::Examples& ex, const std::vector<fit::FitResult>& fits) {
  std::string out;
  for (std::size_t i = 0; i < fits.size(); ++i) out += fit::fit_record(ex.sample_id[i], fits[i]) + "\n";
  return out;
}

int cmd_fit(const Options& opt) {
  const Loaded in = load_eval("fit", opt, "test.jsonl");
  data::Examples ex = data::make_examples(in.body, in.dataset, opt.clean);
  ex = ex.subset(limit_rows(ex.size(), opt.limit >= 0 ? opt.limit : in.cfg.fit_limit));
  in.log.field("clean", opt.clean ? "true" : "false");
  in.log.field("rows", std::to_string(ex.size()));
  const eval::FitEvaluation res = eval::evaluate_fitting(in.model, in.body, ex, in.cfg.fit);
  write_report(opt, "fit", res.report);
  write_file(out_path(opt, "fits.jsonl"), fits_jsonl(ex, res.fits));
  in.log.field("non_monotone_traces", std::to_string(res.non_monotone));
  return 0;
}

int cmd_smplify(const Options& opt) {
  const Loaded in = load_eval("smplify", opt, "test.jsonl");
  const std::string prior_path = in_out(opt, opt.prior_data, "train.jsonl");
  input_field(in.log, "prior_data", prior_path);
  in.log.field("gmm_seed", std::to_string(in.cfg.gmm.seed));
  const data::Examples prior_ex = data::make_examples(in.body, data::load_dataset(prior_path));
  const int d = in.body.pose_dim();
  const gmm::FitReport gr = gmm::fit(prior_ex.theta.rightCols(d - 6), in.cfg.gmm);
  Checkpoint ckpt;
  ckpt.set_meta("kind", "posedist-gmm");
  gr.prior.save(ckpt);
  ckpt.save(out_path(opt, "gmm.ckpt"));
  in.log.field("gmm_iterations", std::to_string(gr.iterations));

  data::Examples ex = data::make_examples(in.body, in.dataset, opt.clean);
  ex = ex.subset(limit_rows(ex.size(), opt.limit >= 0 ? opt.limit : in.cfg.fit_limit));
  in.log.field("clean", opt.clean ? "true" : "false");
  in.log.field("rows", std::to_string(ex.size()));
  const eval::FitEvaluation res = eval::evaluate_smplify(in.model, in.body, ex, gr.prior, in.cfg.fit);
  write_report(opt, "smplify", res.report);
  write_file(out_path(opt, "smplify_fits.jsonl"), fits_jsonl(ex, res.fits));
  in.log.field("non_monotone_traces", std::to_string(res.non_monotone));
  return 0;
}

int cmd_fuse(const Options& opt) {
  Loaded in = load_eval("fuse", opt, "multiview.jsonl");
  const int limit = opt.limit >= 0 ? opt.limit : in.cfg.fuse_limit;
  if (limit > 0 && limit < static_cast<int>(in.dataset.samples.size())) in.dataset.samples.resize(limit);
  in.log.field("samples", std::to_string(in.dataset.samples.size()));
  in.log.field("views", std::to_string(in.dataset.num_views()));
  const eval::FusionEvaluation res = eval::evaluate_fusion(in.model, in.body, in.dataset, in.cfg.fit);
  write_report(opt, "fuse", res.report);
  std::string records;
  for (std::size_t i = 0; i < res.fusions.size(); ++i) {
    const fit::FusionResult& f = res.fusions[i];
    std::ostringstream os;
    os << "{\"id\": " << in.dataset.samples[i].id << ", \"iterations\": " << f.iterations
       << ", \"initial_objective\": " << metrics::fmt(f.initial_objective)
       << ", \"objective\": " << metrics::fmt(f.objective) << ", \"stop_reason\": \"" << f.stop_reason << "\"}";
    records += os.str() + "\n";
  }
  write_file(out_path(opt, "fusions.jsonl"), records);
  in.log.field("worse_than_init", std::to_string(res.worse_than_init));
  return 0;
}

int cmd_gradcheck(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  header("gradcheck", opt, cfg);
  gradcheck::SuiteOptions so;
  so.seed = cfg.seed;
  const std::vector<gradcheck::CheckResult> results = gradcheck::run_suite(so);
  const std::string csv = gradcheck::to_csv(results);
  write_file(out_path(opt, "gradcheck.csv"), csv);
  std::cout << csv;
  for (const gradcheck::CheckResult& r : results)
    if (!r.passed) fail(ErrorKind::Numeric, "gradient check failed for " + r.name);
  return 0;
}

int cmd_sample(const Options& opt) {
  const Loaded in = load_eval("sample", opt, "test.jsonl");
  const data::Examples ex = data::make_examples(in.body, in.dataset);
  if (opt.index < 0 || opt.index >= ex.size())
    fail(ErrorKind::Data, "sample: row " + std::to_string(opt.index) + " out of range (" + std::to_string(ex.size()) +
                              " rows)");
  if (opt.count < 1) fail(ErrorKind::Config, "sample: --count must be at least 1");
  in.log.field("row", std::to_string(opt.index));
  in.log.field("sample_seed", std::to_string(in.cfg.seed));

  const model::Prediction pred = model::predict(in.model, ex.inputs.row(opt.index));
  nn::Rng rng(in.cfg.seed);
  const flow::Samples s = in.model.flow.sample(pred.context, opt.count, rng);
  Matrix theta(opt.count + 1, in.model.flow.dim());
  Eigen::VectorXd log_prob(opt.count + 1);
  theta.row(0) = pred.mode.row(0);
  log_prob(0) = in.model.flow.log_prob(pred.mode, pred.context)(0);
  theta.bottomRows(opt.count) = s.theta;
  log_prob.tail(opt.count) = s.log_prob;
  const Matrix joints = eval::pose_joints(in.body, theta, pred.beta.replicate(opt.count + 1, 1));

  std::ostringstream os;
  os << "hypothesis,kind,log_prob,joint,x,y,z\n";
  auto emit = [&](int h, const std::string& kind, double lp, const Eigen::RowVectorXd& row) {
    for (int j = 0; j < in.body.num_joints(); ++j)
      os << h << ',' << kind << ',' << metrics::fmt(lp) << ',' << j << ',' << metrics::fmt(row(3 * j)) << ','
         << metrics::fmt(row(3 * j + 1)) << ',' << metrics::fmt(row(3 * j + 2)) << '\n';
  };
  emit(-1, "ground_truth", 0.0, ex.joints.row(opt.index));
  for (int h = 0; h <= opt.count; ++h) emit(h, h == 0 ? "mode" : "sample", log_prob(h), joints.row(h));
  write_file(out_path(opt, "samples.csv"), os.str());
  return 0;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
      return kExitConfig;
    case ErrorKind::Data:
    case ErrorKind::Shape:
      return kExitData;
    case ErrorKind::Numeric:
    case ErrorKind::Degenerate:
      return kExitNumeric;
  }
  return kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"Conditional pose-distribution lifting: data, training, evaluation and fitting", "posedist"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("-c,--config", opt.config, "Experiment config file (key = value); defaults apply when omitted")
      ->check(CLI::ExistingFile);
  app.add_option("-o,--out", opt.out, "Output directory, created if missing; also the default input location")
      ->capture_default_str();
  app.add_option("-s,--seed", opt.seed, "Override the config seed");

  auto model_opt = [&](CLI::App* sub) {
    sub->add_option("--model", opt.model, "Model checkpoint (default <out>/model.ckpt)");
  };
  auto data_opt = [&](CLI::App* sub, const std::string& fallback) {
    sub->add_option("--data", opt.data, "Dataset file (default <out>/" + fallback + ")");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the train, test and multiview synthetic splits");
  gen->add_option("--split", opt.split, "Split to generate")
      ->check(CLI::IsMember({"all", "train", "test", "multiview"}))
      ->capture_default_str();

  CLI::App* tr = app.add_subcommand("train", "Train the model; writes model.ckpt, model_last.ckpt, metrics.csv");
  tr->add_option("--train-data", opt.train_data, "Training dataset (default <out>/train.jsonl)");
  tr->add_option("--val-data", opt.val_data, "Validation dataset (default <out>/test.jsonl)");

  CLI::App* em = app.add_subcommand("eval-mode", "Evaluate the mode prediction; writes eval_mode.csv");
  model_opt(em);
  data_opt(em, "test.jsonl");
  em->add_flag("--clean", opt.clean, "Use noise-free, fully visible keypoints");

  CLI::App* mn = app.add_subcommand("eval-min-n", "Nested min-of-n PA-MPJPE curve; writes min_of_n.csv");
  model_opt(mn);
  data_opt(mn, "test.jsonl");
  mn->add_option("--subset", opt.subset, "Rows to evaluate: all, or only rows with dropped keypoints")
      ->check(CLI::IsMember({"all", "dropped"}))
      ->capture_default_str();
  mn->add_option("--n", opt.n_list, "Hypothesis counts (default from config min_n)")->delimiter(',');

  CLI::App* ft = app.add_subcommand("fit", "Latent-space keypoint fitting; writes fit.csv and fits.jsonl");
  model_opt(ft);
  data_opt(ft, "test.jsonl");
  ft->add_flag("--clean", opt.clean, "Fit noise-free, fully visible keypoints");
  ft->add_option("--limit", opt.limit, "Rows to fit, 0 for all (default config fit_limit)");

  CLI::App* sm = app.add_subcommand("smplify", "Pose-space baseline with a mixture prior; writes smplify.csv");
  model_opt(sm);
  data_opt(sm, "test.jsonl");
  sm->add_option("--prior-data", opt.prior_data, "Dataset the mixture prior is fit on (default <out>/train.jsonl)");
  sm->add_flag("--clean", opt.clean, "Fit noise-free, fully visible keypoints");
  sm->add_option("--limit", opt.limit, "Rows to fit, 0 for all (default config fit_limit)");

  CLI::App* fu = app.add_subcommand("fuse", "Multi-view fusion against per-view modes and rotation averaging");
  model_opt(fu);
  data_opt(fu, "multiview.jsonl");
  fu->add_option("--limit", opt.limit, "Samples to fuse, 0 for all (default config fuse_limit)");

  CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference checks of every loss and fitting objective");

  CLI::App* sa = app.add_subcommand("sample", "Mode and sampled hypotheses for one row as CSV; writes samples.csv");
  model_opt(sa);
  data_opt(sa, "test.jsonl");
  sa->add_option("--index", opt.index, "Row of the dataset")->capture_default_str();
  sa->add_option("--count", opt.count, "Number of samples")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    fs::create_directories(opt.out);
    if (gen->parsed()) return cmd_gen_data(opt);
    if (tr->parsed()) return cmd_train(opt);
    if (em->parsed()) return cmd_eval_mode(opt);
    if (mn->parsed()) return cmd_eval_min_n(opt);
    if (ft->parsed()) return cmd_fit(opt);
    if (sm->parsed()) return cmd_smplify(opt);
    if (fu->parsed()) return cmd_fuse(opt);
    if (gc->parsed()) return cmd_gradcheck(opt);
    if (sa->parsed()) return cmd_sample(opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
