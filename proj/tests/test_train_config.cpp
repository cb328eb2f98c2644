#include "posedist/checkpoint.hpp"
#include "posedist/config.hpp"
#include "posedist/error.hpp"
#include "posedist/gradcheck.hpp"
#include "posedist/train.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace posedist;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Numeric;
}

model::ModelConfig small_model() {
  model::ModelConfig m;
  m.encoder_width = 32;
  m.encoder_blocks = 1;
  m.context_dim = 8;
  m.head_hidden = 16;
  m.disc_hidden = 16;
  m.flow_blocks = 2;
  m.coupling_hidden = {16};
  return m;
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const ExperimentConfig c = parse_config("# comment\nseed = 7\n  epochs=3 # trailing\nmin_n = 1,2,4\n\nfit_share_beta = false\n");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.train.seed, 7u);
  EXPECT_EQ(c.gmm.seed, 7u);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.min_n, (std::vector<int>{1, 2, 4}));
  EXPECT_FALSE(c.fit.share_beta);
  EXPECT_EQ(c.train_count, 20000);
  EXPECT_EQ(c.split("test").seed, 8u);
  EXPECT_EQ(c.split("multiview").views, c.multiview_views);
}

TEST(Config, RejectsBadInput) {
  for (const char* text : {"epochs = 3x", "no_such_key = 1", "just a line", "lr = -1", "min_n = 0,1", "data_init = maybe",
                           "drop_prob = 1.5", "gmm_reg = 0", "batch = 0", "lambda_orth = nan"})
    EXPECT_EQ(kind_of([&] { parse_config(text); }), ErrorKind::Config) << text;
  EXPECT_EQ(kind_of([] { load_config("/nonexistent/file.cfg"); }), ErrorKind::Data);
}

TEST(Config, TextRoundTrip) {
  ExperimentConfig c = parse_config("seed = 3\nlr = 0.00123\nlambda_mode_3d = 12.5\ncoupling_hidden = 64,32\nfit_limit = 9");
  const std::string text = to_text(c);
  EXPECT_EQ(to_text(parse_config(text)), text);
  EXPECT_NE(text.find("coupling_hidden = 64,32"), std::string::npos);
}

TEST(Checkpoint, ModelRoundTripIsExact) {
  const model::PoseModel m(small_model(), 3);
  Checkpoint ck;
  m.save(ck);
  const std::string bytes = ck.to_bytes();
  const model::PoseModel back = model::PoseModel::load(Checkpoint::from_bytes(bytes));
  Checkpoint again;
  back.save(again);
  EXPECT_EQ(again.to_bytes(), bytes);

  nn::Rng rng(1);
  const ad::Matrix x = nn::randn(rng, 3, 48);
  const model::Prediction a = model::predict(m, x), b = model::predict(back, x);
  EXPECT_EQ((a.mode - b.mode).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((a.camera - b.camera).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Checkpoint, CorruptInputIsDataError) {
  Checkpoint ck;
  ck.put("w", Eigen::MatrixXd::Ones(2, 2));
  std::string bytes = ck.to_bytes();
  EXPECT_EQ(kind_of([&] { Checkpoint::from_bytes(bytes.substr(0, bytes.size() - 3)); }), ErrorKind::Data);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of([&] { Checkpoint::from_bytes(bad_magic); }), ErrorKind::Data);
  std::string bad_version = bytes;
  bad_version[8] = static_cast<char>(Checkpoint::kVersion + 1);
  EXPECT_EQ(kind_of([&] { Checkpoint::from_bytes(bad_version); }), ErrorKind::Data);
  EXPECT_EQ(kind_of([&] { ck.get("w", 3, 2); }), ErrorKind::Data);
  EXPECT_EQ(kind_of([&] { ck.get("missing"); }), ErrorKind::Data);
  EXPECT_EQ(kind_of([&] { model::PoseModel::load(ck); }), ErrorKind::Data);
}

TEST(Train, ConfigValidation) {
  train::TrainConfig t;
  t.lr = 0.0;
  EXPECT_EQ(kind_of([&] { t.validate(); }), ErrorKind::Config);
  t = {};
  t.weights.mode_3d = -1.0;
  EXPECT_EQ(kind_of([&] { t.validate(); }), ErrorKind::Config);
}

TEST(Train, TinyRunLowersNllAndIsDeterministic) {
  const body::BodyModel body(body::default_body_spec());
  data::GenerateConfig g;
  g.count = 400;
  const data::Examples tr = data::make_examples(body, data::generate(body, g));
  g.count = 100;
  g.seed = 1;
  const data::Examples va = data::make_examples(body, data::generate(body, g));

  train::TrainConfig cfg;
  cfg.model = small_model();
  cfg.epochs = 4;
  cfg.lr = 1e-3;
  cfg.data_init = true;
  cfg.init_rows = 256;
  int calls = 0;
  const train::TrainResult a = train::train(body, tr, va, cfg, [&](const train::EpochMetrics&) { ++calls; });
  EXPECT_EQ(calls, 4);
  ASSERT_EQ(a.log.size(), 4u);
  EXPECT_LT(a.log.back().train_nll, a.log.front().train_nll);
  EXPECT_LT(a.log.back().val_nll, a.log.front().val_nll);
  double best = 1e300;
  for (const auto& e : a.log) best = std::min(best, e.val_pa_mpjpe_mm);
  EXPECT_EQ(a.log[a.best_epoch - 1].val_pa_mpjpe_mm, best);
  EXPECT_NEAR(train::validate(a.best, body, va).pa_mpjpe_mm, best, 1e-9);

  const train::TrainResult b = train::train(body, tr, va, cfg);
  EXPECT_EQ(train::metrics_csv(a.log), train::metrics_csv(b.log));
  const std::string csv = train::metrics_csv(a.log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')).find("epoch"), 0u);
}

TEST(Train, ConstantScheduleMatchesNoSchedule) {
  const body::BodyModel body(body::default_body_spec());
  data::GenerateConfig g;
  g.count = 100;
  const data::Examples ex = data::make_examples(body, data::generate(body, g));
  train::TrainConfig cfg;
  cfg.model = small_model();
  cfg.epochs = 2;
  cfg.lr = 1e-3;
  const train::TrainResult plain = train::train(body, ex, ex, cfg);
  cfg.lr_final = cfg.lr;
  const train::TrainResult flat = train::train(body, ex, ex, cfg);
  EXPECT_EQ(train::metrics_csv(plain.log), train::metrics_csv(flat.log));
  cfg.lr_final = 0.0;
  const train::TrainResult decayed = train::train(body, ex, ex, cfg);
  EXPECT_NE(train::metrics_csv(plain.log), train::metrics_csv(decayed.log));
  cfg.lr_final = std::nan("");
  EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::Config);
}

TEST(GradCheck, SuitePasses) {
  const std::vector<gradcheck::CheckResult> results = gradcheck::run_suite();
  ASSERT_FALSE(results.empty());
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed) << r.name << " input " << r.input_error << " param " << r.param_error;
    EXPECT_LT(r.worst(), 1e-4) << r.name;
    EXPECT_GT(r.input_entries + r.param_entries, 0) << r.name;
  }
  const std::string csv = gradcheck::to_csv(results);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "name,input_rel_error,param_rel_error,input_entries,param_entries,passed");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(results.size()) + 1);
}

TEST(GradCheck, ParamCheckOnKnownGradient) {
  ad::Parameter p("p", (ad::Matrix(1, 3) << 0.5, -1.0, 2.0).finished());
  int entries = 0;
  const double err =
      gradcheck::param_check([&](ad::Tape& t) { return ad::sum(ad::square(t.param(p))); }, {&p}, 1e-5, &entries);
  EXPECT_LT(err, 1e-9);
  EXPECT_EQ(entries, 3);
}
