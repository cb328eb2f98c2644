#include "posedist/body.hpp"
#include "posedist/data.hpp"
#include "posedist/fit.hpp"
#include "posedist/flow.hpp"
#include "posedist/losses.hpp"
#include "posedist/metrics.hpp"
#include "posedist/model.hpp"
#include "posedist/rotation.hpp"

#include <benchmark/benchmark.h>

using namespace posedist;
using ad::Matrix;

namespace {

flow::CondFlow pose_flow() {
  flow::FlowConfig cfg;
  cfg.dim = 96;
  cfg.context_dim = 128;
  return flow::CondFlow(cfg, 0);
}

model::ModelConfig bench_model() {
  model::ModelConfig m;
  m.encoder_width = 256;
  return m;
}

}  // namespace

static void BM_FlowForward(benchmark::State& state) {
  const flow::CondFlow f = pose_flow();
  nn::Rng rng(0);
  const Matrix z = nn::randn(rng, state.range(0), 96), c = nn::randn(rng, state.range(0), 128);
  for (auto _ : state) benchmark::DoNotOptimize(f.forward(z, c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FlowForward)->Arg(1)->Arg(64)->Arg(1000);

static void BM_FlowInverse(benchmark::State& state) {
  const flow::CondFlow f = pose_flow();
  nn::Rng rng(0);
  const Matrix x = nn::randn(rng, state.range(0), 96), c = nn::randn(rng, state.range(0), 128);
  for (auto _ : state) benchmark::DoNotOptimize(f.inverse(x, c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FlowInverse)->Arg(1)->Arg(64)->Arg(1000);

static void BM_FlowNllBackward(benchmark::State& state) {
  flow::CondFlow f = pose_flow();
  nn::Rng rng(0);
  const Matrix x = nn::randn(rng, 64, 96), c = nn::randn(rng, 64, 128);
  for (auto _ : state) {
    ad::Tape t;
    ad::Var ctx = t.variable(c);
    t.backward(losses::loss_nll(f, t, t.constant(x), ctx));
    benchmark::DoNotOptimize(ctx.grad());
  }
}
BENCHMARK(BM_FlowNllBackward);

static void BM_SixdToRotmat(benchmark::State& state) {
  rotation::Vector6 r;
  r << 1.0, 0.2, -0.1, 0.3, 0.9, 0.4;
  for (auto _ : state) {
    benchmark::DoNotOptimize(rotation::sixd_to_rotmat(r));
    r(0) += 1e-9;
  }
}
BENCHMARK(BM_SixdToRotmat);

static void BM_Procrustes(benchmark::State& state) {
  nn::Rng rng(0);
  const Eigen::Matrix3Xd a = nn::randn(rng, 3, 16), b = nn::randn(rng, 3, 16);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::pa_mpjpe(a, b));
}
BENCHMARK(BM_Procrustes);

static void BM_BodyForward(benchmark::State& state) {
  const body::BodyModel body(body::default_body_spec());
  std::mt19937_64 rng(0);
  const Eigen::VectorXd theta = data::PoseSampler(body.spec()).sample(rng);
  const Eigen::VectorXd beta = Eigen::VectorXd::Zero(body.spec().shape_dims());
  for (auto _ : state) benchmark::DoNotOptimize(body.forward(theta, beta).joints);
}
BENCHMARK(BM_BodyForward);

static void BM_TrainStep(benchmark::State& state) {
  const body::BodyModel body(body::default_body_spec());
  data::GenerateConfig g;
  g.count = 64;
  const data::Examples ex = data::make_examples(body, data::generate(body, g));
  model::PoseModel m(bench_model(), 0);
  for (auto _ : state) {
    ad::Tape t;
    const ad::Var ctx = m.context(t, t.constant(ex.inputs));
    const ad::Var nll = losses::loss_nll(m.flow, t, t.constant(ex.theta), ctx);
    t.backward(nll);
    benchmark::DoNotOptimize(nll.scalar());
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_FitKeypoints(benchmark::State& state) {
  const body::BodyModel body(body::default_body_spec());
  data::GenerateConfig g;
  g.count = 1;
  const data::Examples ex = data::make_examples(body, data::generate(body, g), true);
  const model::PoseModel m(bench_model(), 0);
  fit::Observation obs;
  obs.keypoints.resize(2, ex.num_joints());
  obs.keypoints.row(0) = ex.ku.row(0);
  obs.keypoints.row(1) = ex.kv.row(0);
  obs.confidence = ex.conf.row(0).transpose();
  fit::FitOptions opt;
  opt.optimizer.max_iters = 50;
  for (auto _ : state) benchmark::DoNotOptimize(fit::fit_keypoints(m, body, obs, opt).objective);
}
BENCHMARK(BM_FitKeypoints)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
