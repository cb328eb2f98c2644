#include "posedist/data.hpp"
#include "posedist/error.hpp"
#include "posedist/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace posedist;

namespace {

const body::BodyModel& default_body() {
  static const body::BodyModel m(body::default_body_spec());
  return m;
}

data::GenerateConfig small(int count, int views = 1) {
  data::GenerateConfig c;
  c.count = count;
  c.views = views;
  c.seed = 5;
  return c;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Data, NoiselessKeypointsAreExactProjections) {
  data::GenerateConfig c = small(50, 2);
  c.noise_sigma = 0.0;
  c.drop_prob = 0.0;
  const data::Dataset ds = data::generate(default_body(), c);
  ASSERT_EQ(ds.samples.size(), 50u);
  for (const data::SyntheticSample& s : ds.samples)
    for (int v = 0; v < 2; ++v) {
      EXPECT_EQ(max_abs(s.views[v].keypoints - data::clean_keypoints(default_body(), s, v)), 0.0);
      EXPECT_EQ(s.views[v].confidence.minCoeff(), 1.0);
    }
}

TEST(Data, KeypointsAreProjectionsOfRotatedJoints) {
  const data::Dataset ds = data::generate(default_body(), small(20, 3));
  for (const data::SyntheticSample& s : ds.samples) {
    const body::BodyState world = default_body().forward(s.theta, s.beta);
    for (int v = 0; v < 3; ++v) {
      const data::View& view = s.views[v];
      EXPECT_LT(max_abs(view.rotation.transpose() * view.rotation - Eigen::Matrix3d::Identity()), 1e-12);
      const Eigen::Matrix3Xd cam_joints = view.rotation * world.joints;
      EXPECT_LT(max_abs(data::view_joints(default_body(), s, v) - cam_joints), 1e-9);
      // Camera-frame pose reproduces the rotated skeleton.
      EXPECT_LT(max_abs(default_body().forward(data::view_pose(s, v), s.beta).joints - cam_joints), 1e-9);
      const Eigen::Matrix2Xd clean = body::project(cam_joints, view.camera);
      for (int j = 0; j < 16; ++j) {
        if (view.confidence(j) == 0.0) {
          EXPECT_EQ(view.keypoints.col(j).norm(), 0.0);
        } else {
          EXPECT_LT((view.keypoints.col(j) - clean.col(j)).norm(), 8 * 0.01);
        }
      }
    }
  }
}

TEST(Data, AllDroppedWhenProbabilityOne) {
  data::GenerateConfig c = small(20);
  c.drop_prob = 1.0;
  for (const data::SyntheticSample& s : data::generate(default_body(), c).samples)
    EXPECT_EQ(s.views[0].confidence.maxCoeff(), 0.0);
}

TEST(Data, DeterministicUnderSeed) {
  const std::string a = data::to_jsonl(data::generate(default_body(), small(30, 2)));
  const std::string b = data::to_jsonl(data::generate(default_body(), small(30, 2)));
  EXPECT_EQ(a, b);
  data::GenerateConfig other = small(30, 2);
  other.seed = 6;
  EXPECT_NE(a, data::to_jsonl(data::generate(default_body(), other)));
}

TEST(Data, JsonlRoundTrip) {
  const data::Dataset ds = data::generate(default_body(), small(25, 2));
  const std::string text = data::to_jsonl(ds);
  const data::Dataset back = data::from_jsonl(text);
  ASSERT_EQ(back.samples.size(), ds.samples.size());
  EXPECT_EQ(data::to_jsonl(back), text);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    EXPECT_EQ(max_abs(back.samples[i].theta - ds.samples[i].theta), 0.0);
    EXPECT_EQ(max_abs(back.samples[i].views[1].keypoints - ds.samples[i].views[1].keypoints), 0.0);
  }
}

TEST(Data, MalformedFilesRejected) {
  const std::string text = data::to_jsonl(data::generate(default_body(), small(3)));
  auto expect_data_error = [](const std::string& input) {
    try {
      data::from_jsonl(input);
      FAIL() << "accepted: " << input.substr(0, 60);
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Data);
    }
  };
  expect_data_error("");
  expect_data_error("{not json");
  std::string wrong_version = text;
  wrong_version.replace(wrong_version.find("\"version\":1"), 11, "\"version\":9");
  expect_data_error(wrong_version);
  expect_data_error(text.substr(0, text.rfind('\n', text.size() - 2) + 1));  // one record short
  std::string short_theta = text;
  short_theta.replace(short_theta.find("\"theta\":["), 9, "\"theta\":[7,");
  expect_data_error(short_theta);
  EXPECT_THROW(data::load_dataset("/nonexistent/posedist.jsonl"), Error);
}

TEST(Data, ConfigValidation) {
  data::GenerateConfig c;
  c.drop_prob = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.noise_sigma = -1.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.count = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Data, HingeJointsBendOneWay) {
  const body::BodySpec& spec = default_body().spec();
  const data::PoseSampler sampler(spec);
  std::mt19937_64 rng(3);
  const std::vector<int> hinges = spec.hinge_joints();
  ASSERT_FALSE(hinges.empty());
  double bend_sum = 0.0;
  int bends = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::vector<data::Mat3> rs = sampler.sample_rotations(rng);
    for (int j : hinges) {
      const data::Mat3& R = rs[j];
      const Eigen::Vector3d vee(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
      const Eigen::Vector3d axis = spec.joints[j].hinge_axis.normalized();
      // Bends are non-negative about the axis up to a small jitter.
      EXPECT_GE(vee.dot(axis), -0.2);
      EXPECT_LT(vee.cross(axis).norm(), 0.3);
      bend_sum += vee.dot(axis);
      ++bends;
    }
  }
  EXPECT_GT(bend_sum / bends, 0.3);
}

TEST(Data, ExamplesLayout) {
  const data::Dataset ds = data::generate(default_body(), small(10, 2));
  const data::Examples ex = data::make_examples(default_body(), ds);
  ASSERT_EQ(ex.size(), 20);
  EXPECT_EQ(ex.inputs.cols(), 48);
  EXPECT_EQ(ex.theta.cols(), 96);
  EXPECT_EQ(ex.num_joints(), 16);
  EXPECT_LT(max_abs(ex.inputs - data::encode_keypoints(ex.ku, ex.kv, ex.conf)), 1e-15);
  for (int r = 0; r < ex.size(); ++r) {
    const data::SyntheticSample& s = ds.samples[ex.sample_id[r]];
    const int v = ex.view[r];
    EXPECT_LT(max_abs(ex.theta.row(r).transpose() - data::view_pose(s, v)), 1e-15);
    EXPECT_LT(max_abs(metrics::joints_from_row(ex.joints.row(r)) - data::view_joints(default_body(), s, v)),
              1e-12);
  }
  const data::Examples clean = data::make_examples(default_body(), ds, true);
  EXPECT_EQ(clean.conf.minCoeff(), 1.0);
  const data::Examples sub = ex.subset({3, 1});
  ASSERT_EQ(sub.size(), 2);
  EXPECT_EQ(sub.sample_id[0], ex.sample_id[3]);
  EXPECT_EQ(max_abs(sub.inputs.row(1) - ex.inputs.row(1)), 0.0);
}

TEST(Data, EncodedFeaturesMaskDropped) {
  Eigen::MatrixXd u(1, 2), v(1, 2), c(1, 2);
  u << 0.3, 0.7;
  v << -0.1, 0.9;
  c << 1, 0;
  const Eigen::MatrixXd f = data::encode_keypoints(u, v, c);
  ASSERT_EQ(f.cols(), 6);
  EXPECT_EQ(f.row(0), (Eigen::MatrixXd(1, 6) << 0.3, 0.0, -0.1, 0.0, 1, 0).finished().row(0));
}

TEST(Metrics, PythagoreanOffset) {
  const Eigen::Matrix3Xd gt = Eigen::Matrix3Xd::Random(3, 4);
  const Eigen::Matrix3Xd pred = gt.colwise() + Eigen::Vector3d(0.003, 0.004, 0.0);
  EXPECT_NEAR(metrics::mpjpe(pred, gt), 5.0, 1e-9);
}

TEST(Metrics, SingleJointOffset) {
  Eigen::Matrix3Xd gt = Eigen::Matrix3Xd::Random(3, 4);
  Eigen::Matrix3Xd pred = gt;
  pred(2, 3) += 0.008;
  EXPECT_NEAR(metrics::mpjpe(pred, gt), 2.0, 1e-9);
}

TEST(Metrics, ExactMatchIsZero) {
  const Eigen::Matrix3Xd gt = Eigen::Matrix3Xd::Random(3, 16);
  EXPECT_EQ(metrics::mpjpe(gt, gt), 0.0);
  EXPECT_LT(metrics::pa_mpjpe(gt, gt), 1e-9);
}

TEST(Metrics, PaRemovesSimilarity) {
  std::mt19937_64 rng(1);
  const Eigen::Matrix3Xd gt = Eigen::Matrix3Xd::Random(3, 16);
  const Eigen::Matrix3d R = rotation::axis_angle(Eigen::Vector3d(1, 2, 3).normalized(), 0.8);
  const Eigen::Matrix3Xd pred = ((1.7 * R) * gt).colwise() + Eigen::Vector3d(0.5, -1, 2);
  EXPECT_LT(metrics::pa_mpjpe(pred, gt), 1e-9);
  EXPECT_GT(metrics::mpjpe(pred, gt), 1.0);
}

TEST(Metrics, PaEqualsMpjpeOfAlignedSet) {
  Eigen::Matrix3Xd gt = Eigen::Matrix3Xd::Random(3, 10);
  Eigen::Matrix3Xd pred = gt + 0.05 * Eigen::Matrix3Xd::Random(3, 10);
  const rotation::Alignment a = rotation::procrustes_align(pred, gt);
  EXPECT_NEAR(metrics::pa_mpjpe(pred, gt), 1000.0 * (a.aligned - gt).colwise().norm().mean(), 1e-9);
}

// Least-squares alignment minimizes squared distances, not their mean, so a
// single large outlier can leave PA-MPJPE above MPJPE.
TEST(Metrics, PaCanExceedMpjpeForSparseError) {
  Eigen::Matrix3Xd gt = Eigen::Matrix3Xd::Zero(3, 4);
  gt.col(1) << 0.1, 0, 0;
  gt.col(2) << 0, 0.1, 0;
  gt.col(3) << 0, 0, 0.1;
  Eigen::Matrix3Xd pred = gt;
  pred(2, 3) += 0.008;
  EXPECT_NEAR(metrics::mpjpe(pred, gt), 2.0, 1e-12);
  EXPECT_GT(metrics::pa_mpjpe(pred, gt), 2.0);
}

TEST(Metrics, PaBelowMpjpeForRandomPairs) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 0.3);
  for (int i = 0; i < 2000; ++i) {
    Eigen::Matrix3Xd a(3, 16), b(3, 16);
    for (Eigen::Index k = 0; k < a.size(); ++k) a(k) = n(rng), b(k) = n(rng);
    EXPECT_LE(metrics::pa_mpjpe(a, b), metrics::mpjpe(a, b));
  }
}

TEST(Metrics, ShapeMismatchThrows) {
  EXPECT_THROW(metrics::mpjpe(Eigen::Matrix3Xd::Zero(3, 4), Eigen::Matrix3Xd::Zero(3, 5)), Error);
}

TEST(Metrics, MinOfNCurve) {
  const std::vector<std::vector<double>> errors = {{10, 12, 8, 9, 7}, {5, 6, 7, 4, 3}};
  const metrics::MinOfNReport r = metrics::min_of_n_curve(errors, {1, 3, 5}, {0, 1}, {0, 0});
  ASSERT_EQ(r.curve_mm.size(), 3u);
  EXPECT_DOUBLE_EQ(r.curve_mm[0], 7.5);
  EXPECT_DOUBLE_EQ(r.curve_mm[1], 6.5);
  EXPECT_DOUBLE_EQ(r.curve_mm[2], 5.0);
  EXPECT_DOUBLE_EQ(r.per_sample[1][2], 3.0);
  EXPECT_THROW(metrics::min_of_n_curve(errors, {1, 6}, {0, 1}, {0, 0}), Error);
}

TEST(Metrics, ReportSummariesAndCsv) {
  metrics::EvalReport rep;
  Eigen::Matrix3Xd gt = Eigen::Matrix3Xd::Zero(3, 4);
  gt.col(1) << 0.1, 0, 0;
  gt.col(2) << 0, 0.1, 0;
  gt.col(3) << 0, 0, 0.1;
  Eigen::Matrix3Xd off = gt;
  off(2, 3) += 0.008;
  rep.add(0, 0, "mode", off, gt);
  rep.add(1, 0, "mode", gt, gt);
  rep.add(0, 0, "fit", gt, gt);
  const std::vector<metrics::MethodSummary> s = rep.summary();
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].method, "mode");
  EXPECT_EQ(s[0].count, 2);
  EXPECT_NEAR(s[0].mpjpe_mm, 1.0, 1e-9);
  EXPECT_EQ(rep.to_csv(), rep.to_csv());
  EXPECT_NE(rep.to_csv().find("sample_id"), std::string::npos);
}
