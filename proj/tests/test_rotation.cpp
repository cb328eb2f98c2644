#include "posedist/error.hpp"
#include "posedist/rotation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace posedist;
using rotation::Mat3;
using rotation::Vec3;
using rotation::Vector6;

namespace {

Vec3 gauss3(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return Vec3(n(rng), n(rng), n(rng));
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-M_PI, M_PI);
  return rotation::axis_angle(gauss3(rng).normalized(), u(rng));
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

// Brute-force Procrustes: coarse search over axis-angle vectors followed by
// shrinking-step coordinate refinement; scale and translation are solved in
// closed form for each candidate rotation.
double brute_procrustes_residual(const Eigen::Matrix3Xd& P, const Eigen::Matrix3Xd& T) {
  const Vec3 mp = P.rowwise().mean(), mt = T.rowwise().mean();
  const Eigen::Matrix3Xd Pc = P.colwise() - mp, Tc = T.colwise() - mt;
  auto cost = [&](const Vec3& w) {
    const Eigen::Matrix3Xd RP = rotation::rotation_from_vector(w) * Pc;
    const double s = std::max(0.0, (RP.array() * Tc.array()).sum() / Pc.squaredNorm());
    return (s * RP - Tc).norm();
  };
  Vec3 best = Vec3::Zero();
  double best_cost = cost(best);
  const int n = 16;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const Vec3 w = M_PI * (Vec3(i, j, k) * (2.0 / (n - 1)) - Vec3::Ones());
        if (w.norm() > M_PI) continue;
        const double c = cost(w);
        if (c < best_cost) best_cost = c, best = w;
      }
  for (double step = 0.2; step > 1e-10; step *= 0.5) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (int a = 0; a < 3; ++a)
        for (double sgn : {-1.0, 1.0}) {
          Vec3 w = best;
          w(a) += sgn * step;
          const double c = cost(w);
          if (c < best_cost) best_cost = c, best = w, moved = true;
        }
    }
  }
  return best_cost;
}

}  // namespace

TEST(Rotation, SixdExampleGramSchmidt) {
  Vector6 r;
  r << 2, 0, 0, 3, 0, 1;
  const Mat3 R = rotation::sixd_to_rotmat(r);
  EXPECT_LT((R.col(0) - Vec3(1, 0, 0)).norm(), 1e-12);
  EXPECT_LT((R.col(1) - Vec3(0, 0, 1)).norm(), 1e-12);
  EXPECT_LT((R.col(2) - Vec3(0, -1, 0)).norm(), 1e-12);
}

TEST(Rotation, QuarterTurnAboutZ) {
  const Mat3 R = rotation::axis_angle(Vec3::UnitZ(), M_PI / 2);
  Vector6 expected;
  expected << 0, 1, 0, -1, 0, 0;
  EXPECT_LT((rotation::rotmat_to_sixd(R) - expected).norm(), 1e-12);
}

TEST(Rotation, IdentityRoundTrip) {
  Vector6 r;
  r << 1, 0, 0, 0, 1, 0;
  EXPECT_LT(max_abs(rotation::sixd_to_rotmat(r) - Mat3::Identity()), 1e-15);
  EXPECT_EQ(rotation::orth_residual(r), 0.0);
}

TEST(Rotation, OrthResidualExample) {
  Vector6 r;
  r << 2, 0, 0, 0, 1, 0;
  EXPECT_NEAR(rotation::orth_residual(r), 1.0, 1e-12);
}

TEST(Rotation, OutputIsProperRotation) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int i = 0; i < 1000; ++i) {
    Vector6 r;
    for (int k = 0; k < 6; ++k) r(k) = n(rng);
    const Mat3 R = rotation::sixd_to_rotmat(r);
    EXPECT_LT(max_abs(R.transpose() * R - Mat3::Identity()), 1e-6);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-6);
  }
}

TEST(Rotation, PositiveScalingInvariance) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> pos(0.05, 20.0), any(-10.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 x = gauss3(rng), y = gauss3(rng);
    const double a = pos(rng), b = any(rng), g = pos(rng);
    Vector6 r, s;
    r << x, y;
    s << a * x, b * x + g * y;
    EXPECT_LT(max_abs(rotation::sixd_to_rotmat(r) - rotation::sixd_to_rotmat(s)), 1e-9);
  }
}

TEST(Rotation, OrthResidualZeroIffOrthonormal) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const Mat3 R = random_rotation(rng);
    const Vector6 r = rotation::rotmat_to_sixd(R);
    EXPECT_LT(rotation::orth_residual(r), 1e-24);
    EXPECT_LT(max_abs(rotation::sixd_to_rotmat(r) - R), 1e-9);
    Vector6 bent = r;
    bent(4) += 0.01;
    EXPECT_GT(rotation::orth_residual(bent), 1e-6);
  }
}

TEST(Rotation, DegenerateInputsThrow) {
  Vector6 zero_x, collinear;
  zero_x << 0, 0, 0, 0, 1, 0;
  collinear << 1, 2, 3, 2, 4, 6;
  for (const Vector6& r : {zero_x, collinear}) {
    try {
      rotation::sixd_to_rotmat(r);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
    }
    const Mat3 R = rotation::sixd_to_rotmat_regularized(r);
    EXPECT_TRUE(R.allFinite());
  }
}

TEST(Rotation, DifferentiablePathMatchesPlain) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  ad::Matrix rows(5, 6);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows(i) = n(rng);
  ad::Tape t;
  const ad::Matrix R = rotation::sixd_to_rotmat(t.constant(rows)).value();
  const ad::Matrix res = rotation::orth_residual(t.constant(rows)).value();
  ASSERT_EQ(R.rows(), 5);
  ASSERT_EQ(R.cols(), 9);
  for (int i = 0; i < 5; ++i) {
    const Mat3 plain = rotation::sixd_to_rotmat(Vector6(rows.row(i).transpose()));
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) EXPECT_NEAR(R(i, 3 * c + k), plain(k, c), 1e-9);
    EXPECT_NEAR(res(i, 0), rotation::orth_residual(Vector6(rows.row(i).transpose())), 1e-9);
  }
}

TEST(Rotation, DifferentiablePathGradients) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  ad::Matrix rows(3, 6);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows(i) = n(rng);
  const auto rep = ad::finite_diff_check(
      [](ad::Tape& t, const std::vector<ad::Var>& v) {
        ad::Matrix w(3, 9);
        for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = std::sin(1.0 + i);
        return ad::add(ad::sum(ad::mul(rotation::sixd_to_rotmat(v[0]), t.constant(w))),
                       ad::sum(rotation::orth_residual(v[0])));
      },
      {rows}, 1e-5, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.worst();
}

TEST(Rotation, AverageOfIdenticalIsIdentity) {
  const std::vector<Mat3> rs(3, Mat3::Identity());
  EXPECT_LT(max_abs(rotation::average_rotations(rs) - Mat3::Identity()), 1e-12);
}

TEST(Rotation, AverageExample) {
  const std::vector<Mat3> rs = {Mat3::Identity(), Mat3::Identity(), rotation::axis_angle(Vec3::UnitZ(), 0.2)};
  const Mat3 avg = rotation::average_rotations(rs);
  const double angle = std::atan2(std::sin(0.2), 2.0 + std::cos(0.2));
  EXPECT_LT(max_abs(avg - rotation::axis_angle(Vec3::UnitZ(), angle)), 1e-12);
}

TEST(Rotation, AverageSingleAndErrors) {
  std::mt19937_64 rng(6);
  const Mat3 R = random_rotation(rng);
  EXPECT_LT(max_abs(rotation::average_rotations(std::vector<Mat3>{R}) - R), 1e-12);
  EXPECT_THROW(rotation::average_rotations(std::vector<Mat3>{}), Error);
  const Mat3 flip = rotation::axis_angle(Vec3::UnitZ(), M_PI);
  EXPECT_THROW(rotation::average_rotations(std::vector<Mat3>{Mat3::Identity(), flip}), Error);
}

TEST(Rotation, AverageIsProperRotation) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Mat3> rs;
    const Mat3 base = random_rotation(rng);
    for (int i = 0; i < 5; ++i) rs.push_back(base * rotation::rotation_from_vector(0.3 * gauss3(rng)));
    const Mat3 avg = rotation::average_rotations(rs);
    EXPECT_LT(max_abs(avg.transpose() * avg - Mat3::Identity()), 1e-9);
    EXPECT_NEAR(avg.determinant(), 1.0, 1e-9);
  }
}

TEST(Rotation, ProcrustesRecoversSimilarity) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::Matrix3Xd P(3, 16);
    for (int j = 0; j < 16; ++j) P.col(j) = gauss3(rng);
    const Mat3 R = random_rotation(rng);
    const double s = 0.5 + trial * 0.02;
    const Vec3 t = gauss3(rng);
    const Eigen::Matrix3Xd T = ((s * R) * P).colwise() + t;
    const rotation::Alignment a = rotation::procrustes_align(P, T);
    EXPECT_LT(a.residual, 1e-9);
    EXPECT_NEAR(a.transform.scale, s, 1e-9);
    EXPECT_LT(max_abs(a.transform.rotation - R), 1e-9);
    EXPECT_LT((a.transform.translation - t).norm(), 1e-9);
  }
}

TEST(Rotation, ProcrustesMatchesBruteForce) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::Matrix3Xd P(3, 6), T(3, 6);
    for (int j = 0; j < 6; ++j) P.col(j) = gauss3(rng), T.col(j) = gauss3(rng);
    const rotation::Alignment a = rotation::procrustes_align(P, T);
    const double oracle = brute_procrustes_residual(P, T);
    EXPECT_LE(a.residual, oracle + 1e-9);
    EXPECT_NEAR(a.residual, oracle, 1e-6);
    EXPECT_GE(a.transform.rotation.determinant(), 0.0);
    EXPECT_LT(max_abs(a.aligned - (((a.transform.scale * a.transform.rotation) * P).colwise() +
                                   a.transform.translation)),
              1e-12);
  }
}

TEST(Rotation, ProcrustesRejectsDegenerate) {
  Eigen::Matrix3Xd two(3, 2);
  two.setRandom();
  EXPECT_THROW(rotation::procrustes_align(two, two), Error);
  Eigen::Matrix3Xd same(3, 5);
  same.colwise() = Vec3(1, 2, 3);
  try {
    rotation::procrustes_align(same, same);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
  }
}

TEST(Rotation, RodriguesMatchesExponential) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 50; ++i) {
    const Vec3 w = gauss3(rng);
    Mat3 K;
    K << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    // Truncated power series of exp(K) as an independent reference.
    Mat3 term = Mat3::Identity(), sum = Mat3::Identity();
    for (int k = 1; k < 40; ++k) {
      term = term * K / static_cast<double>(k);
      sum += term;
    }
    EXPECT_LT(max_abs(rotation::rotation_from_vector(w) - sum), 1e-10);
  }
  EXPECT_LT(max_abs(rotation::rotation_from_vector(Vec3::Zero()) - Mat3::Identity()), 1e-15);
}
