#include "posedist/rotation.hpp"

#include "posedist/error.hpp"

#include <cmath>

namespace posedist::rotation {

namespace {
constexpr double kDegenerate = 1e-8;
}

Mat3 sixd_to_rotmat(const Vector6& r) {
  if (!r.allFinite()) fail(ErrorKind::Numeric, "sixd_to_rotmat: non-finite input");
  const Vec3 x = r.head<3>();
  const Vec3 y = r.tail<3>();
  const double nx = x.norm();
  if (nx < kDegenerate) fail(ErrorKind::Degenerate, "sixd_to_rotmat: first vector has zero length");
  const Vec3 c1 = x / nx;
  const Vec3 u = y - c1.dot(y) * c1;
  const double nu = u.norm();
  if (nu < kDegenerate) fail(ErrorKind::Degenerate, "sixd_to_rotmat: vectors are collinear");
  const Vec3 c2 = u / nu;
  Mat3 R;
  R.col(0) = c1;
  R.col(1) = c2;
  R.col(2) = c1.cross(c2);
  return R;
}

Mat3 sixd_to_rotmat_regularized(const Vector6& r) {
  const Vec3 x = r.head<3>();
  const Vec3 y = r.tail<3>();
  const Vec3 c1 = x / std::sqrt(x.squaredNorm() + kTrainingEps);
  const Vec3 u = y - c1.dot(y) * c1;
  const Vec3 c2 = u / std::sqrt(u.squaredNorm() + kTrainingEps);
  Mat3 R;
  R.col(0) = c1;
  R.col(1) = c2;
  R.col(2) = c1.cross(c2);
  return R;
}

Vector6 rotmat_to_sixd(const Mat3& R) {
  Vector6 r;
  r << R.col(0), R.col(1);
  return r;
}

double orth_residual(const Vector6& r) { return (r - rotmat_to_sixd(sixd_to_rotmat(r))).squaredNorm(); }

Mat3 average_rotations(std::span<const Mat3> rotations) {
  if (rotations.empty()) fail(ErrorKind::Degenerate, "average_rotations: empty list");
  Mat3 mean = Mat3::Zero();
  for (const Mat3& R : rotations) mean += R;
  mean /= static_cast<double>(rotations.size());
  Eigen::JacobiSVD<Mat3> svd(mean, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (sv(2) <= 1e-10 * std::max(sv(0), 1e-300))
    fail(ErrorKind::Degenerate, "average_rotations: rank-deficient mean");
  Mat3 D = Mat3::Identity();
  D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * D * svd.matrixV().transpose();
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Mat3 rotation_from_vector(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-15) return Mat3::Identity();
  return axis_angle(omega / angle, angle);
}

Alignment procrustes_align(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& target) {
  if (pred.cols() != target.cols())
    fail(ErrorKind::Shape, "procrustes_align: point counts differ");
  if (pred.cols() < 3) fail(ErrorKind::Degenerate, "procrustes_align: need at least 3 points");
  const double n = static_cast<double>(pred.cols());
  const Vec3 mu_p = pred.rowwise().mean();
  const Vec3 mu_t = target.rowwise().mean();
  const Eigen::Matrix3Xd pc = pred.colwise() - mu_p;
  const Eigen::Matrix3Xd tc = target.colwise() - mu_t;
  const double var_p = pc.squaredNorm() / n;
  if (var_p < 1e-18) fail(ErrorKind::Degenerate, "procrustes_align: all points coincide");

  const Mat3 cov = tc * pc.transpose() / n;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 S = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) S(2, 2) = -1.0;

  Alignment out;
  out.transform.rotation = svd.matrixU() * S * svd.matrixV().transpose();
  out.transform.scale = (svd.singularValues().asDiagonal() * S).trace() / var_p;
  out.transform.translation = mu_t - out.transform.scale * out.transform.rotation * mu_p;
  out.aligned = (out.transform.scale * out.transform.rotation * pred).colwise() + out.transform.translation;
  out.residual = (out.aligned - target).norm();
  return out;
}

// ---- differentiable ---------------------------------------------------------------

namespace {

using ad::Var;

Var safe_norm(const Var& v) { return ad::sqrt(ad::add_scalar(ad::row_sum(ad::square(v)), kTrainingEps)); }

// Cyclic column permutations used by the cross product: [a1 a2 a0] and [a2 a0 a1].
const ad::Matrix& perm_yzx() {
  static const ad::Matrix P = [] {
    ad::Matrix m = ad::Matrix::Zero(3, 3);
    m(1, 0) = m(2, 1) = m(0, 2) = 1.0;
    return m;
  }();
  return P;
}

const ad::Matrix& perm_zxy() {
  static const ad::Matrix P = [] {
    ad::Matrix m = ad::Matrix::Zero(3, 3);
    m(2, 0) = m(0, 1) = m(1, 2) = 1.0;
    return m;
  }();
  return P;
}

Var cross_rows(const Var& a, const Var& b) {
  ad::Tape& t = a.tape();
  const Var yzx = t.constant(perm_yzx());
  const Var zxy = t.constant(perm_zxy());
  return ad::sub(ad::mul(ad::matmul(a, yzx), ad::matmul(b, zxy)),
                 ad::mul(ad::matmul(a, zxy), ad::matmul(b, yzx)));
}

struct Frame {
  Var c1, c2;
};

Frame gram_schmidt(const Var& sixd) {
  if (sixd.cols() != 6) fail(ErrorKind::Shape, "sixd_to_rotmat: expected n x 6 input");
  const Var x = ad::cols(sixd, 0, 3);
  const Var y = ad::cols(sixd, 3, 3);
  const Var c1 = ad::mul(x, ad::reciprocal(safe_norm(x)));
  const Var u = ad::sub(y, ad::mul(c1, ad::row_sum(ad::mul(c1, y))));
  const Var c2 = ad::mul(u, ad::reciprocal(safe_norm(u)));
  return {c1, c2};
}

}  // namespace

Var sixd_to_rotmat(const Var& sixd) {
  const Frame f = gram_schmidt(sixd);
  return ad::concat({f.c1, f.c2, cross_rows(f.c1, f.c2)}, ad::Axis::Cols);
}

Var orth_residual(const Var& sixd) {
  const Frame f = gram_schmidt(sixd);
  return ad::row_sum(ad::square(ad::sub(sixd, ad::concat({f.c1, f.c2}, ad::Axis::Cols))));
}

}  // namespace posedist::rotation
