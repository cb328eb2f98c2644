#pragma once

// 6D rotation representation, orthonormalization, rotation averaging and
// similarity (Procrustes) alignment.
//
// A 6D vector r = [x, y] holds the first two columns of a rotation matrix.
// sixd_to_rotmat orthonormalizes with Gram-Schmidt, so any [a*x, b*x + c*y]
// with a, c > 0 maps to the same rotation.

#include "posedist/autodiff.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace posedist::rotation {

using Vector6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// Strict conversion; throws ErrorKind::Degenerate when |x| < 1e-8 or the
/// component of y orthogonal to x is shorter than 1e-8.
Mat3 sixd_to_rotmat(const Vector6& r);
Vector6 rotmat_to_sixd(const Mat3& R);
/// Squared distance from r to its orthonormal representative.
double orth_residual(const Vector6& r);
/// Never throws: norms are sqrt(|v|^2 + 1e-12), matching the differentiable
/// path below.
Mat3 sixd_to_rotmat_regularized(const Vector6& r);

/// Arithmetic mean projected to SO(3) through the SVD. Throws on an empty
/// list or a rank-deficient mean.
Mat3 average_rotations(std::span<const Mat3> rotations);

/// Rotation about a unit axis (Rodrigues).
Mat3 axis_angle(const Vec3& axis, double angle);
/// Rotation from an axis-angle vector (direction = axis, norm = angle).
Mat3 rotation_from_vector(const Vec3& omega);

struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

struct Alignment {
  Eigen::Matrix3Xd aligned;
  Similarity transform;
  double residual = 0.0;  // Frobenius norm of aligned - target
};

/// Similarity transform s R p + t minimizing |s R pred + t - target|_F.
/// Points are columns. Throws when pred has fewer than 3 points or all
/// points coincide.
Alignment procrustes_align(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& target);

// ---- differentiable (training path) ------------------------------------------
//
// Norms are computed as sqrt(|v|^2 + 1e-12) so gradients exist near
// degenerate inputs; nothing throws.

constexpr double kTrainingEps = 1e-12;

/// n x 6 rows of 6D vectors -> n x 9 rows [c1, c2, c3] (rotation columns).
ad::Var sixd_to_rotmat(const ad::Var& sixd);
/// n x 6 -> n x 1 squared residual to the orthonormal representative.
ad::Var orth_residual(const ad::Var& sixd);

}  // namespace posedist::rotation
