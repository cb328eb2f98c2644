#pragma once

// Simplified parametric articulated body.
//
// Every bone j (j >= 1) runs from joint parent(j) to joint j and carries a
// ring-sampled capsule of vertices that moves rigidly with the frame of
// parent(j). Shape coefficients scale bone lengths. Joints are recovered
// from the vertices with a fixed row-stochastic regressor (joints = W * M),
// which by construction equals forward kinematics for every pose and shape.
//
// Pose vectors hold one 6D block per joint: joint 0 is the global rotation,
// joints 1..J-1 the body pose. Forward kinematics is translation free with
// the root at the origin.

#include "posedist/autodiff.hpp"
#include "posedist/rotation.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace posedist::body {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct JointInfo {
  std::string name;
  int parent = -1;
  Vec3 offset = Vec3::Zero();  // rest offset from parent, meters
  bool hinge = false;
  Vec3 hinge_axis = Vec3::Zero();  // local axis of natural (positive) bending
};

struct BodySpec {
  std::vector<JointInfo> joints;
  Eigen::MatrixXd shape_basis;  // J x B; row j scales bone j
  std::vector<int> vertex_bone;
  std::vector<double> vertex_t;  // position along the bone, 0 = parent joint
  Eigen::Matrix3Xd vertex_radial;  // rest-pose offset perpendicular to the bone
  Eigen::MatrixXd regressor;     // J x N

  int num_joints() const { return static_cast<int>(joints.size()); }
  int num_vertices() const { return static_cast<int>(vertex_bone.size()); }
  int shape_dims() const { return static_cast<int>(shape_basis.cols()); }
  int pose_dim() const { return 6 * num_joints(); }
  std::vector<int> hinge_joints() const;

  Eigen::Matrix3Xd template_joints() const;
  Eigen::Matrix3Xd template_vertices() const;

  /// Throws ErrorKind::Data when the tree, basis or regressor is malformed
  /// (parents must precede children, W rows sum to 1, W * template
  /// vertices reproduces the template joints within 1e-6).
  void validate() const;
};

/// Builds a spec from joints and a shape basis, generating capsule
/// vertices (4 rings of 3 points per bone) and the joint regressor.
BodySpec make_body_spec(std::vector<JointInfo> joints, Eigen::MatrixXd shape_basis,
                        double capsule_radius = 0.04);

/// 16-joint human-like tree, 10 shape coefficients.
BodySpec default_body_spec();

std::string to_text(const BodySpec& spec);
BodySpec from_text(const std::string& text);
BodySpec load_body_spec(const std::string& path);
void save_body_spec(const BodySpec& spec, const std::string& path);
/// Path of the bundled default spec file.
std::string default_body_spec_path();

struct BodyState {
  Eigen::Matrix3Xd joints;    // 3 x J
  Eigen::Matrix3Xd vertices;  // 3 x N
};

struct Camera {
  double s = 1.0;
  double tx = 0.0;
  double ty = 0.0;
};

/// Weak perspective: (u, v) = s * (x + tx, y + ty).
Eigen::Matrix2Xd project(const Eigen::Matrix3Xd& points, const Camera& cam);

enum class Strictness { Strict, Regularized };

/// Batched differentiable outputs; rows are samples.
struct BatchState {
  ad::Var joints;    // B x 3J, [x0 y0 z0 x1 ...]
  ad::Var vertices;  // B x 3N
};

struct Projection {
  ad::Var u;  // B x J
  ad::Var v;  // B x J
};

/// Spec plus the constant matrices used by the batched kinematics.
class BodyModel {
 public:
  explicit BodyModel(BodySpec spec);

  const BodySpec& spec() const { return spec_; }
  int num_joints() const { return spec_.num_joints(); }
  int pose_dim() const { return spec_.pose_dim(); }
  int shape_dims() const { return spec_.shape_dims(); }

  /// Strict mode throws on degenerate 6D blocks; both modes throw
  /// ErrorKind::Numeric on non-positive bone lengths.
  BodyState forward(const Eigen::VectorXd& theta, const Eigen::VectorXd& beta,
                    Strictness mode = Strictness::Strict) const;

  /// theta: B x 6J, beta: B x shape_dims. Regularized Gram-Schmidt.
  BatchState forward(const ad::Var& theta, const ad::Var& beta) const;

  /// joints: B x 3J, cam: B x 3 rows [s, tx, ty].
  Projection project(const ad::Var& joints, const ad::Var& cam) const;

  /// Subtracts the root joint: B x 3J -> B x 3J.
  ad::Var root_center(const ad::Var& joints) const;

  /// Rotation of each local joint frame in its parent frame, strict path.
  std::vector<Mat3> local_rotations(const Eigen::VectorXd& theta,
                                    Strictness mode = Strictness::Strict) const;

 private:
  BodySpec spec_;
  std::vector<std::vector<int>> bone_vertices_;  // per bone, vertex indices in order
  std::vector<Eigen::MatrixXd> offset_kernel_;   // per joint, 9 x 3
  std::vector<Eigen::MatrixXd> radial_kernel_;   // per bone, 9 x 3n
  std::vector<Eigen::MatrixXd> base_kernel_;     // per bone, 6 x 3n
  std::vector<Eigen::MatrixXd> compose_left_;    // 3 of 9 x 9
  std::vector<Eigen::MatrixXd> compose_right_;   // 3 of 9 x 9
  Eigen::MatrixXd vertex_order_;  // 3N x 3N permutation (bone order -> spec order), empty if identity
  Eigen::MatrixXd regressor_kernel_;  // 3N x 3J
  Eigen::MatrixXd select_x_, select_y_;  // 3J x J
  Eigen::MatrixXd center_;               // 3J x 3J
};

}  // namespace posedist::body
