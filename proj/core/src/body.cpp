#include "posedist/body.hpp"

#include "posedist/error.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace posedist::body {

namespace {

constexpr int kRings = 4;
constexpr int kRingPoints = 3;
constexpr int kTextVersion = 1;

[[noreturn]] void data_error(const std::string& what) { fail(ErrorKind::Data, "body spec: " + what); }

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::vector<int> BodySpec::hinge_joints() const {
  std::vector<int> out;
  for (int j = 0; j < num_joints(); ++j)
    if (joints[j].hinge) out.push_back(j);
  return out;
}

Eigen::Matrix3Xd BodySpec::template_joints() const {
  Eigen::Matrix3Xd out(3, num_joints());
  for (int j = 0; j < num_joints(); ++j)
    out.col(j) = joints[j].parent < 0 ? Vec3::Zero() : Vec3(out.col(joints[j].parent) + joints[j].offset);
  return out;
}

Eigen::Matrix3Xd BodySpec::template_vertices() const {
  const Eigen::Matrix3Xd tj = template_joints();
  Eigen::Matrix3Xd out(3, num_vertices());
  for (int v = 0; v < num_vertices(); ++v) {
    const int bone = vertex_bone[v];
    out.col(v) = tj.col(joints[bone].parent) + vertex_t[v] * joints[bone].offset + vertex_radial.col(v);
  }
  return out;
}

void BodySpec::validate() const {
  const int J = num_joints();
  if (J < 2) data_error("need at least 2 joints");
  if (joints[0].parent != -1) data_error("joint 0 must be the root (parent -1)");
  for (int j = 1; j < J; ++j) {
    if (joints[j].parent < 0 || joints[j].parent >= j)
      data_error("joint " + std::to_string(j) + " parent must precede it");
    if (joints[j].offset.norm() < 1e-9) data_error("bone " + std::to_string(j) + " has zero length");
  }
  for (int j = 0; j < J; ++j)
    if (joints[j].hinge && std::abs(joints[j].hinge_axis.norm() - 1.0) > 1e-9)
      data_error("hinge axis of joint " + std::to_string(j) + " must be unit length");
  if (shape_basis.rows() != J) data_error("shape basis must have one row per joint");
  const int N = num_vertices();
  if (static_cast<int>(vertex_t.size()) != N || vertex_radial.cols() != N)
    data_error("vertex arrays have inconsistent lengths");
  for (int v = 0; v < N; ++v)
    if (vertex_bone[v] < 1 || vertex_bone[v] >= J) data_error("vertex " + std::to_string(v) + " has invalid bone");
  if (regressor.rows() != J || regressor.cols() != N) data_error("regressor must be J x N");
  for (int j = 0; j < J; ++j)
    if (std::abs(regressor.row(j).sum() - 1.0) > 1e-9) data_error("regressor row " + std::to_string(j) + " does not sum to 1");
  const Eigen::Matrix3Xd recon = template_vertices() * regressor.transpose();
  if ((recon - template_joints()).cwiseAbs().maxCoeff() > 1e-6)
    data_error("regressor does not reproduce the template joints");
}

BodySpec make_body_spec(std::vector<JointInfo> joints, Eigen::MatrixXd shape_basis, double capsule_radius) {
  BodySpec spec;
  spec.joints = std::move(joints);
  spec.shape_basis = std::move(shape_basis);
  const int J = spec.num_joints();
  if (J < 2) data_error("need at least 2 joints");

  const int per_bone = kRings * kRingPoints;
  const int N = per_bone * (J - 1);
  spec.vertex_bone.reserve(N);
  spec.vertex_t.reserve(N);
  spec.vertex_radial.resize(3, N);
  spec.regressor = Eigen::MatrixXd::Zero(J, N);

  int v = 0;
  for (int bone = 1; bone < J; ++bone) {
    const Vec3 dir = spec.joints[bone].offset.normalized();
    Eigen::Index helper = 0;
    dir.cwiseAbs().minCoeff(&helper);
    const Vec3 ea = dir.cross(Vec3::Unit(helper)).normalized();
    const Vec3 eb = dir.cross(ea);
    for (int ring = 0; ring < kRings; ++ring) {
      for (int k = 0; k < kRingPoints; ++k, ++v) {
        const double phi = 2.0 * std::numbers::pi * k / kRingPoints;
        spec.vertex_bone.push_back(bone);
        spec.vertex_t.push_back(static_cast<double>(ring) / (kRings - 1));
        spec.vertex_radial.col(v) = capsule_radius * (std::cos(phi) * ea + std::sin(phi) * eb);
        // Ring centers sit on the joints; the last ring of each bone
        // regresses its child joint.
        if (ring == kRings - 1) spec.regressor(bone, v) = 1.0 / kRingPoints;
      }
    }
  }
  // Root: first ring of its first child bone.
  for (int bone = 1; bone < J; ++bone) {
    if (spec.joints[bone].parent != 0) continue;
    const int first = per_bone * (bone - 1);
    for (int k = 0; k < kRingPoints; ++k) spec.regressor(0, first + k) = 1.0 / kRingPoints;
    break;
  }
  spec.validate();
  return spec;
}

BodySpec default_body_spec() {
  auto J = [](const char* name, int parent, double x, double y, double z) {
    JointInfo j;
    j.name = name;
    j.parent = parent;
    j.offset = Vec3(x, y, z);
    return j;
  };
  auto hinge = [](JointInfo j, double ax, double ay, double az) {
    j.hinge = true;
    j.hinge_axis = Vec3(ax, ay, az);
    return j;
  };
  // y up, facing +z. Elbows fold the forearm forward, knees fold the shin back.
  std::vector<JointInfo> joints = {
      J("pelvis", -1, 0.0, 0.0, 0.0),
      J("spine", 0, 0.0, 0.24, 0.0),
      J("thorax", 1, 0.0, 0.26, 0.0),
      J("head", 2, 0.0, 0.22, 0.0),
      J("l_shoulder", 2, 0.17, 0.0, 0.0),
      hinge(J("l_elbow", 4, 0.28, 0.0, 0.0), 0.0, -1.0, 0.0),
      J("l_wrist", 5, 0.25, 0.0, 0.0),
      J("r_shoulder", 2, -0.17, 0.0, 0.0),
      hinge(J("r_elbow", 7, -0.28, 0.0, 0.0), 0.0, 1.0, 0.0),
      J("r_wrist", 8, -0.25, 0.0, 0.0),
      J("l_hip", 0, 0.10, -0.06, 0.0),
      hinge(J("l_knee", 10, 0.0, -0.42, 0.0), 1.0, 0.0, 0.0),
      J("l_ankle", 11, 0.0, -0.41, 0.0),
      J("r_hip", 0, -0.10, -0.06, 0.0),
      hinge(J("r_knee", 13, 0.0, -0.42, 0.0), 1.0, 0.0, 0.0),
      J("r_ankle", 14, 0.0, -0.41, 0.0),
  };

  // Columns: overall size, legs, arms, torso, head, left/right asymmetry,
  // upper vs lower arm, thigh vs shin, shoulder width, hip width.
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(16, 10);
  basis.col(0).tail(15).setConstant(0.05);
  for (int j : {11, 12, 14, 15}) basis(j, 1) = 0.06;
  for (int j : {5, 6, 8, 9}) basis(j, 2) = 0.06;
  for (int j : {1, 2}) basis(j, 3) = 0.05;
  basis(3, 4) = 0.05;
  for (int j : {4, 5, 6, 10, 11, 12}) basis(j, 5) = 0.02;
  for (int j : {7, 8, 9, 13, 14, 15}) basis(j, 5) = -0.02;
  basis(5, 6) = basis(8, 6) = 0.04;
  basis(6, 6) = basis(9, 6) = -0.04;
  basis(11, 7) = basis(14, 7) = 0.04;
  basis(12, 7) = basis(15, 7) = -0.04;
  basis(4, 8) = basis(7, 8) = 0.06;
  basis(10, 9) = basis(13, 9) = 0.06;
  return make_body_spec(std::move(joints), std::move(basis));
}

// ---- text format ----------------------------------------------------------------

std::string to_text(const BodySpec& spec) {
  std::ostringstream os;
  os << "# posedist body spec\n";
  os << "# joint <index> <name> <parent> <offset x y z> [hinge <axis x y z>]\n";
  os << "# basis <joint> <shape_dims coefficients>\n";
  os << "# vertex <index> <bone> <t> <radial x y z>\n";
  os << "# regressor <joint> <vertex> <weight>   (entries not listed are 0)\n";
  os << "version " << kTextVersion << "\n";
  os << "joints " << spec.num_joints() << "\n";
  os << "shape_dims " << spec.shape_dims() << "\n";
  os << "vertices " << spec.num_vertices() << "\n";
  for (int j = 0; j < spec.num_joints(); ++j) {
    const JointInfo& info = spec.joints[j];
    os << "joint " << j << " " << info.name << " " << info.parent << " " << num(info.offset.x()) << " "
       << num(info.offset.y()) << " " << num(info.offset.z());
    if (info.hinge)
      os << " hinge " << num(info.hinge_axis.x()) << " " << num(info.hinge_axis.y()) << " " << num(info.hinge_axis.z());
    os << "\n";
  }
  for (int j = 0; j < spec.num_joints(); ++j) {
    os << "basis " << j;
    for (int b = 0; b < spec.shape_dims(); ++b) os << " " << num(spec.shape_basis(j, b));
    os << "\n";
  }
  for (int v = 0; v < spec.num_vertices(); ++v) {
    os << "vertex " << v << " " << spec.vertex_bone[v] << " " << num(spec.vertex_t[v]) << " "
       << num(spec.vertex_radial(0, v)) << " " << num(spec.vertex_radial(1, v)) << " " << num(spec.vertex_radial(2, v)) << "\n";
  }
  for (int j = 0; j < spec.num_joints(); ++j)
    for (int v = 0; v < spec.num_vertices(); ++v)
      if (spec.regressor(j, v) != 0.0) os << "regressor " << j << " " << v << " " << num(spec.regressor(j, v)) << "\n";
  return os.str();
}

BodySpec from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int version = -1, J = -1, B = -1, N = -1;
  BodySpec spec;
  int line_no = 0;
  auto need_header = [&] {
    if (J < 0 || B < 0 || N < 0) data_error("joints/shape_dims/vertices must precede table rows");
    if (static_cast<int>(spec.joints.size()) != J) {
      spec.joints.resize(J);
      spec.shape_basis = Eigen::MatrixXd::Zero(J, B);
      spec.vertex_bone.assign(N, 0);
      spec.vertex_t.assign(N, 0.0);
      spec.vertex_radial = Eigen::Matrix3Xd::Zero(3, N);
      spec.regressor = Eigen::MatrixXd::Zero(J, N);
    }
  };
  auto index_ok = [&](int i, int n, const char* what) {
    if (i < 0 || i >= n) data_error(std::string(what) + " index out of range on line " + std::to_string(line_no));
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    bool ok = true;
    if (key == "version") {
      ls >> version;
      if (version != kTextVersion) data_error("unsupported version " + std::to_string(version));
    } else if (key == "joints") {
      ls >> J;
    } else if (key == "shape_dims") {
      ls >> B;
    } else if (key == "vertices") {
      ls >> N;
    } else if (key == "joint") {
      need_header();
      int j;
      JointInfo info;
      ls >> j >> info.name >> info.parent >> info.offset.x() >> info.offset.y() >> info.offset.z();
      ok = !ls.fail();
      std::string tag;
      if (ok && (ls >> tag)) {
        if (tag != "hinge") data_error("unexpected token '" + tag + "' on line " + std::to_string(line_no));
        info.hinge = true;
        ls >> info.hinge_axis.x() >> info.hinge_axis.y() >> info.hinge_axis.z();
        ok = !ls.fail();
      }
      index_ok(j, J, "joint");
      spec.joints[j] = info;
    } else if (key == "basis") {
      need_header();
      int j;
      ls >> j;
      index_ok(j, J, "joint");
      for (int b = 0; b < B; ++b) ls >> spec.shape_basis(j, b);
      ok = !ls.fail();
    } else if (key == "vertex") {
      need_header();
      int v;
      ls >> v;
      index_ok(v, N, "vertex");
      ls >> spec.vertex_bone[v] >> spec.vertex_t[v] >> spec.vertex_radial(0, v) >> spec.vertex_radial(1, v) >>
          spec.vertex_radial(2, v);
      ok = !ls.fail();
    } else if (key == "regressor") {
      need_header();
      int j, v;
      double w;
      ls >> j >> v >> w;
      ok = !ls.fail();
      index_ok(j, J, "joint");
      index_ok(v, N, "vertex");
      spec.regressor(j, v) = w;
    } else {
      data_error("unknown key '" + key + "' on line " + std::to_string(line_no));
    }
    if (!ok) data_error("malformed line " + std::to_string(line_no));
  }
  if (version < 0) data_error("missing version");
  need_header();
  spec.validate();
  return spec;
}

BodySpec load_body_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) data_error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

void save_body_spec(const BodySpec& spec, const std::string& path) {
  std::ofstream f(path);
  if (!f) data_error("cannot write " + path);
  f << to_text(spec);
}

std::string default_body_spec_path() {
  // Source tree first, so a build never picks up a stale installed copy.
  const std::string in_tree = std::string(POSEDIST_DATA_DIR) + "/body16.txt";
  if (std::filesystem::exists(in_tree)) return in_tree;
  return std::string(POSEDIST_INSTALL_DATA_DIR) + "/body16.txt";
}

Eigen::Matrix2Xd project(const Eigen::Matrix3Xd& points, const Camera& cam) {
  Eigen::Matrix2Xd out(2, points.cols());
  out.row(0) = cam.s * (points.row(0).array() + cam.tx);
  out.row(1) = cam.s * (points.row(1).array() + cam.ty);
  return out;
}

// ---- BodyModel ----------------------------------------------------------------------

BodyModel::BodyModel(BodySpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const int J = spec_.num_joints();
  const int N = spec_.num_vertices();

  bone_vertices_.resize(J);
  for (int v = 0; v < N; ++v) bone_vertices_[spec_.vertex_bone[v]].push_back(v);

  offset_kernel_.resize(J);
  radial_kernel_.resize(J);
  base_kernel_.resize(J);
  for (int j = 1; j < J; ++j) {
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(9, 3);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 3; ++i) K(3 * c + i, i) = spec_.joints[j].offset(c);
    offset_kernel_[j] = K;

    const auto& verts = bone_vertices_[j];
    const int n = static_cast<int>(verts.size());
    Eigen::MatrixXd Kr = Eigen::MatrixXd::Zero(9, 3 * n);
    Eigen::MatrixXd Kb = Eigen::MatrixXd::Zero(6, 3 * n);
    for (int k = 0; k < n; ++k) {
      const int v = verts[k];
      for (int i = 0; i < 3; ++i) {
        for (int c = 0; c < 3; ++c) Kr(3 * c + i, 3 * k + i) = spec_.vertex_radial(c, v);
        Kb(i, 3 * k + i) = 1.0;
        Kb(3 + i, 3 * k + i) = spec_.vertex_t[v];
      }
    }
    radial_kernel_[j] = Kr;
    base_kernel_[j] = Kb;
  }

  for (int k = 0; k < 3; ++k) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(9, 9);
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(9, 9);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 3; ++i) {
        P(3 * k + i, 3 * c + i) = 1.0;
        Q(3 * c + k, 3 * c + i) = 1.0;
      }
    compose_left_.push_back(P);
    compose_right_.push_back(Q);
  }

  std::vector<int> order;
  for (int j = 1; j < J; ++j) order.insert(order.end(), bone_vertices_[j].begin(), bone_vertices_[j].end());
  bool identity = true;
  for (int k = 0; k < N; ++k) identity = identity && order[k] == k;
  if (!identity) {
    vertex_order_ = Eigen::MatrixXd::Zero(3 * N, 3 * N);
    for (int k = 0; k < N; ++k)
      for (int i = 0; i < 3; ++i) vertex_order_(3 * k + i, 3 * order[k] + i) = 1.0;
  }

  regressor_kernel_ = Eigen::MatrixXd::Zero(3 * N, 3 * J);
  for (int j = 0; j < J; ++j)
    for (int v = 0; v < N; ++v)
      for (int i = 0; i < 3; ++i) regressor_kernel_(3 * v + i, 3 * j + i) = spec_.regressor(j, v);

  select_x_ = Eigen::MatrixXd::Zero(3 * J, J);
  select_y_ = Eigen::MatrixXd::Zero(3 * J, J);
  center_ = Eigen::MatrixXd::Identity(3 * J, 3 * J);
  for (int j = 0; j < J; ++j) {
    select_x_(3 * j, j) = 1.0;
    select_y_(3 * j + 1, j) = 1.0;
    for (int i = 0; i < 3; ++i) center_(i, 3 * j + i) -= 1.0;
  }
}

std::vector<Mat3> BodyModel::local_rotations(const Eigen::VectorXd& theta, Strictness mode) const {
  const int J = num_joints();
  if (theta.size() != 6 * J)
    fail(ErrorKind::Shape, "forward_model: pose has " + std::to_string(theta.size()) + " entries, expected " +
                               std::to_string(6 * J));
  std::vector<Mat3> R(J);
  for (int j = 0; j < J; ++j) {
    const rotation::Vector6 r = theta.segment<6>(6 * j);
    R[j] = mode == Strictness::Strict ? rotation::sixd_to_rotmat(r) : rotation::sixd_to_rotmat_regularized(r);
  }
  return R;
}

BodyState BodyModel::forward(const Eigen::VectorXd& theta, const Eigen::VectorXd& beta, Strictness mode) const {
  const int J = num_joints();
  if (beta.size() != shape_dims())
    fail(ErrorKind::Shape, "forward_model: shape vector has " + std::to_string(beta.size()) +
                               " entries, expected " + std::to_string(shape_dims()));
  const std::vector<Mat3> R = local_rotations(theta, mode);
  const Eigen::VectorXd scale = Eigen::VectorXd::Ones(J) + spec_.shape_basis * beta;

  std::vector<Mat3> G(J);
  Eigen::Matrix3Xd pos(3, J);
  G[0] = R[0];
  pos.col(0).setZero();
  for (int j = 1; j < J; ++j) {
    if (!(scale(j) > 0.0)) fail(ErrorKind::Numeric, "forward_model: non-positive length for bone " + std::to_string(j));
    const int p = spec_.joints[j].parent;
    G[j] = G[p] * R[j];
    pos.col(j) = pos.col(p) + scale(j) * (G[p] * spec_.joints[j].offset);
  }

  BodyState out;
  out.vertices.resize(3, spec_.num_vertices());
  for (int v = 0; v < spec_.num_vertices(); ++v) {
    const int bone = spec_.vertex_bone[v];
    const int p = spec_.joints[bone].parent;
    out.vertices.col(v) =
        pos.col(p) + G[p] * (spec_.vertex_t[v] * scale(bone) * spec_.joints[bone].offset + spec_.vertex_radial.col(v));
  }
  out.joints = out.vertices * spec_.regressor.transpose();
  return out;
}

BatchState BodyModel::forward(const ad::Var& theta, const ad::Var& beta) const {
  using ad::Var;
  ad::Tape& t = theta.tape();
  const int J = num_joints();
  const ad::Index B = theta.rows();
  if (theta.cols() != 6 * J || beta.cols() != shape_dims() || beta.rows() != B)
    fail(ErrorKind::Shape, "forward_model: expected theta B x " + std::to_string(6 * J) + " and beta B x " +
                               std::to_string(shape_dims()));

  const Var rot = ad::reshape(rotation::sixd_to_rotmat(ad::reshape(theta, B * J, 6)), B, 9 * J);
  const Var scale = ad::add_scalar(ad::matmul(beta, t.constant(spec_.shape_basis.transpose())), 1.0);
  if ((scale.value().rightCols(J - 1).array() <= 0.0).any())
    fail(ErrorKind::Numeric, "forward_model: non-positive bone length");

  std::vector<Var> G(J), pos(J), bone_verts;
  G[0] = ad::cols(rot, 0, 9);
  pos[0] = t.constant(ad::Matrix::Zero(B, 3));
  for (int j = 1; j < J; ++j) {
    const int p = spec_.joints[j].parent;
    const Var d = ad::mul(ad::matmul(G[p], t.constant(offset_kernel_[j])), ad::cols(scale, j, 1));
    pos[j] = ad::add(pos[p], d);

    const Var Rj = ad::cols(rot, 9 * j, 9);
    Var composed;
    for (int k = 0; k < 3; ++k) {
      const Var term = ad::mul(ad::matmul(G[p], t.constant(compose_left_[k])),
                               ad::matmul(Rj, t.constant(compose_right_[k])));
      composed = k == 0 ? term : ad::add(composed, term);
    }
    G[j] = composed;

    if (!bone_vertices_[j].empty()) {
      const Var base = ad::matmul(ad::concat({pos[p], d}, ad::Axis::Cols), t.constant(base_kernel_[j]));
      bone_verts.push_back(ad::add(base, ad::matmul(G[p], t.constant(radial_kernel_[j]))));
    }
  }

  Var vertices = ad::concat(bone_verts, ad::Axis::Cols);
  if (vertex_order_.size() > 0) vertices = ad::matmul(vertices, t.constant(vertex_order_));
  return {ad::matmul(vertices, t.constant(regressor_kernel_)), vertices};
}

Projection BodyModel::project(const ad::Var& joints, const ad::Var& cam) const {
  ad::Tape& t = joints.tape();
  if (cam.cols() != 3 || cam.rows() != joints.rows()) fail(ErrorKind::Shape, "project: camera must be B x 3");
  const ad::Var s = ad::cols(cam, 0, 1);
  const ad::Var x = ad::matmul(joints, t.constant(select_x_));
  const ad::Var y = ad::matmul(joints, t.constant(select_y_));
  return {ad::mul(ad::add(x, ad::cols(cam, 1, 1)), s), ad::mul(ad::add(y, ad::cols(cam, 2, 1)), s)};
}

ad::Var BodyModel::root_center(const ad::Var& joints) const {
  return ad::matmul(joints, joints.tape().constant(center_));
}

}  // namespace posedist::body
