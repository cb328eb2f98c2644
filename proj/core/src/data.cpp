#include "posedist/data.hpp"

#include "posedist/error.hpp"
#include "posedist/rotation.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace posedist::data {

using json = nlohmann::json;
using Vec3 = Eigen::Vector3d;

void GenerateConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::Config, "generate: " + what); };
  if (count < 1) bad("count must be at least 1");
  if (views < 1) bad("views must be at least 1");
  if (!(noise_sigma >= 0.0)) bad("noise_sigma must be non-negative");
  if (!(drop_prob >= 0.0 && drop_prob <= 1.0)) bad("drop_prob must lie in [0, 1]");
  if (!(shape_sigma >= 0.0)) bad("shape_sigma must be non-negative");
  if (!(scale_min > 0.0 && scale_max >= scale_min)) bad("need 0 < scale_min <= scale_max");
  if (!(trans_sigma >= 0.0)) bad("trans_sigma must be non-negative");
  if (!(max_tilt >= 0.0 && max_tilt < std::numbers::pi / 2)) bad("max_tilt must lie in [0, pi/2)");
}

// ---- pose sampler -------------------------------------------------------------

namespace {

// Mixture parameters are part of the task definition, not of a dataset, so
// they come from a fixed stream.
constexpr std::uint64_t kSamplerSeed = 0x9e3779b97f4a7c15ull;
// Small off-axis play at hinges keeps every pose coordinate non-constant.
constexpr double kHingeJitter = 0.03;

int descendants(const body::BodySpec& spec, int j) {
  int n = 0;
  for (int k = j + 1; k < spec.num_joints(); ++k) {
    int p = spec.joints[k].parent;
    while (p > j) p = spec.joints[p].parent;
    if (p == j) ++n;
  }
  return n;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double normal(std::mt19937_64& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

Vec3 normal3(std::mt19937_64& rng) {
  const double x = normal(rng), y = normal(rng), z = normal(rng);
  return Vec3(x, y, z);
}

Eigen::VectorXd pose_from_rotations(const std::vector<Mat3>& rots) {
  Eigen::VectorXd theta(6 * rots.size());
  for (std::size_t j = 0; j < rots.size(); ++j) theta.segment<6>(6 * j) = rotation::rotmat_to_sixd(rots[j]);
  return theta;
}

}  // namespace

PoseSampler::PoseSampler(const body::BodySpec& spec) : spec_(&spec) {
  std::mt19937_64 rng(kSamplerSeed);
  const int J = spec.num_joints();
  components_.resize(kComponents);
  for (auto& comp : components_) {
    comp.mean.assign(J, Vec3::Zero());
    comp.stddev.assign(J, 0.0);
    for (int j = 1; j < J; ++j) {
      const int below = descendants(spec, j);
      if (spec.joints[j].hinge) {
        comp.mean[j].x() = uniform(rng, 0.05, 1.6);
        comp.stddev[j] = 0.2;
      } else if (below == 0) {
        // Leaf rotations move nothing; keep them near rest.
        comp.stddev[j] = 0.1;
      } else if (below > 3) {
        comp.mean[j] = 0.15 * normal3(rng);
        comp.stddev[j] = 0.08;
      } else {
        comp.mean[j] = 0.5 * normal3(rng);
        comp.stddev[j] = 0.15;
      }
    }
  }
}

std::vector<Mat3> PoseSampler::sample_rotations(std::mt19937_64& rng) const {
  const body::BodySpec& spec = *spec_;
  const int J = spec.num_joints();
  const auto k = std::uniform_int_distribution<int>(0, kComponents - 1)(rng);
  const Component& comp = components_[k];
  std::vector<Mat3> rots(J);
  const double heading = uniform(rng, -std::numbers::pi, std::numbers::pi);
  const double tilt_x = 0.1 * normal(rng);
  const double tilt_z = 0.1 * normal(rng);
  rots[0] = rotation::axis_angle(Vec3::UnitY(), heading) * rotation::axis_angle(Vec3::UnitX(), tilt_x) *
            rotation::axis_angle(Vec3::UnitZ(), tilt_z);
  for (int j = 1; j < J; ++j) {
    if (spec.joints[j].hinge) {
      const double bend = std::abs(comp.mean[j].x() + comp.stddev[j] * normal(rng));
      rots[j] = rotation::axis_angle(spec.joints[j].hinge_axis, bend) * rotation::rotation_from_vector(kHingeJitter * normal3(rng));
    } else {
      rots[j] = rotation::rotation_from_vector(comp.mean[j] + comp.stddev[j] * normal3(rng));
    }
  }
  return rots;
}

Eigen::VectorXd PoseSampler::sample(std::mt19937_64& rng) const { return pose_from_rotations(sample_rotations(rng)); }

// ---- generation -------------------------------------------------------------

Dataset generate(const body::BodyModel& model, const GenerateConfig& config) {
  config.validate();
  const body::BodySpec& spec = model.spec();
  const int J = spec.num_joints();
  const int B = spec.shape_dims();
  const PoseSampler sampler(spec);
  std::mt19937_64 rng(config.seed);

  Dataset ds;
  ds.num_joints = J;
  ds.shape_dims = B;
  ds.config = config;
  ds.samples.resize(config.count);
  for (int i = 0; i < config.count; ++i) {
    SyntheticSample& s = ds.samples[i];
    s.id = i;
    s.theta = sampler.sample(rng);
    s.beta.resize(B);
    for (int b = 0; b < B; ++b) s.beta(b) = config.shape_sigma * normal(rng);
    const body::BodyState state = model.forward(s.theta, s.beta);
    s.views.resize(config.views);
    for (View& v : s.views) {
      const double azimuth = uniform(rng, -std::numbers::pi, std::numbers::pi);
      const double elevation = config.max_tilt > 0.0 ? uniform(rng, -config.max_tilt, config.max_tilt) : 0.0;
      v.rotation = rotation::axis_angle(Vec3::UnitX(), elevation) * rotation::axis_angle(Vec3::UnitY(), azimuth);
      v.camera.s = uniform(rng, config.scale_min, config.scale_max);
      v.camera.tx = config.trans_sigma * normal(rng);
      v.camera.ty = config.trans_sigma * normal(rng);
      v.keypoints = body::project(v.rotation * state.joints, v.camera);
      v.confidence = Eigen::VectorXd::Ones(J);
      for (int j = 0; j < J; ++j) {
        const double nu = normal(rng), nv = normal(rng);
        const bool drop = uniform(rng, 0.0, 1.0) < config.drop_prob;
        if (drop) {
          v.keypoints.col(j).setZero();
          v.confidence(j) = 0.0;
        } else {
          v.keypoints(0, j) += config.noise_sigma * nu;
          v.keypoints(1, j) += config.noise_sigma * nv;
        }
      }
    }
  }
  return ds;
}

Eigen::VectorXd view_pose(const SyntheticSample& sample, int view) {
  Eigen::VectorXd theta = sample.theta;
  const Mat3 global = rotation::sixd_to_rotmat(rotation::Vector6(theta.head<6>()));
  theta.head<6>() = rotation::rotmat_to_sixd(sample.views.at(view).rotation * global);
  return theta;
}

Eigen::Matrix3Xd view_joints(const body::BodyModel& model, const SyntheticSample& sample, int view) {
  return sample.views.at(view).rotation * model.forward(sample.theta, sample.beta).joints;
}

Eigen::Matrix2Xd clean_keypoints(const body::BodyModel& model, const SyntheticSample& sample, int view) {
  return body::project(view_joints(model, sample, view), sample.views.at(view).camera);
}

// ---- serialization -------------------------------------------------------------

namespace {

template <typename Derived>
json to_array(const Eigen::DenseBase<Derived>& m) {
  // Row-major flattening.
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(m(i, j));
  return a;
}

[[noreturn]] void bad_data(const std::string& what) { fail(ErrorKind::Data, "dataset: " + what); }

Eigen::MatrixXd from_array(const json& a, Eigen::Index rows, Eigen::Index cols, const char* field) {
  if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != rows * cols)
    bad_data(std::string("field '") + field + "' has the wrong length");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = a[i * cols + j].get<double>();
  return m;
}

json config_json(const GenerateConfig& c) {
  return {{"count", c.count},         {"views", c.views},         {"noise_sigma", c.noise_sigma},
          {"drop_prob", c.drop_prob}, {"shape_sigma", c.shape_sigma}, {"scale_min", c.scale_min},
          {"scale_max", c.scale_max}, {"trans_sigma", c.trans_sigma}, {"max_tilt", c.max_tilt},
          {"seed", c.seed}};
}

GenerateConfig config_from_json(const json& j) {
  GenerateConfig c;
  c.count = j.at("count").get<int>();
  c.views = j.at("views").get<int>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.drop_prob = j.at("drop_prob").get<double>();
  c.shape_sigma = j.at("shape_sigma").get<double>();
  c.scale_min = j.at("scale_min").get<double>();
  c.scale_max = j.at("scale_max").get<double>();
  c.trans_sigma = j.at("trans_sigma").get<double>();
  c.max_tilt = j.at("max_tilt").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string to_jsonl(const Dataset& ds) {
  std::string out;
  json header = {{"format", "posedist-dataset"},
                 {"version", kDatasetVersion},
                 {"num_joints", ds.num_joints},
                 {"shape_dims", ds.shape_dims},
                 {"num_views", ds.num_views()},
                 {"count", ds.samples.size()},
                 {"config", config_json(ds.config)}};
  out += header.dump() + "\n";
  for (const SyntheticSample& s : ds.samples) {
    json views = json::array();
    for (const View& v : s.views) {
      json dropped = json::array();
      for (Eigen::Index j = 0; j < v.confidence.size(); ++j)
        if (v.confidence(j) == 0.0) dropped.push_back(j);
      views.push_back({{"rotation", to_array(v.rotation)},
                       {"camera", {v.camera.s, v.camera.tx, v.camera.ty}},
                       {"keypoints", to_array(v.keypoints.transpose())},
                       {"confidence", to_array(v.confidence.transpose())},
                       {"dropped", dropped}});
    }
    json rec = {{"id", s.id},
                {"theta", to_array(s.theta.transpose())},
                {"beta", to_array(s.beta.transpose())},
                {"views", views}};
    out += rec.dump() + "\n";
  }
  return out;
}

Dataset from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) bad_data("empty input");
  Dataset ds;
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != "posedist-dataset") bad_data("not a posedist dataset");
    const int version = header.at("version").get<int>();
    if (version != kDatasetVersion)
      bad_data("schema version " + std::to_string(version) + " does not match supported version " +
               std::to_string(kDatasetVersion));
    ds.num_joints = header.at("num_joints").get<int>();
    ds.shape_dims = header.at("shape_dims").get<int>();
    ds.config = config_from_json(header.at("config"));
    const int views = header.at("num_views").get<int>();
    const auto count = header.at("count").get<std::size_t>();
    const int J = ds.num_joints;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json rec = json::parse(line);
      SyntheticSample s;
      s.id = rec.at("id").get<int>();
      s.theta = from_array(rec.at("theta"), 6 * J, 1, "theta");
      s.beta = from_array(rec.at("beta"), ds.shape_dims, 1, "beta");
      const json& jv = rec.at("views");
      if (static_cast<int>(jv.size()) != views) bad_data("sample " + std::to_string(s.id) + " has the wrong view count");
      for (const json& v : jv) {
        View view;
        view.rotation = from_array(v.at("rotation"), 3, 3, "rotation");
        const Eigen::MatrixXd cam = from_array(v.at("camera"), 3, 1, "camera");
        view.camera = {cam(0), cam(1), cam(2)};
        view.keypoints = from_array(v.at("keypoints"), J, 2, "keypoints").transpose();
        view.confidence = from_array(v.at("confidence"), J, 1, "confidence");
        s.views.push_back(std::move(view));
      }
      ds.samples.push_back(std::move(s));
    }
    if (ds.samples.size() != count) bad_data("header count does not match the number of records");
  } catch (const json::exception& e) {
    bad_data(std::string("malformed JSON: ") + e.what());
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream f(path);
  if (!f) bad_data("cannot write " + path);
  f << to_jsonl(dataset);
  if (!f) bad_data("write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) bad_data("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_jsonl(ss.str());
}

// ---- examples -----------------------------------------------------------------

Eigen::MatrixXd encode_keypoints(const Eigen::MatrixXd& ku, const Eigen::MatrixXd& kv, const Eigen::MatrixXd& conf) {
  const Eigen::Index J = ku.cols();
  Eigen::MatrixXd x(ku.rows(), 3 * J);
  x.leftCols(J) = ku.cwiseProduct(conf);
  x.middleCols(J, J) = kv.cwiseProduct(conf);
  x.rightCols(J) = conf;
  return x;
}

Examples Examples::subset(const std::vector<int>& rows) const {
  auto pick = [&](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]);
    return out;
  };
  Examples e;
  e.inputs = pick(inputs);
  e.theta = pick(theta);
  e.beta = pick(beta);
  e.joints = pick(joints);
  e.ku = pick(ku);
  e.kv = pick(kv);
  e.conf = pick(conf);
  e.camera = pick(camera);
  for (int r : rows) {
    e.sample_id.push_back(sample_id[r]);
    e.view.push_back(view[r]);
  }
  return e;
}

Examples make_examples(const body::BodyModel& model, const Dataset& dataset, bool clean) {
  const int J = model.num_joints();
  const int B = model.shape_dims();
  if (dataset.num_joints != J || dataset.shape_dims != B)
    fail(ErrorKind::Data, "dataset does not match the body model dimensions");
  const int n = static_cast<int>(dataset.samples.size()) * dataset.num_views();
  Examples e;
  e.theta.resize(n, 6 * J);
  e.beta.resize(n, B);
  e.joints.resize(n, 3 * J);
  e.ku.resize(n, J);
  e.kv.resize(n, J);
  e.conf.resize(n, J);
  e.camera.resize(n, 3);
  int r = 0;
  for (const SyntheticSample& s : dataset.samples) {
    const Eigen::Matrix3Xd world = model.forward(s.theta, s.beta).joints;
    for (int v = 0; v < static_cast<int>(s.views.size()); ++v, ++r) {
      const View& view = s.views[v];
      const Eigen::Matrix3Xd joints = view.rotation * world;
      e.theta.row(r) = view_pose(s, v).transpose();
      e.beta.row(r) = s.beta.transpose();
      e.joints.row(r) = Eigen::Map<const Eigen::RowVectorXd>(joints.data(), 3 * J);
      if (clean) {
        const Eigen::Matrix2Xd kp = body::project(joints, view.camera);
        e.ku.row(r) = kp.row(0);
        e.kv.row(r) = kp.row(1);
        e.conf.row(r).setOnes();
      } else {
        e.ku.row(r) = view.keypoints.row(0);
        e.kv.row(r) = view.keypoints.row(1);
        e.conf.row(r) = view.confidence.transpose();
      }
      e.camera.row(r) << view.camera.s, view.camera.tx, view.camera.ty;
      e.sample_id.push_back(s.id);
      e.view.push_back(v);
    }
  }
  e.inputs = encode_keypoints(e.ku, e.kv, e.conf);
  return e;
}

}  // namespace posedist::data
