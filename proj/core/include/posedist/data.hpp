#pragma once

// Synthetic lifting data: ground-truth pose, shape and per-view cameras
// with noisy, partly dropped 2D keypoints.
//
// Dataset files are JSON lines; docs/dataset_format.md lists the fields.

#include "posedist/body.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace posedist::data {

using Mat3 = Eigen::Matrix3d;

constexpr int kDatasetVersion = 1;

struct GenerateConfig {
  int count = 1000;
  int views = 1;
  double noise_sigma = 0.01;  // image units
  double drop_prob = 0.1;
  double shape_sigma = 1.0;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double trans_sigma = 0.1;
  double max_tilt = 0.2;  // radians of camera elevation
  std::uint64_t seed = 0;

  /// Throws ErrorKind::Config.
  void validate() const;
};

struct View {
  Mat3 rotation = Mat3::Identity();  // world -> camera
  body::Camera camera;
  Eigen::Matrix2Xd keypoints;   // 2 x J, zero where dropped
  Eigen::VectorXd confidence;   // J, 0 where dropped, 1 otherwise
};

struct SyntheticSample {
  int id = 0;
  Eigen::VectorXd theta;  // 6J, world frame
  Eigen::VectorXd beta;
  std::vector<View> views;
};

struct Dataset {
  int num_joints = 0;
  int shape_dims = 0;
  GenerateConfig config;
  std::vector<SyntheticSample> samples;

  int num_views() const { return samples.empty() ? 0 : static_cast<int>(samples.front().views.size()); }
};

/// Fixed 8-component mixture over joint angles. Ball joints draw an
/// axis-angle vector, hinge joints a non-negative bend about their axis.
class PoseSampler {
 public:
  static constexpr int kComponents = 8;

  explicit PoseSampler(const body::BodySpec& spec);
  /// Local rotations for every joint; joint 0 gets a random heading.
  std::vector<Mat3> sample_rotations(std::mt19937_64& rng) const;
  Eigen::VectorXd sample(std::mt19937_64& rng) const;

 private:
  struct Component {
    std::vector<Eigen::Vector3d> mean;  // per joint; hinge joints use mean.x()
    std::vector<double> stddev;
  };
  const body::BodySpec* spec_;
  std::vector<Component> components_;
};

Dataset generate(const body::BodyModel& model, const GenerateConfig& config);

/// Pose with the view rotation folded into the global block.
Eigen::VectorXd view_pose(const SyntheticSample& sample, int view);
/// Ground-truth camera-frame joints (3 x J, root at the origin).
Eigen::Matrix3Xd view_joints(const body::BodyModel& model, const SyntheticSample& sample, int view);
/// Noise-free projections of every joint for a view.
Eigen::Matrix2Xd clean_keypoints(const body::BodyModel& model, const SyntheticSample& sample, int view);

std::string to_jsonl(const Dataset& dataset);
/// Throws ErrorKind::Data on malformed input or a schema-version mismatch.
Dataset from_jsonl(const std::string& text);
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Row-batched per-view training examples (one row per sample and view).
struct Examples {
  Eigen::MatrixXd inputs;  // n x 3J encoder features
  Eigen::MatrixXd theta;   // n x 6J camera-frame pose
  Eigen::MatrixXd beta;    // n x B
  Eigen::MatrixXd joints;  // n x 3J camera-frame joints
  Eigen::MatrixXd ku, kv, conf;  // n x J
  Eigen::MatrixXd camera;  // n x 3 [s, tx, ty]
  std::vector<int> sample_id;
  std::vector<int> view;

  int size() const { return static_cast<int>(inputs.rows()); }
  int num_joints() const { return static_cast<int>(ku.cols()); }
  /// Rows listed in `rows`, in that order.
  Examples subset(const std::vector<int>& rows) const;
};

/// With `clean` the noise-free, fully visible keypoints replace the
/// observed ones.
Examples make_examples(const body::BodyModel& model, const Dataset& dataset, bool clean = false);

/// Encoder features [u * conf, v * conf, conf] for row-batched keypoints.
Eigen::MatrixXd encode_keypoints(const Eigen::MatrixXd& ku, const Eigen::MatrixXd& kv, const Eigen::MatrixXd& conf);

}  // namespace posedist::data
