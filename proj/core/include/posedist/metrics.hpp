#pragma once

// Joint-error metrics in millimeters and evaluation reports.

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace posedist::metrics {

/// Mean per-joint Euclidean distance times 1000. Both sets are taken as
/// given; the kinematics already puts the root at the origin. Throws
/// ErrorKind::Shape on mismatched sizes.
double mpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt);
/// mpjpe after similarity alignment of pred onto gt.
double pa_mpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt);

/// Unpacks a row [x0 y0 z0 x1 ...] into 3 x J.
Eigen::Matrix3Xd joints_from_row(const Eigen::RowVectorXd& row);

struct EvalRow {
  int sample_id = 0;
  int view = 0;
  std::string method;
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
};

struct MethodSummary {
  std::string method;
  int count = 0;
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  void add(int sample_id, int view, const std::string& method, const Eigen::Matrix3Xd& pred,
           const Eigen::Matrix3Xd& gt);
  /// Means per method, in order of first appearance.
  std::vector<MethodSummary> summary() const;
  std::string to_csv() const;
  std::string summary_csv() const;
  std::string to_text() const;
};

/// Min-of-n PA-MPJPE; curve[k] is the mean over samples of the best error
/// among the first n_list[k] hypotheses.
struct MinOfNReport {
  std::vector<int> n_list;
  std::vector<double> curve_mm;
  /// per_sample[i][k] matches curve_mm[k].
  std::vector<std::vector<double>> per_sample;
  std::vector<int> sample_id;
  std::vector<int> view;

  std::string to_csv() const;
  std::string per_sample_csv() const;
};

/// Builds the curve from per-hypothesis errors (hypothesis 0 is the mode).
MinOfNReport min_of_n_curve(const std::vector<std::vector<double>>& errors, const std::vector<int>& n_list,
                            const std::vector<int>& sample_id, const std::vector<int>& view);

/// Fixed-precision number formatting shared by every CSV writer.
std::string fmt(double v);

}  // namespace posedist::metrics
