#include "posedist/metrics.hpp"

#include "posedist/error.hpp"
#include "posedist/rotation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace posedist::metrics {

namespace {

void check_shapes(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt, const char* who) {
  if (pred.cols() != gt.cols() || pred.cols() == 0)
    fail(ErrorKind::Shape, std::string(who) + ": joint counts differ (" + std::to_string(pred.cols()) + " vs " +
                               std::to_string(gt.cols()) + ")");
}

double mean_distance_mm(const Eigen::Matrix3Xd& a, const Eigen::Matrix3Xd& b) {
  return 1000.0 * (a - b).colwise().norm().mean();
}

}  // namespace

double mpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  check_shapes(pred, gt, "mpjpe");
  return mean_distance_mm(pred, gt);
}

double pa_mpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  check_shapes(pred, gt, "pa_mpjpe");
  return mean_distance_mm(rotation::procrustes_align(pred, gt).aligned, gt);
}

Eigen::Matrix3Xd joints_from_row(const Eigen::RowVectorXd& row) {
  if (row.size() % 3 != 0) fail(ErrorKind::Shape, "joints_from_row: length is not a multiple of 3");
  return Eigen::Map<const Eigen::Matrix3Xd>(row.data(), 3, row.size() / 3);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void EvalReport::add(int sample_id, int view, const std::string& method, const Eigen::Matrix3Xd& pred,
                     const Eigen::Matrix3Xd& gt) {
  rows.push_back({sample_id, view, method, mpjpe(pred, gt), pa_mpjpe(pred, gt)});
}

std::vector<MethodSummary> EvalReport::summary() const {
  std::vector<MethodSummary> out;
  for (const EvalRow& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const MethodSummary& m) { return m.method == r.method; });
    if (it == out.end()) {
      out.push_back({r.method, 0, 0.0, 0.0});
      it = out.end() - 1;
    }
    ++it->count;
    it->mpjpe_mm += r.mpjpe_mm;
    it->pa_mpjpe_mm += r.pa_mpjpe_mm;
  }
  for (MethodSummary& m : out) {
    m.mpjpe_mm /= m.count;
    m.pa_mpjpe_mm /= m.count;
  }
  return out;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "sample_id,view,method,mpjpe_mm,pa_mpjpe_mm\n";
  for (const EvalRow& r : rows)
    os << r.sample_id << ',' << r.view << ',' << r.method << ',' << fmt(r.mpjpe_mm) << ',' << fmt(r.pa_mpjpe_mm)
       << '\n';
  return os.str();
}

std::string EvalReport::summary_csv() const {
  std::ostringstream os;
  os << "method,count,mpjpe_mm,pa_mpjpe_mm\n";
  for (const MethodSummary& m : summary())
    os << m.method << ',' << m.count << ',' << fmt(m.mpjpe_mm) << ',' << fmt(m.pa_mpjpe_mm) << '\n';
  return os.str();
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-16s %8s %12s %14s\n", "method", "count", "MPJPE(mm)", "PA-MPJPE(mm)");
  os << buf;
  for (const MethodSummary& m : summary()) {
    std::snprintf(buf, sizeof(buf), "%-16s %8d %12.2f %14.2f\n", m.method.c_str(), m.count, m.mpjpe_mm,
                  m.pa_mpjpe_mm);
    os << buf;
  }
  return os.str();
}

MinOfNReport min_of_n_curve(const std::vector<std::vector<double>>& errors, const std::vector<int>& n_list,
                            const std::vector<int>& sample_id, const std::vector<int>& view) {
  if (n_list.empty()) fail(ErrorKind::Config, "min_of_n: empty n list");
  MinOfNReport rep;
  rep.n_list = n_list;
  rep.sample_id = sample_id;
  rep.view = view;
  rep.curve_mm.assign(n_list.size(), 0.0);
  for (const auto& e : errors) {
    std::vector<double> row;
    for (int n : n_list) {
      if (n < 1 || n > static_cast<int>(e.size())) fail(ErrorKind::Config, "min_of_n: n out of range");
      row.push_back(*std::min_element(e.begin(), e.begin() + n));
    }
    for (std::size_t k = 0; k < row.size(); ++k) rep.curve_mm[k] += row[k];
    rep.per_sample.push_back(std::move(row));
  }
  if (!errors.empty())
    for (double& v : rep.curve_mm) v /= static_cast<double>(errors.size());
  return rep;
}

std::string MinOfNReport::to_csv() const {
  std::ostringstream os;
  os << "n,pa_mpjpe_mm\n";
  for (std::size_t k = 0; k < n_list.size(); ++k) os << n_list[k] << ',' << fmt(curve_mm[k]) << '\n';
  return os.str();
}

std::string MinOfNReport::per_sample_csv() const {
  std::ostringstream os;
  os << "sample_id,view";
  for (int n : n_list) os << ",min_of_" << n << "_mm";
  os << '\n';
  for (std::size_t i = 0; i < per_sample.size(); ++i) {
    os << sample_id[i] << ',' << view[i];
    for (double v : per_sample[i]) os << ',' << fmt(v);
    os << '\n';
  }
  return os.str();
}

}  // namespace posedist::metrics
