#pragma once

// Versioned binary container for model parameters.
//
// Layout (little-endian):
//   char[8]  magic "PDSTCKPT"
//   u32      format version
//   u32      metadata count, then per entry: u32 key length, key bytes,
//            u32 value length, value bytes
//   u32      tensor count, then per tensor: u32 name length, name bytes,
//            u64 rows, u64 cols, rows * cols f64 in row-major order
//
// Entries are written in name order, so equal contents give equal bytes.
// See docs/checkpoint_format.md for the tensor names each module writes.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>

namespace posedist {

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }
  bool has_meta(const std::string& key) const { return meta_.count(key) > 0; }
  /// Throws ErrorKind::Data when missing.
  const std::string& meta(const std::string& key) const;

  void put(const std::string& name, const Eigen::MatrixXd& value) { tensors_[name] = value; }
  bool has(const std::string& name) const { return tensors_.count(name) > 0; }
  const Eigen::MatrixXd& get(const std::string& name) const;
  /// Also checks the stored shape.
  const Eigen::MatrixXd& get(const std::string& name, Eigen::Index rows, Eigen::Index cols) const;

  const std::map<std::string, std::string>& metadata() const { return meta_; }
  const std::map<std::string, Eigen::MatrixXd>& tensors() const { return tensors_; }

  std::string to_bytes() const;
  /// Throws ErrorKind::Data on bad magic, truncated input or a version
  /// other than kVersion.
  static Checkpoint from_bytes(const std::string& bytes);

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::map<std::string, std::string> meta_;
  std::map<std::string, Eigen::MatrixXd> tensors_;
};

}  // namespace posedist
