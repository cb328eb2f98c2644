#include "posedist/checkpoint.hpp"

#include "posedist/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace posedist {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'D', 'S', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void write_str(std::string& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail(ErrorKind::Data, "checkpoint: truncated input");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) fail(ErrorKind::Data, "checkpoint: missing metadata '" + key + "'");
  return it->second;
}

const Eigen::MatrixXd& Checkpoint::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) fail(ErrorKind::Data, "checkpoint: missing tensor '" + name + "'");
  return it->second;
}

const Eigen::MatrixXd& Checkpoint::get(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
  const Eigen::MatrixXd& m = get(name);
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream os;
    os << "checkpoint: tensor '" << name << "' is " << m.rows() << "x" << m.cols() << ", expected " << rows << "x"
       << cols;
    fail(ErrorKind::Data, os.str());
  }
  return m;
}

std::string Checkpoint::to_bytes() const {
  std::string out(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(meta_.size()));
  for (const auto& [k, v] : meta_) {
    write_str(out, k);
    write_str(out, v);
  }
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, m] : tensors_) {
    write_str(out, name);
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) write_pod<double>(out, m(i, j));
  }
  return out;
}

Checkpoint Checkpoint::from_bytes(const std::string& bytes) {
  Reader in(bytes);
  char magic[8];
  in.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) fail(ErrorKind::Data, "checkpoint: bad magic");
  const auto version = in.pod<std::uint32_t>();
  if (version != kVersion)
    fail(ErrorKind::Data, "checkpoint: version " + std::to_string(version) + " does not match supported version " +
                              std::to_string(kVersion));
  Checkpoint ck;
  const auto n_meta = in.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = in.str();
    ck.meta_[k] = in.str();
  }
  const auto n_tensors = in.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = in.str();
    const auto rows = in.pod<std::uint64_t>();
    const auto cols = in.pod<std::uint64_t>();
    if (rows * cols > (1ull << 32)) fail(ErrorKind::Data, "checkpoint: implausible tensor size for '" + name + "'");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(rows, cols);
    in.raw(m.data(), sizeof(double) * rows * cols);
    ck.tensors_[name] = m;
  }
  if (!in.done()) fail(ErrorKind::Data, "checkpoint: trailing bytes");
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Data, "checkpoint: cannot write " + path);
  const std::string bytes = to_bytes();
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorKind::Data, "checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Data, "checkpoint: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_bytes(ss.str());
}

}  // namespace posedist
