#pragma once

// Little-endian binary containers used for model and shape files.

#include <Eigen/Dense>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cranio::util {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BinaryWriter {
 public:
  void magic(std::string_view m) { buf_.append(m.data(), m.size()); }
  template <typename T>
  void pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.append(s.data(), s.size());
  }
  void f64s(const double* p, std::size_t n) { buf_.append(reinterpret_cast<const char*>(p), n * sizeof(double)); }
  void vec(const Eigen::VectorXd& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    f64s(v.data(), static_cast<std::size_t>(v.size()));
  }
  void mat(const Eigen::MatrixXd& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    f64s(m.data(), static_cast<std::size_t>(m.size()));
  }

  const std::string& bytes() const { return buf_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string bytes) : buf_(std::move(bytes)) {}

  static BinaryReader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return BinaryReader(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
  }

  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::string_view(buf_.data() + pos_, m.size()) != m)
      throw FormatError("bad magic, expected '" + std::string(m) + "'");
    pos_ += m.size();
  }
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void f64s(double* p, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(p, buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  Eigen::VectorXd vec() {
    Eigen::VectorXd v(static_cast<Eigen::Index>(u64()));
    f64s(v.data(), static_cast<std::size_t>(v.size()));
    return v;
  }
  Eigen::MatrixXd mat() {
    const auto r = static_cast<Eigen::Index>(u64());
    const auto c = static_cast<Eigen::Index>(u64());
    Eigen::MatrixXd m(r, c);
    f64s(m.data(), static_cast<std::size_t>(m.size()));
    return m;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size())
      throw FormatError("truncated container at byte " + std::to_string(pos_) + " (need " + std::to_string(n) +
                        " more)");
  }

  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace cranio::util
