#include "rappie/artifacts.hpp"

#include <bit>
#include <cstring>

#include "rappie/errors.hpp"
#include "rappie/util.hpp"

namespace rappie {

namespace bin {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_bytes(std::string& out, std::string_view s) {
  put_u64(out, s.size());
  out.append(s);
}

void put_matrix(std::string& out, const Eigen::MatrixXd& m) {
  put_u64(out, static_cast<std::uint64_t>(m.rows()));
  put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
}

const unsigned char* Reader::take(std::size_t n) {
  if (at_ + n > data_.size()) throw DataError("truncated artifact: " + context_);
  const auto* p = reinterpret_cast<const unsigned char*>(data_.data()) + at_;
  at_ += n;
  return p;
}

std::uint64_t Reader::u64() {
  const unsigned char* p = take(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::bytes() {
  std::uint64_t n = u64();
  if (n > data_.size() - at_) throw DataError("truncated artifact: " + context_);
  const unsigned char* p = take(static_cast<std::size_t>(n));
  return std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(n));
}

Eigen::MatrixXd Reader::matrix() {
  std::uint64_t rows = u64();
  std::uint64_t cols = u64();
  if (rows > (1u << 26) || cols > (1u << 26) || (rows != 0 && cols > (1ull << 40) / rows))
    throw DataError("implausible matrix shape in " + context_);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
  return m;
}

void Reader::expect_done() const {
  if (!done()) throw DataError("trailing bytes in artifact: " + context_);
}

}  // namespace bin

namespace {
constexpr std::string_view kMatrixMagic = "RAPPIEMAT1\n";
}

void save_matrix(const std::string& path, const Eigen::MatrixXd& m) {
  std::string out(kMatrixMagic);
  bin::put_matrix(out, m);
  write_file_atomic(path, out);
}

Eigen::MatrixXd load_matrix(const std::string& path) {
  std::string data = read_file(path);
  if (data.size() < kMatrixMagic.size() ||
      std::string_view(data).substr(0, kMatrixMagic.size()) != kMatrixMagic)
    throw DataError("bad matrix file magic in " + path);
  bin::Reader r(std::string_view(data).substr(kMatrixMagic.size()), path);
  Eigen::MatrixXd m = r.matrix();
  r.expect_done();
  return m;
}

}  // namespace rappie
