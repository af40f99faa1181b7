#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <string_view>

namespace rappie {

// Dense matrix artifact: fixed little-endian layout so files are
// byte-comparable across runs and platforms.
void save_matrix(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd load_matrix(const std::string& path);

namespace bin {

void put_u64(std::string& out, std::uint64_t v);
void put_f64(std::string& out, double v);
void put_bytes(std::string& out, std::string_view s);  // length-prefixed
void put_matrix(std::string& out, const Eigen::MatrixXd& m);

// Sequential decoder over an in-memory buffer; throws CacheCorrupt-style
// DataError on truncation.
class Reader {
 public:
  explicit Reader(std::string_view data, std::string context)
      : data_(data), context_(std::move(context)) {}

  std::uint64_t u64();
  double f64();
  std::string bytes();
  Eigen::MatrixXd matrix();
  bool done() const { return at_ == data_.size(); }
  void expect_done() const;

 private:
  const unsigned char* take(std::size_t n);

  std::string_view data_;
  std::size_t at_ = 0;
  std::string context_;
};

}  // namespace bin

}  // namespace rappie
