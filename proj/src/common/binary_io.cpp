#include "lrrec/common/binary_io.hpp"

#include <cstring>

namespace lrrec::bin {

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > (1ULL << 32)) throw ValidationError("corrupt string length in binary file");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw ValidationError("truncated binary file");
  return s;
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  // Row-major on disk regardless of Eigen storage order.
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) write_pod<double>(out, m(r, c));
}

Eigen::MatrixXd read_matrix(std::istream& in) {
  const auto rows = read_pod<std::uint64_t>(in);
  const auto cols = read_pod<std::uint64_t>(in);
  if (rows * cols > (1ULL << 28)) throw ValidationError("corrupt matrix shape in binary file");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = read_pod<double>(in);
  return m;
}

void write_magic(std::ostream& out, const char (&magic)[5], std::uint32_t version) {
  out.write(magic, 4);
  write_pod<std::uint32_t>(out, version);
}

std::uint32_t read_magic(std::istream& in, const char (&magic)[5], std::uint32_t max_version) {
  char got[4] = {};
  in.read(got, 4);
  if (!in || std::memcmp(got, magic, 4) != 0)
    throw ValidationError(std::string("bad file magic, expected ") + magic);
  const auto version = read_pod<std::uint32_t>(in);
  if (version == 0 || version > max_version)
    throw ValidationError("unsupported file version " + std::to_string(version));
  return version;
}

}  // namespace lrrec::bin
