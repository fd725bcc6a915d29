#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lrrec/common/error.hpp"

namespace lrrec::bin {

// Little-endian host assumed; checkpoints are not meant to move across
// architectures.
template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ValidationError("truncated binary file");
  return v;
}

void write_string(std::ostream& out, const std::string& s);
std::string read_string(std::istream& in);

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix(std::istream& in);

void write_magic(std::ostream& out, const char (&magic)[5], std::uint32_t version);
// Throws ValidationError on a magic mismatch or a version newer than `max_version`.
std::uint32_t read_magic(std::istream& in, const char (&magic)[5], std::uint32_t max_version);

}  // namespace lrrec::bin
