#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace lrrec {

// 64-bit FNV-1a. Stable across platforms and runs, used for prompt
// fingerprints, config hashes and artifact hashes.
constexpr std::uint64_t fnv1a64(std::string_view data,
                                std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t v);

inline std::string fingerprint(std::string_view data) { return to_hex(fnv1a64(data)); }

// Hash of a file's bytes; empty string when the file does not exist.
std::string file_fingerprint(const std::string& path);

}  // namespace lrrec
