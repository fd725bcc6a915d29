#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace lrrec {

inline constexpr std::size_t kEmbeddingDim = 8;
using Embedding = std::array<double, kEmbeddingDim>;

inline bool all_finite(const Embedding& e) {
  for (double v : e)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace lrrec
