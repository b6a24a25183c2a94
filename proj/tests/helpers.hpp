#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nfard/matrix.hpp>
#include <nfard/rng.hpp>

namespace testutil {

inline nfard::Matrix random_matrix(nfard::Rng& rng, std::size_t rows, std::size_t cols,
                                   double lo = -1.0, double hi = 1.0) {
  nfard::Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

/// Random matrix of the given rank (product of two thinner factors).
inline nfard::Matrix random_rank_deficient(nfard::Rng& rng, std::size_t rows, std::size_t cols,
                                           std::size_t rank) {
  return matmul(random_matrix(rng, rows, rank), random_matrix(rng, rank, cols));
}

/// Scratch path under the system temp directory; any existing file or tree
/// with the same name is removed first.
inline std::string temp_path(const std::string& name) {
  std::filesystem::path p = std::filesystem::temp_directory_path() / ("nfard-test-" + name);
  std::filesystem::remove_all(p);
  return p.string();
}

}  // namespace testutil
