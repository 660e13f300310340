#pragma once

#include <cstdint>
#include <random>

#include "rerand/population.hpp"

namespace fixture {

/// Dense random matrix from std::mt19937_64, independent of the library RNG.
inline rerand::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> g;
  rerand::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = g(eng);
  }
  return m;
}

/// Well-conditioned random invertible matrix.
inline rerand::Matrix random_invertible(Eigen::Index k, std::uint64_t seed) {
  rerand::Matrix a = random_matrix(k, k, seed);
  a.diagonal().array() += 3.0;
  return a;
}

inline rerand::Matrix one_to_six() {
  rerand::Matrix x(6, 1);
  x << 1, 2, 3, 4, 5, 6;
  return x;
}

}  // namespace fixture
