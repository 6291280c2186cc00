#pragma once

#include "hsicgcn/types.hpp"

#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace testing_support {

inline std::string fixture_path(const std::string& name) { return std::string(HSICGCN_FIXTURES) + "/" + name; }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline hsicgcn::Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                                     double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  hsicgcn::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
  return m;
}

/// Row permutation matrix P with (P x)_i = x_{perm[i]}.
inline hsicgcn::Matrix permutation_matrix(const std::vector<int>& perm) {
  const auto n = static_cast<Eigen::Index>(perm.size());
  hsicgcn::Matrix p = hsicgcn::Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) p(i, perm[static_cast<std::size_t>(i)]) = 1.0;
  return p;
}

}  // namespace testing_support
