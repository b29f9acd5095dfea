#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mrefine/tensor.hpp"

namespace mrefine::oracle {

// Gaussian elimination with full pivoting in double precision. A pivot
// counts when it exceeds rel_tol times the largest entry of the matrix.
inline std::size_t elimination_rank(const DenseTensor& m, double rel_tol = 1e-9) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<double> a(m.values().begin(), m.values().end());
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0;
  std::vector<std::size_t> col(cols);
  for (std::size_t j = 0; j < cols; ++j) col[j] = j;
  std::size_t rank = 0;
  for (std::size_t r = 0; r < std::min(rows, cols); ++r) {
    std::size_t bi = r, bj = r;
    double best = 0.0;
    for (std::size_t i = r; i < rows; ++i)
      for (std::size_t j = r; j < cols; ++j)
        if (std::abs(a[i * cols + j]) > best) {
          best = std::abs(a[i * cols + j]);
          bi = i;
          bj = j;
        }
    if (best <= rel_tol * scale) break;
    for (std::size_t j = 0; j < cols; ++j) std::swap(a[r * cols + j], a[bi * cols + j]);
    for (std::size_t i = 0; i < rows; ++i) std::swap(a[i * cols + r], a[i * cols + bj]);
    for (std::size_t i = r + 1; i < rows; ++i) {
      const double f = a[i * cols + r] / a[r * cols + r];
      for (std::size_t j = r; j < cols; ++j) a[i * cols + j] -= f * a[r * cols + j];
    }
    ++rank;
  }
  return rank;
}

// Singular values above rel_tol * sigma_max.
inline std::size_t svd_rank(const DenseTensor& m, double rel_tol = 1e-6) {
  Eigen::MatrixXd a(m.dim(0), m.dim(1));
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) a(Eigen::Index(i), Eigen::Index(j)) = m.at(i, j);
  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++rank;
  return rank;
}

}  // namespace mrefine::oracle
