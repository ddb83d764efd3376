#pragma once

// Per-node small dense algebra on top of Eigen. Blocks never exceed 8x8 here,
// so fixed max sizes keep everything on the stack.

#include <Eigen/Dense>
#include <cmath>

namespace nhflow::dense {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 8, 8>;
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 8, 1>;

inline constexpr double kSingularThreshold = 1e-12;

// Row-major k x k block starting at p.
inline Mat load(const double* p, int k) {
  Mat a(k, k);
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < k; ++c) a(r, c) = p[r * k + c];
  return a;
}

inline void store(const Mat& a, double* p) {
  const int k = static_cast<int>(a.rows());
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < k; ++c) p[r * k + c] = a(r, c);
}

// LU inverse with the determinant threshold. Returns false when singular.
inline bool try_inverse(const Mat& a, Mat& out) {
  Eigen::PartialPivLU<Mat> lu(a);
  const double det = lu.determinant();
  if (!(std::abs(det) > kSingularThreshold)) return false;
  out = lu.inverse();
  return true;
}

inline double determinant(const Mat& a) { return Eigen::PartialPivLU<Mat>(a).determinant(); }

}  // namespace nhflow::dense
