#pragma once

// Seeded generators for random problem instances.

#include <cmath>

#include "resid/matcore.hpp"
#include "resid/rng.hpp"

namespace resid {

/// Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix).
inline Mat random_orthogonal(Eigen::Index d, Rng& rng) {
  const Mat g = gaussian_matrix(d, d, rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(d, d);
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

inline Mat random_rotation(Eigen::Index d, Rng& rng) {
  Mat q = random_orthogonal(d, rng);
  if (q.determinant() < 0.0) q.col(0) *= -1.0;
  return q;
}

/// R = U diag(exp(s_i)) V^T with det(R) > 0 and log singular values uniform in
/// [-gamma_max, gamma_max]; the extremes are pinned so gamma(R) = gamma_max when d >= 2.
inline Mat random_target_matrix(Eigen::Index d, double gamma_max, Rng& rng) {
  Vec s(d);
  for (Eigen::Index i = 0; i < d; ++i) s(i) = gamma_max * (2.0 * uniform01(rng) - 1.0);
  if (d >= 2) {
    s(0) = gamma_max;
    s(1) = -gamma_max * uniform01(rng);
  }
  const Vec k = s.array().exp();
  return random_rotation(d, rng) * k.asDiagonal() * random_rotation(d, rng).transpose();
}

/// Symmetric positive definite matrix with eigenvalues in [lo, hi].
inline Mat random_spd(Eigen::Index d, double lo, double hi, Rng& rng) {
  Vec lambda(d);
  for (Eigen::Index i = 0; i < d; ++i) lambda(i) = lo + (hi - lo) * uniform01(rng);
  const Mat q = random_orthogonal(d, rng);
  Mat out = q * lambda.asDiagonal() * q.transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace resid
