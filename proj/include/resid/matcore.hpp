#pragma once

// Dense matrix primitives: norms, SVD, canonical block form of orthogonal
// matrices and 2x2 rotation roots.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "resid/error.hpp"

namespace resid {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kPi = std::numbers::pi;

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void require_finite(const Mat& m, const std::string& what) {
  require(m.size() > 0, ErrorKind::DimensionMismatch, what + " is empty");
  require(m.allFinite(), ErrorKind::NonFinite, what + " has non-finite entries");
}

inline void require_square(const Mat& m, const std::string& what) {
  require(m.rows() == m.cols() && m.rows() > 0, ErrorKind::DimensionMismatch,
          what + " must be square, got " + std::to_string(m.rows()) + "x" +
              std::to_string(m.cols()));
}

/// Singular values in nonincreasing order.
inline Vec singular_values(const Mat& m) {
  return Eigen::JacobiSVD<Mat>(m).singularValues();
}

inline double spectral_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  require(m.allFinite(), ErrorKind::NonFinite, "spectral_norm of a non-finite matrix");
  return singular_values(m)(0);
}

inline double sigma_min(const Mat& m) {
  Vec s = singular_values(m);
  return s.size() == 0 ? 0.0 : s(s.size() - 1);
}

struct Svd {
  Mat U;
  Vec K;  // nonnegative, nonincreasing
  Mat V;
};

/// Full SVD of a square matrix, M = U * diag(K) * V^T.
inline Svd svd(const Mat& m) {
  require_square(m, "svd input");
  Eigen::JacobiSVD<Mat> solver(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return {solver.matrixU(), solver.singularValues(), solver.matrixV()};
}

inline double orthogonality_defect(const Mat& q) {
  return (q * q.transpose() - Mat::Identity(q.rows(), q.rows())).norm();
}

/// Maps an angle onto the principal branch (-pi, pi].
inline double principal_angle(double theta) {
  double t = std::remainder(theta, 2.0 * kPi);
  if (t <= -kPi) t += 2.0 * kPi;
  return t;
}

/// T(theta) = [[cos, -sin], [sin, cos]].
inline Mat rotation(double theta) {
  Mat t(2, 2);
  if (theta == kPi || theta == -kPi) {
    t << -1.0, 0.0, 0.0, -1.0;
    return t;
  }
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  t << c, -s, s, c;
  return t;
}

/// W = T(theta / q), so that W^q = T(theta) and ||W - I|| = 2|sin(theta / 2q)|.
inline Mat rotation_root(double theta, int q) {
  require(q >= 1, ErrorKind::InvalidArgument, "rotation_root needs q >= 1");
  require(std::isfinite(theta), ErrorKind::NonFinite, "rotation_root angle");
  return rotation(theta / q);
}

/// T(theta) - I, evaluated without cancellation for small angles.
inline Mat rotation_minus_identity(double theta) {
  Mat t(2, 2);
  const double s = std::sin(theta);
  const double cm1 = -2.0 * std::sin(theta / 2.0) * std::sin(theta / 2.0);
  t << cm1, -s, s, cm1;
  return t;
}

enum class BlockKind { Rotation, PlusOne, MinusOne };

struct CanonicalBlock {
  BlockKind kind = BlockKind::PlusOne;
  double angle = 0.0;  // only meaningful for Rotation

  int size() const { return kind == BlockKind::Rotation ? 2 : 1; }

  static CanonicalBlock rot(double theta) { return {BlockKind::Rotation, theta}; }
  static CanonicalBlock plus_one() { return {BlockKind::PlusOne, 0.0}; }
  static CanonicalBlock minus_one() { return {BlockKind::MinusOne, 0.0}; }
};

/// Q = S * D * S^T with S orthonormal and D block diagonal, blocks being
/// rotations T(theta) or +-1.
struct CanonicalBlockForm {
  Mat basis;
  std::vector<CanonicalBlock> blocks;

  Eigen::Index dim() const { return basis.rows(); }

  /// Column offset of every block inside the basis.
  std::vector<Eigen::Index> offsets() const {
    std::vector<Eigen::Index> out;
    out.reserve(blocks.size());
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
      out.push_back(at);
      at += b.size();
    }
    return out;
  }

  Mat block_matrix() const {
    Mat d = Mat::Zero(dim(), dim());
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
      switch (b.kind) {
        case BlockKind::PlusOne: d(at, at) = 1.0; break;
        case BlockKind::MinusOne: d(at, at) = -1.0; break;
        case BlockKind::Rotation: d.block(at, at, 2, 2) = rotation(b.angle); break;
      }
      at += b.size();
    }
    return d;
  }

  Mat reassemble() const { return basis * block_matrix() * basis.transpose(); }

  int count(BlockKind kind) const {
    return static_cast<int>(std::count_if(blocks.begin(), blocks.end(),
                                          [kind](const CanonicalBlock& b) { return b.kind == kind; }));
  }
};

inline constexpr double kOrthogonalityTol = 1e-8;
inline constexpr double kUnitEigenvalueTol = 1e-6;

/// Canonical block form of an orthogonal matrix from its real Schur form.
/// For a normal matrix the quasi-triangular Schur factor is block diagonal up
/// to roundoff; each 2x2 block is projected onto the nearest rotation.
inline CanonicalBlockForm orthogonal_block_diagonalize(const Mat& q,
                                                       double tol = kOrthogonalityTol) {
  require_square(q, "orthogonal_block_diagonalize input");
  require_finite(q, "orthogonal_block_diagonalize input");
  const double defect = orthogonality_defect(q);
  require(defect <= tol, ErrorKind::NotOrthogonal,
          "||QQ^T - I||_F = " + std::to_string(defect));

  const Eigen::Index n = q.rows();
  CanonicalBlockForm form;
  if (n == 1) {
    form.basis = Mat::Identity(1, 1);
    form.blocks.push_back(q(0, 0) > 0 ? CanonicalBlock::plus_one() : CanonicalBlock::minus_one());
    return form;
  }

  Eigen::RealSchur<Mat> schur(q);
  require(schur.info() == Eigen::Success, ErrorKind::NotOrthogonal, "real Schur did not converge");
  const Mat& t = schur.matrixT();
  form.basis = schur.matrixU();

  for (Eigen::Index i = 0; i < n;) {
    const bool pair = i + 1 < n && t(i + 1, i) != 0.0;
    if (!pair) {
      const double lambda = t(i, i);
      if (std::abs(lambda - 1.0) <= kUnitEigenvalueTol) {
        form.blocks.push_back(CanonicalBlock::plus_one());
      } else if (std::abs(lambda + 1.0) <= kUnitEigenvalueTol) {
        form.blocks.push_back(CanonicalBlock::minus_one());
      } else {
        throw Error(ErrorKind::NotOrthogonal,
                    "real eigenvalue " + std::to_string(lambda) + " is not +-1");
      }
      i += 1;
      continue;
    }
    const Mat b = t.block(i, i, 2, 2);
    // Polar projection: argmax_theta tr(T(theta)^T B).
    const double theta = principal_angle(std::atan2(b(1, 0) - b(0, 1), b(0, 0) + b(1, 1)));
    const double residual = (b - rotation(theta)).norm();
    require(residual <= tol, ErrorKind::NotOrthogonal,
            "2x2 Schur block is " + std::to_string(residual) + " away from a rotation");
    form.blocks.push_back(CanonicalBlock::rot(theta));
    i += 2;
  }

  const double rel = (form.reassemble() - q).norm() / q.norm();
  require(rel <= tol, ErrorKind::NotOrthogonal,
          "canonical form reassembles with relative error " + std::to_string(rel));
  return form;
}

/// Replaces MinusOne blocks pairwise by Rotation(pi) blocks. Non-reflection
/// blocks keep their order; the pairs go last, and the basis columns are
/// permuted to match.
inline CanonicalBlockForm pair_minus_ones(const CanonicalBlockForm& form) {
  const int minus = form.count(BlockKind::MinusOne);
  require(minus % 2 == 0, ErrorKind::OddReflectionCount,
          std::to_string(minus) + " reflections; the matrix has determinant -1");
  if (minus == 0) return form;

  const auto offsets = form.offsets();
  CanonicalBlockForm out;
  out.basis.resize(form.dim(), form.dim());
  Eigen::Index col = 0;
  std::vector<Eigen::Index> reflections;
  for (std::size_t b = 0; b < form.blocks.size(); ++b) {
    const auto& block = form.blocks[b];
    if (block.kind == BlockKind::MinusOne) {
      reflections.push_back(offsets[b]);
      continue;
    }
    out.blocks.push_back(block);
    out.basis.middleCols(col, block.size()) = form.basis.middleCols(offsets[b], block.size());
    col += block.size();
  }
  for (std::size_t r = 0; r < reflections.size(); r += 2) {
    out.blocks.push_back(CanonicalBlock::rot(kPi));
    out.basis.col(col++) = form.basis.col(reflections[r]);
    out.basis.col(col++) = form.basis.col(reflections[r + 1]);
  }
  return out;
}

inline constexpr double kPsdClampTol = 1e-10;

/// Unique symmetric PSD square root. Eigenvalues in [-kPsdClampTol, 0) are
/// clamped to zero; anything more negative is rejected.
inline Mat psd_sqrt(const Mat& sigma) {
  require_square(sigma, "covariance");
  Eigen::SelfAdjointEigenSolver<Mat> eig(sigma);
  Vec lambda = eig.eigenvalues();
  require(lambda.minCoeff() >= -kPsdClampTol, ErrorKind::NotPSD,
          "min eigenvalue " + std::to_string(lambda.minCoeff()));
  lambda = lambda.cwiseMax(0.0).cwiseSqrt();
  Mat root = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (root + root.transpose());
}

}  // namespace resid
