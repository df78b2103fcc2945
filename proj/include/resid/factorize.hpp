#pragma once

// Near-identity factorization of a linear map: layers A_1..A_l with
// (I + A_l) ... (I + A_1) = R and max_i ||A_i|| = O(1/l).
//
// General path: R = U K V^T, each orthogonal factor is split into 2q
// commuting rotation roots in its canonical block basis, and K into p equal
// diagonal roots. Layers are ordered V^T factors, K factors, U factors, then
// zero padding.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "resid/error.hpp"
#include "resid/matcore.hpp"

namespace resid {

/// Ordered layers A_1..A_l (A_1 applied first), all d x d.
class LayerStack {
 public:
  LayerStack() = default;

  explicit LayerStack(std::vector<Mat> layers) : layers_(std::move(layers)) {
    require(!layers_.empty(), ErrorKind::InvalidArgument, "a layer stack needs at least one layer");
    const Eigen::Index d = layers_.front().rows();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Mat& a = layers_[i];
      require(a.rows() == d && a.cols() == d && d > 0, ErrorKind::DimensionMismatch,
              "layer " + std::to_string(i + 1) + " is not " + std::to_string(d) + "x" +
                  std::to_string(d));
      require(a.allFinite(), ErrorKind::NonFinite, "layer " + std::to_string(i + 1));
    }
  }

  static LayerStack zeros(Eigen::Index dim, int depth) {
    require(depth >= 1 && dim >= 1, ErrorKind::InvalidArgument, "zero stack needs depth, dim >= 1");
    return LayerStack(std::vector<Mat>(static_cast<std::size_t>(depth), Mat::Zero(dim, dim)));
  }

  int depth() const { return static_cast<int>(layers_.size()); }
  Eigen::Index dim() const { return layers_.empty() ? 0 : layers_.front().rows(); }
  const std::vector<Mat>& layers() const { return layers_; }
  const Mat& operator[](std::size_t i) const { return layers_[i]; }

  /// |||A||| = max_i ||A_i||.
  double maxnorm() const {
    double m = 0.0;
    for (const Mat& a : layers_) m = std::max(m, spectral_norm(a));
    return m;
  }

  /// (I + A_l) ... (I + A_1).
  Mat product() const {
    Mat p = Mat::Identity(dim(), dim());
    for (const Mat& a : layers_) p = p + a * p;
    return p;
  }

  /// A_l ... A_1, the standard (non-residual) parameterization.
  Mat plain_product() const {
    Mat p = Mat::Identity(dim(), dim());
    for (const Mat& a : layers_) p = a * p;
    return p;
  }

 private:
  std::vector<Mat> layers_;
};

inline constexpr double kSingularRatio = 1e-12;
inline constexpr double kSymmetryTol = 1e-10;

/// gamma = max(|log sigma_max(R)|, |log sigma_min(R)|).
inline double gamma_of(const Mat& r) {
  require_square(r, "target");
  require_finite(r, "target");
  const Vec s = singular_values(r);
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  require(smax > 0.0 && smin > kSingularRatio * smax, ErrorKind::SingularTarget,
          "sigma_min = " + std::to_string(smin) + ", sigma_max = " + std::to_string(smax));
  return std::max(std::abs(std::log(smax)), std::abs(std::log(smin)));
}

/// Regression instance y = R x + xi with E[x x^T] = Sigma and per-coordinate
/// noise variance noise_var. Derived quantities are computed once.
class Target {
 public:
  explicit Target(Mat r) : Target(r, Mat::Identity(r.rows(), r.rows()), 0.0) {}

  Target(Mat r, Mat sigma, double noise_var)
      : r_(std::move(r)), sigma_(std::move(sigma)), noise_var_(noise_var) {
    require_square(r_, "target R");
    require_finite(r_, "target R");
    require_square(sigma_, "covariance");
    require_finite(sigma_, "covariance");
    require(sigma_.rows() == r_.rows(), ErrorKind::DimensionMismatch,
            "covariance and R dimensions differ");
    require(std::isfinite(noise_var_) && noise_var_ >= 0.0, ErrorKind::InvalidArgument,
            "noise variance must be finite and nonnegative");
    const double asym = (sigma_ - sigma_.transpose()).norm();
    require(asym <= kSymmetryTol * std::max(1.0, sigma_.norm()), ErrorKind::NotPSD,
            "covariance is not symmetric (" + std::to_string(asym) + ")");
    sigma_sqrt_ = psd_sqrt(sigma_);
    Eigen::SelfAdjointEigenSolver<Mat> eig(sigma_, Eigen::EigenvaluesOnly);
    sigma_min_ = std::max(0.0, eig.eigenvalues().minCoeff());
    const Vec s = singular_values(r_);
    const double smin = s(s.size() - 1);
    gamma_ = (s(0) > 0.0 && smin > kSingularRatio * s(0))
                 ? std::max(std::abs(std::log(s(0))), std::abs(std::log(smin)))
                 : std::numeric_limits<double>::infinity();
  }

  Eigen::Index dim() const { return r_.rows(); }
  const Mat& R() const { return r_; }
  const Mat& sigma() const { return sigma_; }
  const Mat& sigma_sqrt() const { return sigma_sqrt_; }
  double noise_var() const { return noise_var_; }
  /// Infinite when R is numerically singular.
  double gamma() const { return gamma_; }
  /// Smallest eigenvalue of Sigma (= sigma_min(Sigma) for PSD Sigma).
  double sigma_min_cov() const { return sigma_min_; }

 private:
  Mat r_;
  Mat sigma_;
  Mat sigma_sqrt_;
  double noise_var_ = 0.0;
  double gamma_ = 0.0;
  double sigma_min_ = 0.0;
};

struct DepthSplit {
  int p = 0;
  int q = 0;
  int padding = 0;

  friend bool operator==(const DepthSplit&, const DepthSplit&) = default;
};

/// gamma at or below this is treated as an orthogonal target (no K factors).
inline constexpr double kGammaZeroTol = 1e-10;

/// p = round(3 gamma l / (4 pi + 3 gamma)), q = round(pi l / (4 pi + 3 gamma)),
/// repaired (q first, then p) so that 4q + p <= l.
inline DepthSplit split_depth(int ell, double gamma) {
  require(std::isfinite(gamma) && gamma >= 0.0, ErrorKind::InvalidArgument,
          "gamma must be finite and nonnegative");
  require(ell >= 5 && ell >= 3.0 * gamma, ErrorKind::DepthTooSmall,
          "depth " + std::to_string(ell) + " < max(5, 3*gamma = " + std::to_string(3.0 * gamma) +
              ")");
  const bool orthogonal = gamma <= kGammaZeroTol;
  const double denom = 4.0 * kPi + 3.0 * gamma;
  DepthSplit s;
  s.p = orthogonal ? 0 : std::max(1, static_cast<int>(std::lround(3.0 * gamma * ell / denom)));
  s.q = std::max(1, static_cast<int>(std::lround(kPi * ell / denom)));
  while (4 * s.q + s.p > ell) {
    if (s.q > 1) {
      --s.q;
    } else {
      --s.p;
    }
  }
  s.padding = ell - 4 * s.q - s.p;
  return s;
}

inline double general_norm_bound(double gamma, int ell) {
  return (4.0 * kPi + 3.0 * gamma) / ell;
}

enum class LayerOrigin { VFactor, KFactor, UFactor, Padding, PsdRoot };

constexpr const char* to_string(LayerOrigin o) {
  switch (o) {
    case LayerOrigin::VFactor: return "V";
    case LayerOrigin::KFactor: return "K";
    case LayerOrigin::UFactor: return "U";
    case LayerOrigin::Padding: return "pad";
    case LayerOrigin::PsdRoot: return "psd";
  }
  return "?";
}

inline constexpr double kReconstructionTol = 1e-8;

struct FactorizationReport {
  LayerStack stack;
  double gamma = 0.0;
  double norm_bound_claimed = 0.0;
  double maxnorm_achieved = 0.0;
  double reconstruction_rel_error = 0.0;
  DepthSplit depth_split;
  std::vector<LayerOrigin> origins;

  bool certified() const {
    return maxnorm_achieved <= norm_bound_claimed &&
           reconstruction_rel_error <= kReconstructionTol;
  }
};

/// ||(I + A_l) ... (I + A_1) - R||_F / ||R||_F, recomputed from the layers.
inline double verify_factorization(const LayerStack& stack, const Mat& r) {
  require(stack.dim() == r.rows() && r.rows() == r.cols(), ErrorKind::DimensionMismatch,
          "stack is " + std::to_string(stack.dim()) + "-dimensional, target is " +
              std::to_string(r.rows()) + "x" + std::to_string(r.cols()));
  const double rn = r.norm();
  const double err = (stack.product() - r).norm();
  return rn > 0.0 ? err / rn : err;
}

inline double verify_factorization(const FactorizationReport& report, const Mat& r) {
  return verify_factorization(report.stack, r);
}

/// diag(R, -1); flips the sign of the determinant.
inline Mat augment_negative_det(const Mat& r) {
  require_square(r, "target");
  const Eigen::Index d = r.rows();
  Mat out = Mat::Zero(d + 1, d + 1);
  out.topLeftCorner(d, d) = r;
  out(d, d) = -1.0;
  return out;
}

struct RescaledTarget {
  Mat r;
  double scale = 1.0;
};

/// Scales R by c so that sigma_min(cR) = 1/sqrt(kappa), sigma_max(cR) = sqrt(kappa).
inline RescaledTarget rescale_target(const Mat& r) {
  gamma_of(r);
  const Vec s = singular_values(r);
  const double c = 1.0 / std::sqrt(s(0) * s(s.size() - 1));
  return {c * r, c};
}

/// Symmetric PSD path: every layer is R^{1/l} - I, with ||A_i|| <= 3 gamma / l.
inline FactorizationReport factorize_psd(const Mat& r, int ell) {
  require_square(r, "target");
  require_finite(r, "target");
  const double asym = (r - r.transpose()).norm();
  require(asym <= kSymmetryTol * std::max(1.0, r.norm()), ErrorKind::NotSymmetricPSD,
          "target is not symmetric (" + std::to_string(asym) + ")");
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (r + r.transpose()));
  const Vec z = eig.eigenvalues();
  const double zmax = z.maxCoeff();
  const double zmin = z.minCoeff();
  require(zmin >= -kSymmetryTol * std::max(1.0, zmax), ErrorKind::NotSymmetricPSD,
          "target has negative eigenvalue " + std::to_string(zmin));
  require(zmax > 0.0 && zmin > kSingularRatio * zmax, ErrorKind::SingularTarget,
          "target eigenvalues span [" + std::to_string(zmin) + ", " + std::to_string(zmax) + "]");
  const double gamma = std::max(std::abs(std::log(zmax)), std::abs(std::log(zmin)));
  require(ell >= 1 && ell >= gamma, ErrorKind::DepthTooSmall,
          "depth " + std::to_string(ell) + " < max(1, gamma = " + std::to_string(gamma) + ")");

  Vec step(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) step(i) = std::expm1(std::log(z(i)) / ell);
  Mat layer = eig.eigenvectors() * step.asDiagonal() * eig.eigenvectors().transpose();
  layer = 0.5 * (layer + layer.transpose());

  FactorizationReport report;
  report.stack = LayerStack(std::vector<Mat>(static_cast<std::size_t>(ell), layer));
  report.gamma = gamma;
  report.norm_bound_claimed = 3.0 * gamma / ell;
  report.maxnorm_achieved = spectral_norm(layer);
  report.reconstruction_rel_error = verify_factorization(report.stack, r);
  report.depth_split = {ell, 0, 0};
  report.origins.assign(static_cast<std::size_t>(ell), LayerOrigin::PsdRoot);
  return report;
}

namespace detail {

/// 2q near-identity layers whose residual product is the orthogonal matrix q_mat
/// (det +1): q roots of the rotation blocks, then q roots of the paired
/// reflections. All factors share one block basis, so they commute.
inline std::vector<Mat> orthogonal_root_layers(const Mat& q_mat, int q) {
  const CanonicalBlockForm raw = orthogonal_block_diagonalize(q_mat);
  const int pairs = raw.count(BlockKind::MinusOne) / 2;
  const CanonicalBlockForm form = pair_minus_ones(raw);
  const std::size_t first_pair = form.blocks.size() - static_cast<std::size_t>(pairs);
  const auto offsets = form.offsets();

  const Eigen::Index d = form.dim();
  Mat rot_step = Mat::Zero(d, d);
  Mat pair_step = Mat::Zero(d, d);
  for (std::size_t b = 0; b < form.blocks.size(); ++b) {
    const auto& block = form.blocks[b];
    if (block.kind != BlockKind::Rotation) continue;
    Mat& target = b >= first_pair ? pair_step : rot_step;
    target.block(offsets[b], offsets[b], 2, 2) = rotation_minus_identity(block.angle / q);
  }
  const Mat& s = form.basis;
  const Mat rot_layer = s * rot_step * s.transpose();
  const Mat pair_layer = s * pair_step * s.transpose();

  std::vector<Mat> out;
  out.reserve(2 * static_cast<std::size_t>(q));
  for (int j = 0; j < q; ++j) out.push_back(rot_layer);
  for (int j = 0; j < q; ++j) out.push_back(pair_layer);
  return out;
}

}  // namespace detail

/// General path for any R with det(R) > 0 and l >= max(3 gamma, 5).
/// The certified bound carries a factor 2 of rounding slack over (4 pi + 3 gamma) / l.
inline FactorizationReport factorize_general(const Mat& r, int ell) {
  const double gamma = gamma_of(r);
  const double det = r.determinant();
  require(det > 0.0, ErrorKind::NegativeDeterminant,
          "det(R) = " + std::to_string(det) + "; augment with an extra -1 dimension");
  const DepthSplit split = split_depth(ell, gamma);

  Svd f = svd(r);
  if (f.U.determinant() < 0.0) {
    // det(U) det(V) = +1 here, so both are -1.
    f.U.col(f.U.cols() - 1) *= -1.0;
    f.V.col(f.V.cols() - 1) *= -1.0;
  }

  const Eigen::Index d = r.rows();
  std::vector<Mat> layers;
  std::vector<LayerOrigin> origins;
  layers.reserve(static_cast<std::size_t>(ell));

  for (Mat& a : detail::orthogonal_root_layers(f.V.transpose(), split.q)) {
    layers.push_back(std::move(a));
    origins.push_back(LayerOrigin::VFactor);
  }
  if (split.p > 0) {
    Vec step(d);
    for (Eigen::Index i = 0; i < d; ++i) step(i) = std::expm1(std::log(f.K(i)) / split.p);
    const Mat k_layer = step.asDiagonal();
    for (int j = 0; j < split.p; ++j) {
      layers.push_back(k_layer);
      origins.push_back(LayerOrigin::KFactor);
    }
  }
  for (Mat& a : detail::orthogonal_root_layers(f.U, split.q)) {
    layers.push_back(std::move(a));
    origins.push_back(LayerOrigin::UFactor);
  }
  for (int j = 0; j < split.padding; ++j) {
    layers.push_back(Mat::Zero(d, d));
    origins.push_back(LayerOrigin::Padding);
  }

  FactorizationReport report;
  report.stack = LayerStack(std::move(layers));
  report.gamma = gamma;
  report.norm_bound_claimed = 2.0 * general_norm_bound(gamma, ell);
  report.maxnorm_achieved = report.stack.maxnorm();
  report.reconstruction_rel_error = verify_factorization(report.stack, r);
  report.depth_split = split;
  report.origins = std::move(origins);
  return report;
}

}  // namespace resid
