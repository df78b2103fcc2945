#pragma once

// Closed-form population risk of the linear residual model, its exact
// gradient, a finite-difference oracle, and the gradient-norm lower bound
//   ||grad f(A)||_F^2 >= 4 l (1 - tau)^(2l - 2) sigma_min(Sigma) (f(A) - C_opt)
// on the ball |||A||| <= tau < 1.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "resid/error.hpp"
#include "resid/factorize.hpp"
#include "resid/matcore.hpp"
#include "resid/rng.hpp"

namespace resid {

enum class Parameterization { Residual, Standard };

/// f(A) = excess + constant. Every R is reachable, so C_opt = constant.
struct RiskValue {
  double excess = 0.0;
  double constant = 0.0;

  double total() const { return excess + constant; }
};

/// Slice i holds df/dA_i.
struct GradStack {
  std::vector<Mat> slices;

  int depth() const { return static_cast<int>(slices.size()); }

  double squared_norm() const {
    double s = 0.0;
    for (const Mat& g : slices) s += g.squaredNorm();
    return s;
  }

  double frobenius_norm() const { return std::sqrt(squared_norm()); }
};

inline double relative_difference(const GradStack& a, const GradStack& b) {
  require(a.depth() == b.depth(), ErrorKind::DimensionMismatch, "gradient depths differ");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.slices.size(); ++i)
    diff += (a.slices[i] - b.slices[i]).squaredNorm();
  const double scale = std::max(a.frobenius_norm(), b.frobenius_norm());
  return scale > 0.0 ? std::sqrt(diff) / scale : std::sqrt(diff);
}

inline void require_compatible(const LayerStack& a, const Target& target) {
  require(a.depth() >= 1 && a.dim() == target.dim(), ErrorKind::DimensionMismatch,
          "stack dimension " + std::to_string(a.dim()) + " vs target dimension " +
              std::to_string(target.dim()));
}

/// E = (I + A_l) ... (I + A_1) - R.
inline Mat residual_error_matrix(const LayerStack& a, const Target& target) {
  require_compatible(a, target);
  return a.product() - target.R();
}

inline RiskValue excess_risk(const LayerStack& a, const Target& target) {
  const Mat e = residual_error_matrix(a, target);
  return {(e * target.sigma_sqrt()).squaredNorm(),
          static_cast<double>(target.dim()) * target.noise_var()};
}

/// f_std(A) - C with the plain product A_l ... A_1.
inline RiskValue standard_excess_risk(const LayerStack& a, const Target& target) {
  require_compatible(a, target);
  const Mat e = a.plain_product() - target.R();
  return {(e * target.sigma_sqrt()).squaredNorm(),
          static_cast<double>(target.dim()) * target.noise_var()};
}

inline RiskValue risk(const LayerStack& a, const Target& target, Parameterization p) {
  return p == Parameterization::Residual ? excess_risk(a, target) : standard_excess_risk(a, target);
}

namespace detail {

/// Shared closed form. With M_i the i-th factor (I + A_i or A_i):
///   df/dA_i = 2 (M_l ... M_{i+1})^T E Sigma (M_{i-1} ... M_1)^T.
inline GradStack product_gradient(const LayerStack& a, const Target& target, bool residual) {
  require_compatible(a, target);
  const std::size_t ell = a.layers().size();
  const Eigen::Index d = a.dim();
  const Mat id = Mat::Identity(d, d);
  auto factor = [&](std::size_t i) -> Mat { return residual ? Mat(id + a[i]) : a[i]; };

  // prefix[i] = M_i ... M_1 (prefix[0] = I); suffix[i] = M_l ... M_{i+1}.
  std::vector<Mat> prefix(ell + 1), suffix(ell + 1);
  prefix[0] = id;
  for (std::size_t i = 0; i < ell; ++i) prefix[i + 1] = factor(i) * prefix[i];
  suffix[ell] = id;
  for (std::size_t i = ell; i-- > 0;) suffix[i] = suffix[i + 1] * factor(i);

  const Mat e_sigma = (prefix[ell] - target.R()) * target.sigma();
  GradStack g;
  g.slices.reserve(ell);
  for (std::size_t i = 0; i < ell; ++i)
    g.slices.push_back(2.0 * suffix[i + 1].transpose() * e_sigma * prefix[i].transpose());
  return g;
}

}  // namespace detail

inline GradStack gradient(const LayerStack& a, const Target& target) {
  return detail::product_gradient(a, target, true);
}

inline GradStack standard_gradient(const LayerStack& a, const Target& target) {
  return detail::product_gradient(a, target, false);
}

inline GradStack gradient(const LayerStack& a, const Target& target, Parameterization p) {
  return detail::product_gradient(a, target, p == Parameterization::Residual);
}

inline constexpr double kDefaultFiniteDiffStep = 1e-5;

/// Central differences of the excess risk, entry by entry.
inline GradStack finite_diff_gradient(const LayerStack& a, const Target& target,
                                      double step = kDefaultFiniteDiffStep,
                                      Parameterization p = Parameterization::Residual) {
  require(step > 0.0 && std::isfinite(step), ErrorKind::InvalidArgument, "step must be > 0");
  require_compatible(a, target);
  std::vector<Mat> layers = a.layers();
  GradStack g;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Mat slice(a.dim(), a.dim());
    for (Eigen::Index r = 0; r < a.dim(); ++r) {
      for (Eigen::Index c = 0; c < a.dim(); ++c) {
        const double keep = layers[i](r, c);
        layers[i](r, c) = keep + step;
        const double up = risk(LayerStack(layers), target, p).excess;
        layers[i](r, c) = keep - step;
        const double down = risk(LayerStack(layers), target, p).excess;
        layers[i](r, c) = keep;
        slice(r, c) = (up - down) / (2.0 * step);
      }
    }
    g.slices.push_back(std::move(slice));
  }
  return g;
}

/// 4 l (1 - tau)^(2l - 2) sigma_min(Sigma).
inline double lower_bound_coefficient(int ell, double tau, double sigma_min_cov) {
  return 4.0 * ell * std::pow(1.0 - tau, 2.0 * ell - 2.0) * sigma_min_cov;
}

inline constexpr double kBoundRelTol = 1e-9;

struct BoundCheck {
  double lhs = 0.0;  // ||grad f||_F^2
  double rhs = 0.0;  // coefficient * excess
  double excess = 0.0;
  double coefficient = 0.0;
  bool holds = true;

  /// (lhs - rhs) / rhs, or 0 when rhs = 0.
  double relative_slack() const { return rhs > 0.0 ? (lhs - rhs) / rhs : 0.0; }
};

/// Relative slack on |||A||| <= tau.
inline constexpr double kBallTol = 1e-12;

inline bool within_ball(double maxnorm, double tau) { return maxnorm <= tau * (1.0 + kBallTol); }

inline BoundCheck check_gradient_lower_bound(const LayerStack& a, const Target& target, double tau) {
  require(tau >= 0.0 && tau < 1.0, ErrorKind::InvalidArgument, "tau must lie in [0, 1)");
  const double maxnorm = a.maxnorm();
  require(within_ball(maxnorm, tau), ErrorKind::OutsideBall,
          "|||A||| = " + std::to_string(maxnorm) + " > tau = " + std::to_string(tau));
  BoundCheck out;
  out.excess = excess_risk(a, target).excess;
  out.lhs = gradient(a, target).squared_norm();
  out.coefficient = lower_bound_coefficient(a.depth(), tau, target.sigma_min_cov());
  out.rhs = out.coefficient * out.excess;
  out.holds = out.lhs >= out.rhs * (1.0 - kBoundRelTol);
  return out;
}

/// Slices are Gaussian directions rescaled to a spectral norm drawn uniformly
/// from [0, tau].
inline LayerStack sample_stack_in_ball(Eigen::Index dim, int ell, double tau, Rng& rng) {
  std::vector<Mat> layers;
  layers.reserve(static_cast<std::size_t>(ell));
  for (int i = 0; i < ell; ++i) {
    Mat g = gaussian_matrix(dim, dim, rng);
    const double norm = spectral_norm(g);
    const double radius = tau * uniform01(rng);
    layers.push_back(norm > 0.0 ? Mat(g * (radius / norm)) : Mat::Zero(dim, dim));
  }
  return LayerStack(std::move(layers));
}

}  // namespace resid
