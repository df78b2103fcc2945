#pragma once

// Deterministic gradient descent on the closed-form population risk.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "resid/error.hpp"
#include "resid/factorize.hpp"
#include "resid/landscape.hpp"
#include "resid/rng.hpp"

namespace resid {

enum class InitKind { Zero, GaussianScale, Factorized };

struct Init {
  InitKind kind = InitKind::Zero;
  /// Entry standard deviation for GaussianScale; <= 0 selects 0.01 / depth.
  double sigma = 0.0;
};

inline constexpr double kDivergenceThreshold = 1e12;
inline constexpr double kStuckGradTol = 1e-12;
inline constexpr int kMaxHalvings = 60;

struct TrainConfig {
  Target target;
  int depth = 1;
  Parameterization parameterization = Parameterization::Residual;
  Init init{};
  double step_size = 0.05;
  int max_steps = 1000;
  double stop_excess = 0.0;
  std::optional<double> tau_monitor{};
  std::uint64_t seed = 0;
  /// Halve the step until the risk does not increase.
  bool backtracking = false;
  /// Project every iterate onto the ball of this radius.
  std::optional<double> project_tau{};
};

struct StepRecord {
  int step = 0;
  double excess = 0.0;
  double grad_norm = 0.0;
  double maxnorm = 0.0;
  /// ||grad||^2 - 4 l (1-tau)^(2l-2) sigma_min excess; NaN outside the ball
  /// or when no monitor radius is set.
  double bound_slack = std::nan("");
  /// Step size used to leave this iterate (after backtracking).
  double step_size = 0.0;
};

enum class Termination { StopExcess, MaxSteps, Diverged, StuckCriticalPoint };

constexpr const char* to_string(Termination t) {
  switch (t) {
    case Termination::StopExcess: return "stop_excess";
    case Termination::MaxSteps: return "max_steps";
    case Termination::Diverged: return "diverged";
    case Termination::StuckCriticalPoint: return "stuck_critical_point";
  }
  return "?";
}

struct TrainTrace {
  std::vector<StepRecord> records;
  LayerStack final_stack;
  Termination termination = Termination::MaxSteps;
  /// Set when a monitor radius is configured and some iterate had |||A||| > tau.
  bool left_ball = false;
};

inline void validate(const TrainConfig& c) {
  require(c.depth >= 1, ErrorKind::InvalidArgument, "depth must be >= 1");
  require(c.step_size > 0.0 && std::isfinite(c.step_size), ErrorKind::InvalidArgument,
          "step_size must be > 0");
  require(c.max_steps >= 1, ErrorKind::InvalidArgument, "max_steps must be >= 1");
  require(c.stop_excess >= 0.0, ErrorKind::InvalidArgument, "stop_excess must be >= 0");
  if (c.tau_monitor)
    require(*c.tau_monitor > 0.0 && *c.tau_monitor < 1.0, ErrorKind::InvalidArgument,
            "tau_monitor must lie in (0, 1)");
  if (c.project_tau)
    require(*c.project_tau > 0.0 && *c.project_tau < 1.0, ErrorKind::InvalidArgument,
            "projection radius must lie in (0, 1)");
}

/// Rescales each slice with ||A_i|| > tau down to spectral norm tau.
inline LayerStack project_to_ball(const LayerStack& a, double tau) {
  require(tau > 0.0 && tau < 1.0, ErrorKind::InvalidArgument, "tau must lie in (0, 1)");
  std::vector<Mat> layers = a.layers();
  for (Mat& slice : layers) {
    const double norm = spectral_norm(slice);
    if (norm > tau) slice *= tau / norm;
  }
  return LayerStack(std::move(layers));
}

inline LayerStack initial_stack(const TrainConfig& c) {
  const Eigen::Index d = c.target.dim();
  switch (c.init.kind) {
    case InitKind::Zero:
      return LayerStack::zeros(d, c.depth);
    case InitKind::GaussianScale: {
      const double sigma = c.init.sigma > 0.0 ? c.init.sigma : 0.01 / c.depth;
      Rng rng = make_rng(c.seed, "train/init");
      std::vector<Mat> layers;
      for (int i = 0; i < c.depth; ++i) layers.push_back(sigma * gaussian_matrix(d, d, rng));
      return LayerStack(std::move(layers));
    }
    case InitKind::Factorized:
      return factorize_general(c.target.R(), c.depth).stack;
  }
  return LayerStack::zeros(d, c.depth);
}

namespace detail {

inline LayerStack descend(const LayerStack& a, const GradStack& g, double eta) {
  std::vector<Mat> layers = a.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i] -= eta * g.slices[i];
  return LayerStack(std::move(layers));
}

inline bool diverged(double excess) {
  return !std::isfinite(excess) || excess > kDivergenceThreshold;
}

}  // namespace detail

/// Iterates A <- A - eta grad f(A). Stops on stop_excess, max_steps or
/// divergence (reported through the termination reason, not thrown).
inline TrainTrace run_gd(const TrainConfig& c) {
  validate(c);
  const Parameterization param = c.parameterization;
  TrainTrace trace;
  LayerStack a = initial_stack(c);
  if (c.project_tau) a = project_to_ball(a, *c.project_tau);
  bool always_stuck = true;

  for (int t = 0;; ++t) {
    StepRecord rec;
    rec.step = t;
    rec.excess = risk(a, c.target, param).excess;
    if (detail::diverged(rec.excess)) {
      rec.grad_norm = std::nan("");
      rec.maxnorm = std::nan("");
      trace.records.push_back(rec);
      trace.termination = Termination::Diverged;
      break;
    }
    const GradStack g = gradient(a, c.target, param);
    rec.grad_norm = g.frobenius_norm();
    rec.maxnorm = a.maxnorm();
    if (c.tau_monitor) {
      if (within_ball(rec.maxnorm, *c.tau_monitor)) {
        rec.bound_slack = g.squared_norm() - lower_bound_coefficient(a.depth(), *c.tau_monitor,
                                                                    c.target.sigma_min_cov()) *
                                                rec.excess;
      } else {
        trace.left_ball = true;
      }
    }
    if (!(rec.grad_norm <= kStuckGradTol)) always_stuck = false;

    if (rec.excess <= c.stop_excess) {
      trace.records.push_back(rec);
      trace.termination = Termination::StopExcess;
      break;
    }
    if (t == c.max_steps) {
      trace.records.push_back(rec);
      trace.termination = (param == Parameterization::Standard && always_stuck)
                              ? Termination::StuckCriticalPoint
                              : Termination::MaxSteps;
      break;
    }

    double eta = c.step_size;
    LayerStack next = detail::descend(a, g, eta);
    if (c.backtracking) {
      for (int h = 0; h < kMaxHalvings; ++h) {
        const double e = risk(next, c.target, param).excess;
        if (std::isfinite(e) && e <= rec.excess) break;
        eta *= 0.5;
        next = detail::descend(a, g, eta);
      }
    }
    if (c.project_tau) next = project_to_ball(next, *c.project_tau);
    rec.step_size = eta;
    trace.records.push_back(rec);
    a = std::move(next);
  }
  trace.final_stack = std::move(a);
  return trace;
}

}  // namespace resid
