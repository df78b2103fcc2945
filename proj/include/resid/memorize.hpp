#pragma once

// Constructive ReLU residual network that reproduces the labels of any
// separated dataset exactly.
//
//   h_0 = A_0 x,   h_j = h_{j-1} + V_j ReLU(U_j h_{j-1} + s_j),   y = V ReLU(U h_l + s)
//
// A_0 embeds the points, each middle block rewrites one batch of k hidden
// states to the surrogate vector of its class and leaves every other state
// untouched, and the readout block sends surrogate q_j to e_j.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "resid/error.hpp"
#include "resid/matcore.hpp"
#include "resid/rng.hpp"

namespace resid {

inline constexpr double kUnitNormTol = 1e-10;
inline constexpr double kDuplicateTol = 1e-12;
inline constexpr double kFitTol = 1e-8;

/// Minimum pairwise squared distance, i.e. the certified separation rho.
/// Points are the rows of `points`.
inline double check_separation(const Mat& points) {
  const Eigen::Index n = points.rows();
  require(n >= 2, ErrorKind::InvalidArgument, "separation needs at least two points");
  double best = std::numeric_limits<double>::infinity();
  Eigen::Index bi = 0, bj = 1;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d2 = (points.row(i) - points.row(j)).squaredNorm();
      if (d2 < best) {
        best = d2;
        bi = i;
        bj = j;
      }
    }
  }
  require(best >= kDuplicateTol, ErrorKind::DuplicatePoints,
          "points " + std::to_string(bi + 1) + " and " + std::to_string(bj + 1) +
              " coincide (squared distance " + std::to_string(best) + ")");
  return best;
}

/// n unit-norm points (rows) with labels in 1..r and pairwise squared
/// distance at least rho.
struct Dataset {
  Mat points;
  std::vector<int> labels;
  int num_classes = 0;
  double rho = 0.0;

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }

  /// Validates and, when rho is absent, certifies it from the data (a single
  /// point gets rho = 1). num_classes defaults to the largest label.
  static Dataset make(Mat points, std::vector<int> labels, std::optional<double> rho = std::nullopt,
                      std::optional<int> num_classes = std::nullopt) {
    const Eigen::Index n = points.rows();
    require(n >= 1 && points.cols() >= 1, ErrorKind::InvalidDataset, "dataset is empty");
    require(points.allFinite(), ErrorKind::InvalidDataset, "dataset has non-finite entries");
    require(static_cast<Eigen::Index>(labels.size()) == n, ErrorKind::InvalidDataset,
            "label count differs from point count");
    const int max_label = *std::max_element(labels.begin(), labels.end());
    const int r = num_classes.value_or(max_label);
    for (std::size_t i = 0; i < labels.size(); ++i)
      require(labels[i] >= 1 && labels[i] <= r, ErrorKind::InvalidDataset,
              "label of point " + std::to_string(i + 1) + " outside 1.." + std::to_string(r));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double norm = points.row(i).norm();
      require(std::abs(norm - 1.0) <= kUnitNormTol, ErrorKind::InvalidDataset,
              "point " + std::to_string(i + 1) + " has norm " + std::to_string(norm));
    }
    double certified = 1.0;
    if (n >= 2) certified = check_separation(points);
    const double chosen = rho.value_or(certified);
    require(chosen > 0.0, ErrorKind::InvalidDataset, "rho must be positive");
    require(n < 2 || certified >= chosen, ErrorKind::SeparationViolated,
            "data separation " + std::to_string(certified) + " < rho = " + std::to_string(chosen));
    return Dataset{std::move(points), std::move(labels), r, chosen};
  }
};

/// T_{U,V,s}(h) = V ReLU(U h + s).
struct ResidualBlock {
  Mat U;
  Mat V;
  Vec s;
};

inline void require_composable(const ResidualBlock& b, Eigen::Index in_dim) {
  require(b.U.cols() == in_dim && b.s.size() == b.U.rows() && b.V.cols() == b.U.rows(),
          ErrorKind::DimensionMismatch,
          "block U is " + std::to_string(b.U.rows()) + "x" + std::to_string(b.U.cols()) +
              ", V is " + std::to_string(b.V.rows()) + "x" + std::to_string(b.V.cols()) +
              ", s has " + std::to_string(b.s.size()) + ", input has " + std::to_string(in_dim));
}

inline Vec block_apply(const ResidualBlock& b, const Vec& h) {
  require_composable(b, h.size());
  return b.V * (b.U * h + b.s).cwiseMax(0.0);
}

/// Column-wise block_apply.
inline Mat block_apply(const ResidualBlock& b, const Mat& h) {
  require_composable(b, h.rows());
  Mat pre = b.U * h;
  pre.colwise() += b.s;
  return b.V * pre.cwiseMax(0.0);
}

/// Smallest gap (1 - 2 rho') - <alpha_i, alpha_j> over i in `selected`,
/// j != i. Positive means every non-matching pre-activation is negative.
inline double selector_margin(const Mat& alphas, const std::vector<Eigen::Index>& selected,
                              double rho_prime) {
  const double threshold = 1.0 - 2.0 * rho_prime;
  double margin = std::numeric_limits<double>::infinity();
  if (selected.empty() || alphas.cols() < 2) return margin;
  Mat rows(alphas.rows(), static_cast<Eigen::Index>(selected.size()));
  for (std::size_t a = 0; a < selected.size(); ++a) rows.col(a) = alphas.col(selected[a]);
  const Mat gram = rows.transpose() * alphas;
  for (std::size_t a = 0; a < selected.size(); ++a) {
    for (Eigen::Index j = 0; j < alphas.cols(); ++j) {
      if (j == selected[a]) continue;
      margin = std::min(margin, threshold - gram(static_cast<Eigen::Index>(a), j));
    }
  }
  return margin;
}

namespace detail {

inline void check_norm_band(const Mat& alphas, double rho_prime, ErrorKind kind) {
  for (Eigen::Index i = 0; i < alphas.cols(); ++i) {
    const double n2 = alphas.col(i).squaredNorm();
    require(n2 >= 1.0 - rho_prime && n2 <= 1.0 + rho_prime, kind,
            "||alpha_" + std::to_string(i + 1) + "||^2 = " + std::to_string(n2) +
                " outside [1 - rho', 1 + rho'] with rho' = " + std::to_string(rho_prime));
  }
}

/// U rows alpha_i (i in selected, padded with zero rows up to `width`),
/// s = -(1 - 2 rho'), V column a = outputs_a / (||alpha_i||^2 - (1 - 2 rho')).
inline ResidualBlock selector_from_outputs(const Mat& alphas, const Mat& outputs,
                                           const std::vector<Eigen::Index>& selected,
                                           Eigen::Index width, double rho_prime) {
  require(rho_prime > 0.0 && rho_prime < 0.5, ErrorKind::InvalidArgument,
          "rho' must lie in (0, 1/2)");
  require(static_cast<Eigen::Index>(selected.size()) <= width, ErrorKind::InvalidArgument,
          "selector set larger than block width");
  check_norm_band(alphas, rho_prime, ErrorKind::SeparationViolated);
  const double margin = selector_margin(alphas, selected, rho_prime);
  require(margin >= 0.0, ErrorKind::SeparationViolated,
          "selected state correlates with another: margin " + std::to_string(margin));

  const double threshold = 1.0 - 2.0 * rho_prime;
  ResidualBlock b;
  b.U = Mat::Zero(width, alphas.rows());
  b.V = Mat::Zero(outputs.rows(), width);
  b.s = Vec::Constant(width, -threshold);
  for (std::size_t a = 0; a < selected.size(); ++a) {
    const auto row = static_cast<Eigen::Index>(a);
    const Eigen::Index i = selected[a];
    b.U.row(row) = alphas.col(i).transpose();
    b.V.col(row) = outputs.col(row) / (alphas.col(i).squaredNorm() - threshold);
  }
  return b;
}

}  // namespace detail

/// Block with T(alpha_i) = beta_i - alpha_i for i in `selected` and
/// T(alpha_j) = 0 for every other column. Columns of alphas/betas are the
/// vectors; the block width equals the state dimension.
inline ResidualBlock build_selector_block(const Mat& alphas, const Mat& betas,
                                          const std::vector<Eigen::Index>& selected,
                                          double rho_prime) {
  require(alphas.rows() == betas.rows() && alphas.cols() == betas.cols(),
          ErrorKind::DimensionMismatch, "alphas and betas differ in shape");
  Mat outputs(alphas.rows(), static_cast<Eigen::Index>(selected.size()));
  for (std::size_t a = 0; a < selected.size(); ++a) {
    require(selected[a] >= 0 && selected[a] < alphas.cols(), ErrorKind::InvalidArgument,
            "selector index out of range");
    outputs.col(static_cast<Eigen::Index>(a)) = betas.col(selected[a]) - alphas.col(selected[a]);
  }
  return detail::selector_from_outputs(alphas, outputs, selected, alphas.rows(), rho_prime);
}

enum class ProjectionKind {
  /// Random isometry on the span of the data (QR of a Gaussian matrix).
  Isometric,
  /// i.i.d. N(0, 1/k) entries.
  Gaussian,
};

struct Projection {
  Mat A0;  // k x d
  Mat Z;   // k x n, column i = A0 x_i
};

/// Checks the relaxed separation the middle blocks rely on:
/// ||z_i||^2 in [1 - rho', 1 + rho'], ||z_i - z_j||^2 >= rho', and
/// <z_i, z_j> <= 1 - 3 rho' so each selector keeps a margin of rho'.
inline void validate_projection(const Mat& z, double rho_prime) {
  detail::check_norm_band(z, rho_prime, ErrorKind::ProjectionFailed);
  const Eigen::Index n = z.cols();
  if (n < 2) return;
  const Mat gram = z.transpose() * z;
  const double inner_cap = 1.0 - 3.0 * rho_prime;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d2 = gram(i, i) + gram(j, j) - 2.0 * gram(i, j);
      require(d2 >= rho_prime, ErrorKind::ProjectionFailed,
              "||z_" + std::to_string(i + 1) + " - z_" + std::to_string(j + 1) +
                  "||^2 = " + std::to_string(d2) + " < rho'");
      require(gram(i, j) <= inner_cap + 1e-9 * rho_prime, ErrorKind::ProjectionFailed,
              "<z_" + std::to_string(i + 1) + ", z_" + std::to_string(j + 1) +
                  "> = " + std::to_string(gram(i, j)) + " > 1 - 3 rho'");
    }
  }
}

/// Applies a given embedding (test hook and shared tail of jl_project).
inline Projection project_with(const Mat& points, Mat a0, double rho_prime) {
  require(a0.cols() == points.cols(), ErrorKind::DimensionMismatch,
          "embedding expects dimension " + std::to_string(a0.cols()));
  Projection p{std::move(a0), Mat()};
  p.Z = p.A0 * points.transpose();
  validate_projection(p.Z, rho_prime);
  return p;
}

namespace detail {

inline Mat haar_isometry(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const Mat g = gaussian_matrix(rows, cols, rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(rows, cols);
  const Mat r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < cols; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

}  // namespace detail

/// Random embedding of the points (rows) into R^k followed by validation.
/// Isometric: for k >= d a Haar isometry R^d -> R^k; for k < d a Haar
/// isometry from the span of the data when its rank is at most k. Otherwise,
/// and for ProjectionKind::Gaussian, A0 has i.i.d. N(0, 1/k) entries.
inline Projection jl_project(const Mat& points, Eigen::Index k, std::uint64_t seed,
                             double rho_prime, ProjectionKind kind = ProjectionKind::Isometric) {
  require(k >= 1, ErrorKind::InvalidArgument, "embedding dimension must be >= 1");
  const Eigen::Index d = points.cols();
  Rng rng(seed);
  if (kind == ProjectionKind::Isometric) {
    if (k >= d) return project_with(points, detail::haar_isometry(k, d, rng), rho_prime);
    Eigen::JacobiSVD<Mat> span(points.transpose(), Eigen::ComputeThinU);
    const Vec sv = span.singularValues();
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
      if (sv(i) > 1e-10 * sv(0)) ++rank;
    if (rank <= k) {
      const Mat basis = span.matrixU().leftCols(rank);  // d x rank
      return project_with(points, detail::haar_isometry(k, rank, rng) * basis.transpose(),
                          rho_prime);
    }
  }
  Mat a0 = gaussian_matrix(k, d, rng) / std::sqrt(static_cast<double>(k));
  return project_with(points, std::move(a0), rho_prime);
}

inline constexpr int kSurrogateDraws = 10000;
inline constexpr double kSurrogateCorrelation = 0.5;

/// r random unit vectors in R^k (columns) drawn one at a time by rejection:
/// each must satisfy |<q_a, q_b>| < 1/2 against the earlier ones and, when z
/// is given, <q, z_i> <= 1 - 3 rho' for every embedded point.
inline Mat sample_surrogates(int r, Eigen::Index k, std::uint64_t seed, const Mat* z = nullptr,
                             double rho_prime = 0.0) {
  require(r >= 1 && k >= 1, ErrorKind::InvalidArgument, "need r >= 1 and k >= 1");
  require(z == nullptr || z->rows() == k, ErrorKind::DimensionMismatch,
          "embedded points live in a different dimension");
  Rng rng(seed);
  Mat q(k, r);
  const double z_cap = 1.0 - 3.0 * rho_prime;
  for (int a = 0; a < r; ++a) {
    bool accepted = false;
    for (int draw = 0; draw < kSurrogateDraws && !accepted; ++draw) {
      const Vec cand = random_unit_vector(k, rng);
      if (a > 0 && (q.leftCols(a).transpose() * cand).cwiseAbs().maxCoeff() >= kSurrogateCorrelation)
        continue;
      if (z != nullptr && z->cols() > 0 && (z->transpose() * cand).maxCoeff() > z_cap) continue;
      q.col(a) = cand;
      accepted = true;
    }
    require(accepted, ErrorKind::SurrogateCorrelated,
            "no admissible surrogate " + std::to_string(a + 1) + " of " + std::to_string(r) +
                " in dimension " + std::to_string(k) + " after " +
                std::to_string(kSurrogateDraws) + " draws");
  }
  return q;
}

struct MemorizerNet {
  Mat A0;                            // k x d
  std::vector<ResidualBlock> blocks;  // k x k each
  ResidualBlock final_block;         // U: r x k, V: r x r
  Mat surrogates;                    // k x r
  Eigen::Index k = 0;
  int ell = 0;
  double rho = 0.0;
  double rho_prime = 0.0;
  std::uint64_t seed = 0;
  int attempts = 0;

  Eigen::Index input_dim() const { return A0.cols(); }
  int num_classes() const { return static_cast<int>(surrogates.cols()); }

  /// Weight entries only: A0, every U and V, and the readout.
  Eigen::Index parameter_count() const {
    Eigen::Index c = A0.size() + final_block.U.size() + final_block.V.size();
    for (const auto& b : blocks) c += b.U.size() + b.V.size();
    return c;
  }

  Eigen::Index bias_count() const {
    Eigen::Index c = final_block.s.size();
    for (const auto& b : blocks) c += b.s.size();
    return c;
  }
};

/// d k + 2 l k^2 + k r + r^2.
inline Eigen::Index parameter_bound(Eigen::Index d, Eigen::Index k, Eigen::Index ell,
                                    Eigen::Index r) {
  return d * k + 2 * ell * k * k + k * r + r * r;
}

struct MemorizeOptions {
  double jl_constant = 10.0;
  int retries = 5;
  ProjectionKind projection = ProjectionKind::Isometric;
};

/// k = ceil(c ln(n) / rho^2), floored at max(ceil(4 ln r) + 1, 2), capped at n.
inline Eigen::Index choose_width(Eigen::Index n, int r, double rho, double c = 10.0) {
  const double jl = std::ceil(c * std::log(static_cast<double>(n)) / (rho * rho));
  const double floor = std::max(std::ceil(4.0 * std::log(static_cast<double>(r))) + 1.0, 2.0);
  const double k = std::min(std::max(jl, floor), static_cast<double>(n));
  return std::max<Eigen::Index>(1, static_cast<Eigen::Index>(k));
}

/// Selector slack used by the construction: rho' = min(rho, 1) / 6. Unit
/// points with squared separation rho have <x_i, x_j> <= 1 - rho/2 = 1 - 3 rho',
/// which leaves a margin of rho' below the bias 1 - 2 rho'.
inline double rho_prime_for(double rho) { return std::min(rho, 1.0) / 6.0; }

/// Target surrogate v_i = q_{label(i)} for every point (columns).
inline Mat surrogate_targets(const Mat& surrogates, const std::vector<int>& labels) {
  Mat v(surrogates.rows(), static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i)
    v.col(static_cast<Eigen::Index>(i)) = surrogates.col(labels[i] - 1);
  return v;
}

/// Indices handled by middle block j (0-based): [j k, min((j + 1) k, n)).
inline std::vector<Eigen::Index> batch_indices(int j, Eigen::Index k, Eigen::Index n) {
  std::vector<Eigen::Index> s;
  for (Eigen::Index i = j * k; i < std::min((j + 1) * k, n); ++i) s.push_back(i);
  return s;
}

inline MemorizerNet build_memorizer(const Dataset& data, std::uint64_t seed,
                                    const MemorizeOptions& opt = {}) {
  require(opt.retries >= 1, ErrorKind::InvalidArgument, "retry budget must be >= 1");
  const Eigen::Index n = data.size();
  const int r = data.num_classes;
  const Eigen::Index k = choose_width(n, r, data.rho, opt.jl_constant);
  const int ell = static_cast<int>((n + k - 1) / k);
  const double rho_prime = rho_prime_for(data.rho);

  std::optional<Error> last;
  for (int attempt = 0; attempt < opt.retries; ++attempt) {
    try {
      MemorizerNet net;
      net.k = k;
      net.ell = ell;
      net.rho = data.rho;
      net.rho_prime = rho_prime;
      net.seed = seed;
      net.attempts = attempt + 1;

      Projection proj = jl_project(data.points, k, child_seed(seed, "memorize/jl", attempt),
                                   rho_prime, opt.projection);
      net.A0 = std::move(proj.A0);
      net.surrogates = sample_surrogates(
          r, k, child_seed(seed, "memorize/surrogates", attempt), &proj.Z, rho_prime);
      const Mat v = surrogate_targets(net.surrogates, data.labels);

      Mat h = std::move(proj.Z);
      for (int j = 0; j < ell; ++j) {
        const auto selected = batch_indices(j, k, n);
        ResidualBlock block = build_selector_block(h, v, selected, rho_prime);
        h += block_apply(block, h);
        net.blocks.push_back(std::move(block));
      }

      std::vector<Eigen::Index> all(static_cast<std::size_t>(r));
      for (int a = 0; a < r; ++a) all[static_cast<std::size_t>(a)] = a;
      net.final_block = detail::selector_from_outputs(
          net.surrogates, Mat::Identity(r, r), all, static_cast<Eigen::Index>(r), rho_prime);
      return net;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ProjectionFailed && e.kind() != ErrorKind::SurrogateCorrelated &&
          e.kind() != ErrorKind::SeparationViolated)
        throw;
      last = e;
    }
  }
  throw Error(last->kind(), "retry budget of " + std::to_string(opt.retries) +
                                " exhausted; last failure: " + last->what());
}

/// Hidden state after the l residual blocks, for a batch of inputs (rows).
inline Mat hidden_states(const MemorizerNet& net, const Mat& points) {
  require(points.cols() == net.input_dim(), ErrorKind::DimensionMismatch,
          "inputs have dimension " + std::to_string(points.cols()) + ", network expects " +
              std::to_string(net.input_dim()));
  Mat h = net.A0 * points.transpose();
  for (const auto& b : net.blocks) h += block_apply(b, h);
  return h;
}

inline Vec forward(const MemorizerNet& net, const Vec& x) {
  require(x.size() == net.input_dim(), ErrorKind::DimensionMismatch,
          "input has dimension " + std::to_string(x.size()) + ", network expects " +
              std::to_string(net.input_dim()));
  Vec h = net.A0 * x;
  for (const auto& b : net.blocks) h += block_apply(b, h);
  return block_apply(net.final_block, h);
}

/// Outputs for a batch of inputs (rows); column i is the output for row i.
inline Mat forward_batch(const MemorizerNet& net, const Mat& points) {
  return block_apply(net.final_block, hidden_states(net, points));
}

struct FitReport {
  double fraction = 0.0;
  double max_deviation = 0.0;
  /// Max deviation of h_j from its expected value after block j = 1..l.
  std::vector<double> layer_deviation;
  /// First block (1-based) whose output breaks the hidden-state invariant.
  std::optional<int> first_broken_layer;

  bool layers_hold() const { return !first_broken_layer.has_value(); }
};

inline FitReport verify_fit(const MemorizerNet& net, const Dataset& data) {
  require(data.dim() == net.input_dim(), ErrorKind::DimensionMismatch,
          "dataset dimension differs from the network input");
  require(data.num_classes <= net.num_classes(), ErrorKind::DimensionMismatch,
          "dataset has more classes than the network");
  const Eigen::Index n = data.size();
  FitReport rep;

  const Mat z = net.A0 * data.points.transpose();
  const Mat v = surrogate_targets(net.surrogates, data.labels);
  Mat h = z;
  for (std::size_t j = 0; j < net.blocks.size(); ++j) {
    h += block_apply(net.blocks[j], h);
    const Eigen::Index done = std::min<Eigen::Index>(static_cast<Eigen::Index>(j + 1) * net.k, n);
    double dev = 0.0;
    if (done > 0) dev = (h.leftCols(done) - v.leftCols(done)).cwiseAbs().maxCoeff();
    if (done < n) dev = std::max(dev, (h.rightCols(n - done) - z.rightCols(n - done)).cwiseAbs().maxCoeff());
    rep.layer_deviation.push_back(dev);
    if (!(dev <= kFitTol) && !rep.first_broken_layer) rep.first_broken_layer = static_cast<int>(j + 1);
  }

  const Mat y = block_apply(net.final_block, h);
  Eigen::Index fitted = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec e = Vec::Zero(y.rows());
    e(data.labels[static_cast<std::size_t>(i)] - 1) = 1.0;
    const double dev = (y.col(i) - e).cwiseAbs().maxCoeff();
    rep.max_deviation = std::max(rep.max_deviation, dev);
    if (dev <= kFitTol) ++fitted;
  }
  rep.fraction = static_cast<double>(fitted) / static_cast<double>(n);
  return rep;
}

}  // namespace resid
