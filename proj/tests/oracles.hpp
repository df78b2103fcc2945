#pragma once

// Reference computations written independently of the library: plain loops
// and textbook iterations, no calls into resid beyond the Mat/Vec aliases.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c = Mat::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index k = 0; k < a.cols(); ++k)
      for (Eigen::Index j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
  return c;
}

inline double frobenius(const Mat& m) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) s += m.data()[i] * m.data()[i];
  return std::sqrt(s);
}

/// Largest singular value by power iteration on M^T M.
inline double power_norm(const Mat& m, int iters = 5000) {
  const Mat g = matmul(m.transpose(), m);
  Vec v = Vec::Ones(m.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += 0.01 * static_cast<double>(i);
  v /= v.norm();
  double lambda = 0.0;
  for (int t = 0; t < iters; ++t) {
    Vec w = g * v;
    const double n = w.norm();
    if (n == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / n;
    if (std::abs(next - lambda) <= 1e-15 * std::max(1.0, next) && t > 20) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return std::sqrt(std::max(0.0, lambda));
}

/// (I + A_l) ... (I + A_1) with A_1 applied first.
inline Mat residual_product(const std::vector<Mat>& layers) {
  const Eigen::Index d = layers.front().rows();
  Mat p = Mat::Identity(d, d);
  for (const Mat& a : layers) p = matmul(Mat(Mat::Identity(d, d) + a), p);
  return p;
}

inline Mat plain_product(const std::vector<Mat>& layers) {
  const Eigen::Index d = layers.front().rows();
  Mat p = Mat::Identity(d, d);
  for (const Mat& a : layers) p = matmul(a, p);
  return p;
}

/// tr(E Sigma E^T), the excess population risk written without Sigma^{1/2}.
inline double excess(const std::vector<Mat>& layers, const Mat& r, const Mat& sigma,
                     bool residual = true) {
  const Mat e = (residual ? residual_product(layers) : plain_product(layers)) - r;
  return matmul(matmul(e, sigma), e.transpose()).trace();
}

/// Central differences of `excess`.
inline std::vector<Mat> fd_gradient(std::vector<Mat> layers, const Mat& r, const Mat& sigma,
                                    double h = 1e-5, bool residual = true) {
  std::vector<Mat> g;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Mat s(layers[l].rows(), layers[l].cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      for (Eigen::Index j = 0; j < s.cols(); ++j) {
        const double keep = layers[l](i, j);
        layers[l](i, j) = keep + h;
        const double up = excess(layers, r, sigma, residual);
        layers[l](i, j) = keep - h;
        const double down = excess(layers, r, sigma, residual);
        layers[l](i, j) = keep;
        s(i, j) = (up - down) / (2.0 * h);
      }
    }
    g.push_back(s);
  }
  return g;
}

inline double stack_rel_diff(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  double diff = 0.0, scale_a = 0.0, scale_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]).squaredNorm();
    scale_a += a[i].squaredNorm();
    scale_b += b[i].squaredNorm();
  }
  const double scale = std::sqrt(std::max(scale_a, scale_b));
  return scale > 0.0 ? std::sqrt(diff) / scale : std::sqrt(diff);
}

/// Neuron-by-neuron evaluation of V ReLU(U h + s).
inline Vec relu_block(const Mat& u, const Mat& v, const Vec& s, const Vec& h) {
  Vec out = Vec::Zero(v.rows());
  for (Eigen::Index n = 0; n < u.rows(); ++n) {
    double pre = s(n);
    for (Eigen::Index j = 0; j < u.cols(); ++j) pre += u(n, j) * h(j);
    if (pre <= 0.0) continue;
    for (Eigen::Index o = 0; o < v.rows(); ++o) out(o) += v(o, n) * pre;
  }
  return out;
}

/// Smallest singular value from the eigenvalues of M^T M (self-adjoint solver).
inline double sigma_min(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(matmul(m.transpose(), m));
  return std::sqrt(std::max(0.0, eig.eigenvalues().minCoeff()));
}

inline Mat gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

inline Mat haar_orthogonal(Eigen::Index d, std::mt19937_64& rng) {
  // Gram-Schmidt, two passes, on Gaussian columns.
  Mat q = gaussian(d, d, rng);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index k = 0; k < j; ++k) q.col(j) -= q.col(k).dot(q.col(j)) * q.col(k);
    q.col(j) /= q.col(j).norm();
  }
  return q;
}

}  // namespace oracle
