#pragma once

// Seeding scheme shared by every randomized stage.
//
// All randomness descends from one 64-bit seed. A stage never draws from its
// parent's stream; it derives a child seed from (parent seed, label, index)
// and builds its own std::mt19937_64. Child seeds are
//   splitmix64(seed ^ fnv1a64(label) ^ splitmix64(index))
// which keeps stages independent of evaluation order.

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace resid {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t child_seed(std::uint64_t seed, std::string_view label,
                                   std::uint64_t index = 0) {
  return splitmix64(seed ^ fnv1a64(label) ^ splitmix64(index));
}

inline Rng make_rng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
  return Rng(child_seed(seed, label, index));
}

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  // Row-major fill order so the stream maps to entries the way they serialize.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

inline Eigen::VectorXd gaussian_vector(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

inline Eigen::VectorXd random_unit_vector(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd v = gaussian_vector(n, rng);
  double norm = v.norm();
  while (norm == 0.0) {
    v = gaussian_vector(n, rng);
    norm = v.norm();
  }
  return v / norm;
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace resid
