#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "resid/matcore.hpp"
#include "resid/rng.hpp"
#include "resid/sampling.hpp"

using namespace resid;

namespace {

Mat diag2(double a, double b) {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

}  // namespace

TEST(SpectralNorm, FrozenExamples) {
  EXPECT_DOUBLE_EQ(spectral_norm(Mat::Identity(3, 3)), 1.0);
  EXPECT_NEAR(spectral_norm(diag2(2.0, -5.0)), 5.0, 1e-14);
  Mat shift = Mat::Zero(2, 2);
  shift(0, 1) = 1.0;
  EXPECT_NEAR(spectral_norm(shift), 1.0, 1e-14);
}

TEST(SpectralNorm, AgreesWithPowerIteration) {
  Rng rng = make_rng(11, "test/spectral");
  for (int trial = 0; trial < 60; ++trial) {
    const Eigen::Index rows = 1 + trial % 9;
    const Eigen::Index cols = 1 + (trial * 7) % 11;
    const Mat m = gaussian_matrix(rows, cols, rng);
    const double expected = oracle::power_norm(m);
    EXPECT_NEAR(spectral_norm(m), expected, 1e-6 * expected) << rows << "x" << cols;
  }
}

TEST(SpectralNorm, RejectsNonFinite) {
  Mat m = Mat::Identity(2, 2);
  m(0, 1) = std::nan("");
  EXPECT_THROW(spectral_norm(m), Error);
}

TEST(Svd, DiagonalInput) {
  const Svd f = svd(diag2(3.0, 2.0));
  EXPECT_NEAR(f.K(0), 3.0, 1e-14);
  EXPECT_NEAR(f.K(1), 2.0, 1e-14);
}

TEST(Svd, IdentityMultipliesBack) {
  const Svd f = svd(Mat::Identity(2, 2));
  EXPECT_LE((f.U * f.K.asDiagonal() * f.V.transpose() - Mat::Identity(2, 2)).norm(), 1e-14);
}

TEST(Svd, RandomMultipliesBack) {
  Rng rng = make_rng(8, "test/svd");
  const Mat m = gaussian_matrix(8, 8, rng);
  const Svd f = svd(m);
  const Mat back = oracle::matmul(oracle::matmul(f.U, Mat(f.K.asDiagonal())), f.V.transpose());
  EXPECT_LE(oracle::frobenius(back - m), 1e-10);
  EXPECT_LE(orthogonality_defect(f.U), 1e-12);
  EXPECT_LE(orthogonality_defect(f.V), 1e-12);
  for (Eigen::Index i = 1; i < f.K.size(); ++i) EXPECT_GE(f.K(i - 1), f.K(i));
}

TEST(Svd, RejectsNonSquare) { EXPECT_THROW(svd(Mat::Zero(2, 3)), Error); }

TEST(SigmaMin, ProductInequalityProperty) {
  Rng rng = make_rng(2, "test/claim-d2");
  for (int trial = 0; trial < 300; ++trial) {
    const Eigen::Index d = 1 + trial % 16;
    const Mat a = gaussian_matrix(d, d, rng);
    const Mat b = gaussian_matrix(d, d, rng);
    const double lhs = oracle::frobenius(oracle::matmul(a, b));
    const double rhs = sigma_min(a) * oracle::frobenius(b);
    EXPECT_GE(lhs, rhs * (1.0 - 1e-12)) << "d = " << d;
  }
}

TEST(SigmaMin, MatchesOracle) {
  Rng rng = make_rng(3, "test/sigma-min");
  for (int trial = 0; trial < 20; ++trial) {
    const Mat a = gaussian_matrix(5, 5, rng);
    EXPECT_NEAR(sigma_min(a), oracle::sigma_min(a), 1e-7);
  }
}

TEST(RotationRoot, ZeroAngleIsIdentity) {
  EXPECT_LE((rotation_root(0.0, 7) - Mat::Identity(2, 2)).norm(), 1e-15);
}

TEST(RotationRoot, SquareRootOfHalfTurn) {
  const Mat r = rotation_root(kPi, 2);
  Mat expected(2, 2);
  expected << 0.0, -1.0, 1.0, 0.0;
  EXPECT_LE((r - expected).norm(), 1e-15);
  EXPECT_LE((r * r + Mat::Identity(2, 2)).norm(), 1e-15);
}

TEST(RotationRoot, FourthRootOfQuarterTurn) {
  const Mat r = rotation_root(kPi / 2.0, 4);
  EXPECT_LE((r - rotation(kPi / 8.0)).norm(), 1e-15);
  EXPECT_LE((r * r * r * r - rotation(kPi / 2.0)).norm(), 1e-12);
}

TEST(RotationRoot, RepeatedProductReproducesRotation) {
  for (int q : {1, 3, 10, 97, 1000, 10000}) {
    for (double theta : {kPi, -2.5, 0.3, 1e-3}) {
      const Mat root = rotation_root(theta, q);
      Mat p = Mat::Identity(2, 2);
      for (int i = 0; i < q; ++i) p = oracle::matmul(root, p);
      EXPECT_LE((p - rotation(theta)).cwiseAbs().maxCoeff(), 1e-10) << "q=" << q << " theta=" << theta;
      EXPECT_LE(spectral_norm(root - Mat::Identity(2, 2)), std::abs(theta) / q + 1e-15);
    }
  }
}

TEST(RotationRoot, RejectsNonPositiveCount) { EXPECT_THROW(rotation_root(1.0, 0), Error); }

TEST(PrincipalAngle, MapsIntoHalfOpenInterval) {
  EXPECT_DOUBLE_EQ(principal_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(principal_angle(-kPi), kPi);
  EXPECT_NEAR(principal_angle(3.0 * kPi / 2.0), -kPi / 2.0, 1e-15);
}

TEST(BlockDiagonalize, IdentityGivesPlusOnes) {
  const auto form = orthogonal_block_diagonalize(Mat::Identity(4, 4));
  ASSERT_EQ(form.blocks.size(), 4u);
  EXPECT_EQ(form.count(BlockKind::PlusOne), 4);
  EXPECT_LE((form.reassemble() - Mat::Identity(4, 4)).norm(), 1e-12);
}

TEST(BlockDiagonalize, PlaneRotation) {
  const auto form = orthogonal_block_diagonalize(rotation(kPi / 3.0));
  ASSERT_EQ(form.blocks.size(), 1u);
  EXPECT_EQ(form.blocks[0].kind, BlockKind::Rotation);
  EXPECT_NEAR(std::abs(form.blocks[0].angle), kPi / 3.0, 1e-12);
  EXPECT_LE((form.reassemble() - rotation(kPi / 3.0)).norm(), 1e-12);
}

TEST(BlockDiagonalize, DiagonalSigns) {
  Mat q = Mat::Identity(3, 3);
  q(1, 1) = -1.0;
  q(2, 2) = -1.0;
  const auto form = orthogonal_block_diagonalize(q);
  EXPECT_EQ(form.count(BlockKind::PlusOne), 1);
  EXPECT_EQ(form.count(BlockKind::MinusOne), 2);
  EXPECT_LE((form.reassemble() - q).norm(), 1e-12);
}

TEST(BlockDiagonalize, RandomRoundTrip) {
  Rng rng = make_rng(5, "test/block-diag");
  for (Eigen::Index d = 1; d <= 32; ++d) {
    const Mat q = random_orthogonal(d, rng);
    const auto form = orthogonal_block_diagonalize(q);
    const Mat back = oracle::matmul(oracle::matmul(form.basis, form.block_matrix()),
                                    form.basis.transpose());
    EXPECT_LE(oracle::frobenius(back - q), 1e-8 * oracle::frobenius(q)) << "d = " << d;
    EXPECT_LE(orthogonality_defect(form.basis), 1e-10);
    int total = 0;
    for (const auto& b : form.blocks) {
      total += b.size();
      if (b.kind == BlockKind::Rotation) {
        EXPECT_GT(b.angle, -kPi);
        EXPECT_LE(b.angle, kPi);
      }
    }
    EXPECT_EQ(total, d);
  }
}

TEST(BlockDiagonalize, OracleOrthogonalInputs) {
  std::mt19937_64 rng(99);
  for (Eigen::Index d : {2, 5, 9, 16}) {
    const Mat q = oracle::haar_orthogonal(d, rng);
    const auto form = orthogonal_block_diagonalize(q);
    EXPECT_LE(oracle::frobenius(form.reassemble() - q), 1e-8 * oracle::frobenius(q));
  }
}

TEST(BlockDiagonalize, RejectsNonOrthogonal) {
  EXPECT_THROW(orthogonal_block_diagonalize(diag2(2.0, 1.0)), Error);
  Mat shear = Mat::Identity(2, 2);
  shear(0, 1) = 0.5;
  EXPECT_THROW(orthogonal_block_diagonalize(shear), Error);
}

TEST(PairMinusOnes, TwoReflectionsBecomeHalfTurn) {
  CanonicalBlockForm form;
  form.basis = Mat::Identity(2, 2);
  form.blocks = {CanonicalBlock::minus_one(), CanonicalBlock::minus_one()};
  const auto paired = pair_minus_ones(form);
  ASSERT_EQ(paired.blocks.size(), 1u);
  EXPECT_EQ(paired.blocks[0].kind, BlockKind::Rotation);
  EXPECT_DOUBLE_EQ(paired.blocks[0].angle, kPi);
  EXPECT_LE((paired.reassemble() + Mat::Identity(2, 2)).norm(), 1e-15);
}

TEST(PairMinusOnes, NoReflectionsUnchanged) {
  const auto form = orthogonal_block_diagonalize(rotation(0.7));
  const auto paired = pair_minus_ones(form);
  ASSERT_EQ(paired.blocks.size(), form.blocks.size());
  EXPECT_EQ(paired.basis, form.basis);
  EXPECT_EQ(paired.blocks[0].angle, form.blocks[0].angle);
}

TEST(PairMinusOnes, MixedFormPermutesBasis) {
  const double theta = 0.9;
  CanonicalBlockForm form;
  std::mt19937_64 rng(4);
  form.basis = oracle::haar_orthogonal(5, rng);
  form.blocks = {CanonicalBlock::plus_one(), CanonicalBlock::minus_one(),
                 CanonicalBlock::rot(theta), CanonicalBlock::minus_one()};
  const Mat original = form.reassemble();
  const auto paired = pair_minus_ones(form);
  ASSERT_EQ(paired.blocks.size(), 3u);
  EXPECT_EQ(paired.blocks[0].kind, BlockKind::PlusOne);
  EXPECT_EQ(paired.blocks[1].kind, BlockKind::Rotation);
  EXPECT_DOUBLE_EQ(paired.blocks[1].angle, theta);
  EXPECT_EQ(paired.blocks[2].kind, BlockKind::Rotation);
  EXPECT_DOUBLE_EQ(paired.blocks[2].angle, kPi);
  EXPECT_LE((paired.reassemble() - original).norm(), 1e-12);
}

TEST(PairMinusOnes, OddCountFails) {
  CanonicalBlockForm form;
  form.basis = Mat::Identity(1, 1);
  form.blocks = {CanonicalBlock::minus_one()};
  try {
    pair_minus_ones(form);
    FAIL() << "expected OddReflectionCount";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OddReflectionCount);
  }
}

TEST(PsdSqrt, SquaresBack) {
  Rng rng = make_rng(6, "test/psd-sqrt");
  const Mat s = random_spd(6, 0.1, 3.0, rng);
  const Mat root = psd_sqrt(s);
  EXPECT_LE((oracle::matmul(root, root) - s).norm(), 1e-12);
  EXPECT_THROW(psd_sqrt(diag2(1.0, -1.0)), Error);
}

TEST(Rng, ChildSeedsAreStableAndDistinct) {
  EXPECT_EQ(child_seed(1, "a", 0), child_seed(1, "a", 0));
  EXPECT_NE(child_seed(1, "a", 0), child_seed(1, "a", 1));
  EXPECT_NE(child_seed(1, "a", 0), child_seed(1, "b", 0));
  EXPECT_NE(child_seed(1, "a", 0), child_seed(2, "a", 0));
  Rng a = make_rng(42, "x");
  Rng b = make_rng(42, "x");
  EXPECT_EQ(gaussian_matrix(3, 3, a), gaussian_matrix(3, 3, b));
}
