#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "nrdf/errors.hpp"
#include "nrdf/numerics.hpp"

using namespace nrdf;
using namespace nrdf::testing;

TEST(SymMatrix, SymmetrizesOnConstruction) {
  const SymMatrix s(mat2(1.0, 2.0, 4.0, 3.0));
  EXPECT_DOUBLE_EQ(s(0, 1), 3.0);
  EXPECT_DOUBLE_EQ(s(1, 0), 3.0);
  EXPECT_LE((s.matrix() - s.matrix().transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SymMatrix, RejectsNonSquare) {
  EXPECT_THROW(SymMatrix(Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST(SymMatrix, BlocksAndArithmetic) {
  Matrix m(3, 3);
  m << 1, 2, 3, 2, 5, 6, 3, 6, 9;
  const SymMatrix s(m);
  EXPECT_EQ(s.principal_block(1, 2).matrix(), m.block(1, 1, 2, 2));
  EXPECT_DOUBLE_EQ(s.trace(), 15.0);
  EXPECT_EQ((s - s), SymMatrix::zero(3));
  EXPECT_EQ((2.0 * SymMatrix::identity(3)).matrix(), 2.0 * Matrix::Identity(3, 3));
}

TEST(Logdet, Identity) { EXPECT_NEAR(logdet(SymMatrix::identity(3)), 0.0, 1e-15); }

TEST(Logdet, Diagonal) { EXPECT_NEAR(logdet(SymMatrix(diag2(2.0, 3.0))), std::log(6.0), 1e-14); }

TEST(Logdet, TwoByTwo) { EXPECT_NEAR(logdet(SymMatrix(mat2(2, 1, 1, 2))), std::log(3.0), 1e-14); }

TEST(Logdet, RejectsSemidefinite) {
  EXPECT_THROW(logdet(SymMatrix(diag2(1.0, 0.0))), NonPositiveDefinite);
  EXPECT_THROW(logdet(SymMatrix(diag2(1.0, -1.0))), NonPositiveDefinite);
}

TEST(Logdet, MatchesEigenvalueSumOnRandomMatrices) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Index dim = 1 + trial % 6;
    const SymMatrix m = random_pd(rng, dim, 0.05, 10.0);
    const double expected = eigenvalues(m).array().log().sum();
    EXPECT_NEAR(logdet(m), expected, 1e-10);
  }
}

TEST(Pinv, Identity) { EXPECT_EQ(pinv(SymMatrix::identity(2)), SymMatrix::identity(2)); }

TEST(Pinv, RankDeficientDiagonal) {
  const SymMatrix p = pinv(SymMatrix(diag2(2.0, 0.0)));
  EXPECT_NEAR((p.matrix() - diag2(0.5, 0.0)).norm(), 0.0, 1e-15);
}

TEST(Pinv, Zero) { EXPECT_EQ(pinv(SymMatrix::zero(2)), SymMatrix::zero(2)); }

TEST(Pinv, InvolutionOnFullRank) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const SymMatrix m = random_pd(rng, 1 + trial % 5, 0.1, 5.0);
    EXPECT_LE((pinv(pinv(m)).matrix() - m.matrix()).norm(), 1e-9);
  }
}

TEST(Pinv, PenroseConditionsOnRankDeficient) {
  std::mt19937_64 rng(13);
  const Matrix f = random_matrix(rng, 4, 2);
  const SymMatrix m(Matrix(f * f.transpose()));
  const Matrix p = pinv(m).matrix();
  EXPECT_LE((m.matrix() * p * m.matrix() - m.matrix()).norm(), 1e-10);
  EXPECT_LE((p * m.matrix() * p - p).norm(), 1e-10);
}

TEST(IsPsd, Examples) {
  EXPECT_TRUE(is_psd(SymMatrix::identity(2), 1e-10));
  EXPECT_FALSE(is_psd(SymMatrix(diag2(1.0, -1.0)), 1e-10));
  EXPECT_TRUE(is_psd(SymMatrix::zero(3), 1e-10));
  EXPECT_TRUE(is_psd(SymMatrix(diag2(1.0, -1e-11)), 1e-10));
}

TEST(PsdFactor, ReproducesInputIncludingSemidefinite) {
  std::mt19937_64 rng(14);
  const SymMatrix pd = random_pd(rng, 3);
  const Matrix f = psd_factor(pd);
  EXPECT_LE((f * f.transpose() - pd.matrix()).norm(), 1e-12);
  const Matrix g = random_matrix(rng, 3, 1);
  const SymMatrix rank1(Matrix(g * g.transpose()));
  const Matrix h = psd_factor(rank1);
  EXPECT_LE((h * h.transpose() - rank1.matrix()).norm(), 1e-12);
  const SymMatrix root = psd_sqrt(pd);
  EXPECT_LE((root.matrix() * root.matrix() - pd.matrix()).norm(), 1e-12);
}

TEST(MatrixQuadratic, ZeroQuadraticTermReturnsC) {
  std::mt19937_64 rng(15);
  const SymMatrix c = random_pd(rng, 3);
  EXPECT_LE((solve_matrix_quadratic(c, SymMatrix::zero(3)).matrix() - c.matrix()).norm(), 1e-14);
}

TEST(MatrixQuadratic, ScalarGoldenRatio) {
  Matrix one(1, 1);
  one << 1.0;
  const SymMatrix s = solve_matrix_quadratic(SymMatrix(one), SymMatrix(one));
  EXPECT_NEAR(s(0, 0), (std::sqrt(5.0) - 1.0) / 2.0, 1e-12);
  EXPECT_NEAR(s(0, 0) + s(0, 0) * s(0, 0) - 1.0, 0.0, 1e-12);
}

TEST(MatrixQuadratic, DiagonalEntrywiseRoots) {
  const double q1 = 0.7;
  const double q2 = 3.0;
  const double c1 = 2.0;
  const double c2 = 0.25;
  const SymMatrix s = solve_matrix_quadratic(SymMatrix(diag2(c1, c2)), SymMatrix(diag2(q1, q2)));
  EXPECT_NEAR(s(0, 0), (-1.0 + std::sqrt(1.0 + 4.0 * q1 * c1)) / (2.0 * q1), 1e-13);
  EXPECT_NEAR(s(1, 1), (-1.0 + std::sqrt(1.0 + 4.0 * q2 * c2)) / (2.0 * q2), 1e-13);
  EXPECT_NEAR(s(0, 1), 0.0, 1e-14);
  const Matrix r = s.matrix() + s.matrix() * diag2(q1, q2) * s.matrix() - diag2(c1, c2);
  EXPECT_LE(r.norm(), 1e-12);
}

// Independent oracle for Q > 0: with K = Q^{1/2} C Q^{1/2}, X = (K + I/4)^{1/2} - I/2
// solves X + X^2 = K and Sigma = Q^{-1/2} X Q^{-1/2}.
TEST(MatrixQuadratic, MatchesSimilarityOracleOnRandomInstances) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 40; ++trial) {
    const Index dim = 1 + trial % 6;
    const SymMatrix c = random_pd(rng, dim, 0.01, 20.0);
    const SymMatrix q = random_pd(rng, dim, 0.01, 5.0);
    const Matrix qh = psd_sqrt(q).matrix();
    const Matrix qhi = inverse_pd(psd_sqrt(q)).matrix();
    const Matrix k = qh * c.matrix() * qh;
    const Matrix x =
        psd_sqrt(SymMatrix(Matrix(k + 0.25 * Matrix::Identity(dim, dim)))).matrix() -
        0.5 * Matrix::Identity(dim, dim);
    const Matrix expected = qhi * x * qhi;
    const SymMatrix s = solve_matrix_quadratic(c, q);
    EXPECT_LE((s.matrix() - expected).norm(), 1e-9 * std::max(1.0, expected.norm()));
    const Matrix r = s.matrix() + s.matrix() * q.matrix() * s.matrix() - c.matrix();
    EXPECT_LE(r.norm(), 1e-10 * std::max(1.0, c.matrix().norm()));
    EXPECT_TRUE(is_psd(s, 1e-10));
  }
}

TEST(MatrixQuadratic, SemidefiniteQuadraticTerm) {
  std::mt19937_64 rng(17);
  const SymMatrix c = random_pd(rng, 3);
  const Matrix g = random_matrix(rng, 3, 1);
  const SymMatrix q(Matrix(g * g.transpose()));
  const SymMatrix s = solve_matrix_quadratic(c, q);
  const Matrix r = s.matrix() + s.matrix() * q.matrix() * s.matrix() - c.matrix();
  EXPECT_LE(r.norm(), 1e-10);
  EXPECT_TRUE(is_psd(s, 1e-10));
}

TEST(MatrixQuadratic, RejectsMismatchedDimensions) {
  EXPECT_ANY_THROW(solve_matrix_quadratic(SymMatrix::identity(2), SymMatrix::identity(3)));
}
