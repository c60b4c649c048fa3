#pragma once

#include <Eigen/Dense>

#include "nrdf/errors.hpp"

namespace nrdf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Relative eigenvalue cutoff used by pinv().
inline constexpr double kRankTol = 1e-10;
/// Absolute slack accepted by PSD tests on covariance data.
inline constexpr double kPsdTol = 1e-10;
/// Smallest admissible Cholesky pivot in logdet().
inline constexpr double kPivotTol = 1e-12;

/// Dense symmetric matrix. Construction symmetrizes the input as (M + M^T)/2,
/// so entries(i, j) == entries(j, i) holds exactly afterwards.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(const Matrix& m);

  static SymMatrix identity(Index n);
  static SymMatrix zero(Index n);
  static SymMatrix diagonal(const Vector& d);

  Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  double operator()(Index i, Index j) const { return m_(i, j); }
  double trace() const { return m_.trace(); }

  /// Principal sub-block starting at `start` with `size` rows and columns.
  SymMatrix principal_block(Index start, Index size) const;

  friend SymMatrix operator+(const SymMatrix& a, const SymMatrix& b);
  friend SymMatrix operator-(const SymMatrix& a, const SymMatrix& b);
  friend SymMatrix operator*(double s, const SymMatrix& a);

  friend bool operator==(const SymMatrix& a, const SymMatrix& b) {
    return a.m_.rows() == b.m_.rows() && a.m_.cols() == b.m_.cols() && a.m_ == b.m_;
  }

 private:
  Matrix m_;
};

/// a * s * a^T, symmetrized.
SymMatrix congruence(const Matrix& a, const SymMatrix& s);

/// Ascending eigenvalues.
Vector eigenvalues(const SymMatrix& m);
double min_eigenvalue(const SymMatrix& m);

/// ln det(M) from a Cholesky factorization; throws NonPositiveDefinite when a
/// pivot falls to kPivotTol or below.
double logdet(const SymMatrix& m);

/// Inverse of a positive-definite matrix.
SymMatrix inverse_pd(const SymMatrix& m);

/// Moore-Penrose pseudoinverse. Eigenvalues at or below rank_tol * lambda_max
/// are treated as zero.
SymMatrix pinv(const SymMatrix& m, double rank_tol = kRankTol);

bool is_psd(const SymMatrix& m, double tol = kPsdTol);

/// Symmetric square root with negative eigenvalues floored at zero.
SymMatrix psd_sqrt(const SymMatrix& m);

/// F with F * F^T == m. Cholesky when m is positive definite, otherwise an
/// eigen-factor with eigenvalues floored at zero.
Matrix psd_factor(const SymMatrix& m);

struct MatrixQuadraticOptions {
  int max_iterations = 200;
  double tolerance = 1e-12;  // on ||R||_F, scaled by max(1, ||C||_F)
  double psd_tolerance = 1e-10;
};

/// Solves Sigma + Sigma * qbar * Sigma = c for the PSD root by damped Newton
/// iteration started at Sigma = c. Each Newton step solves the Lyapunov-type
/// system M*D + D*M^T = -R with M = I/2 + Sigma*qbar.
SymMatrix solve_matrix_quadratic(const SymMatrix& c, const SymMatrix& qbar,
                                 const MatrixQuadraticOptions& options = {});

}  // namespace nrdf
