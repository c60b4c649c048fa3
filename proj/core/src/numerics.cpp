#include "nrdf/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace nrdf {

SymMatrix::SymMatrix(const Matrix& m) {
  if (m.rows() != m.cols()) {
    std::ostringstream os;
    os << "SymMatrix requires a square matrix, got " << m.rows() << "x" << m.cols();
    throw std::invalid_argument(os.str());
  }
  m_ = 0.5 * (m + m.transpose());
}

SymMatrix SymMatrix::identity(Index n) { return SymMatrix(Matrix::Identity(n, n)); }

SymMatrix SymMatrix::zero(Index n) { return SymMatrix(Matrix::Zero(n, n)); }

SymMatrix SymMatrix::diagonal(const Vector& d) { return SymMatrix(Matrix(d.asDiagonal())); }

SymMatrix SymMatrix::principal_block(Index start, Index size) const {
  return SymMatrix(Matrix(m_.block(start, start, size, size)));
}

SymMatrix operator+(const SymMatrix& a, const SymMatrix& b) { return SymMatrix(a.m_ + b.m_); }

SymMatrix operator-(const SymMatrix& a, const SymMatrix& b) { return SymMatrix(a.m_ - b.m_); }

SymMatrix operator*(double s, const SymMatrix& a) { return SymMatrix(s * a.m_); }

SymMatrix congruence(const Matrix& a, const SymMatrix& s) {
  return SymMatrix(Matrix(a * s.matrix() * a.transpose()));
}

Vector eigenvalues(const SymMatrix& m) {
  if (m.dim() == 0) return Vector();
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix(), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

double min_eigenvalue(const SymMatrix& m) {
  if (m.dim() == 0) return 0.0;
  return eigenvalues(m)(0);
}

double logdet(const SymMatrix& m) {
  Eigen::LLT<Matrix> llt(m.matrix());
  if (llt.info() != Eigen::Success) {
    throw NonPositiveDefinite("logdet: matrix is not positive definite");
  }
  const Matrix& l = llt.matrixLLT();
  double sum = 0.0;
  for (Index i = 0; i < m.dim(); ++i) {
    const double pivot = l(i, i) * l(i, i);
    if (!(pivot > kPivotTol)) {
      throw NonPositiveDefinite("logdet: factorization pivot below tolerance");
    }
    sum += std::log(l(i, i));
  }
  return 2.0 * sum;
}

SymMatrix inverse_pd(const SymMatrix& m) {
  Eigen::LLT<Matrix> llt(m.matrix());
  if (llt.info() != Eigen::Success) {
    throw NonPositiveDefinite("inverse_pd: matrix is not positive definite");
  }
  return SymMatrix(Matrix(llt.solve(Matrix::Identity(m.dim(), m.dim()))));
}

SymMatrix pinv(const SymMatrix& m, double rank_tol) {
  const Index n = m.dim();
  if (n == 0) return m;
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix());
  const Vector& ev = es.eigenvalues();
  const double largest = ev.cwiseAbs().maxCoeff();
  const double cutoff = rank_tol * largest;
  Vector inv = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) {
    if (ev(i) > cutoff && ev(i) > 0.0) inv(i) = 1.0 / ev(i);
  }
  const Matrix& u = es.eigenvectors();
  return SymMatrix(Matrix(u * inv.asDiagonal() * u.transpose()));
}

bool is_psd(const SymMatrix& m, double tol) { return min_eigenvalue(m) >= -tol; }

SymMatrix psd_sqrt(const SymMatrix& m) {
  if (m.dim() == 0) return m;
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix());
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Matrix& u = es.eigenvectors();
  return SymMatrix(Matrix(u * root.asDiagonal() * u.transpose()));
}

Matrix psd_factor(const SymMatrix& m) {
  if (m.dim() == 0) return Matrix();
  Eigen::LLT<Matrix> llt(m.matrix());
  if (llt.info() == Eigen::Success) {
    Matrix l = llt.matrixL();
    if ((l.diagonal().array() > 0.0).all()) return l;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix());
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

namespace {

Matrix quadratic_residual(const Matrix& sigma, const Matrix& qbar, const Matrix& c) {
  return sigma + sigma * qbar * sigma - c;
}

// Solves M*D + D*M^T = rhs through the Kronecker form (I (x) M + M (x) I) vec(D).
Matrix solve_lyapunov_like(const Matrix& m, const Matrix& rhs) {
  const Index n = m.rows();
  const Index nn = n * n;
  Matrix k = Matrix::Zero(nn, nn);
  const Matrix id = Matrix::Identity(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) {
      // block (i, j) of I (x) M is delta_ij * M, of M (x) I is m(i, j) * I
      if (i == j) k.block(i * n, j * n, n, n) += m;
      k.block(i * n, j * n, n, n) += m(i, j) * id;
    }
  }
  const Eigen::Map<const Vector> b(rhs.data(), nn);
  const Vector x = k.partialPivLu().solve(b);
  return Eigen::Map<const Matrix>(x.data(), n, n);
}

}  // namespace

SymMatrix solve_matrix_quadratic(const SymMatrix& c, const SymMatrix& qbar,
                                 const MatrixQuadraticOptions& options) {
  if (c.dim() != qbar.dim()) {
    throw std::invalid_argument("solve_matrix_quadratic: dimension mismatch");
  }
  const Index n = c.dim();
  if (n == 0) return c;

  const Matrix& q = qbar.matrix();
  const Matrix& cm = c.matrix();
  const double tol = options.tolerance * std::max(1.0, cm.norm());
  // Rounding floor of the residual evaluation; reaching it counts as converged.
  const auto rounding_floor = [&](const Matrix& s) {
    const double sn = s.norm();
    return 64.0 * std::numeric_limits<double>::epsilon() * (cm.norm() + sn + sn * sn * q.norm());
  };

  Matrix sigma = cm;
  Matrix r = quadratic_residual(sigma, q, cm);
  double rnorm = r.norm();
  const Matrix id = Matrix::Identity(n, n);

  int iter = 0;
  for (; iter < options.max_iterations && rnorm > tol; ++iter) {
    const Matrix m = 0.5 * id + sigma * q;
    Matrix step = solve_lyapunov_like(m, -r);
    step = 0.5 * (step + step.transpose());

    double alpha = 1.0;
    Matrix trial;
    Matrix trial_r;
    double trial_norm = 0.0;
    bool accepted = false;
    while (alpha > 1e-10) {
      trial = sigma + alpha * step;
      trial = 0.5 * (trial + trial.transpose());
      trial_r = quadratic_residual(trial, q, cm);
      trial_norm = trial_r.norm();
      if (trial_norm <= (1.0 - 1e-4 * alpha) * rnorm) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (rnorm <= rounding_floor(sigma)) break;
      throw NoConvergence("solve_matrix_quadratic: line search stalled");
    }
    sigma = trial;
    r = trial_r;
    rnorm = trial_norm;
  }
  if (rnorm > tol && rnorm > rounding_floor(sigma)) {
    throw NoConvergence("solve_matrix_quadratic: no convergence after " +
                        std::to_string(options.max_iterations) + " iterations");
  }

  SymMatrix result(sigma);
  if (min_eigenvalue(result) < -options.psd_tolerance) {
    throw NotPSD("solve_matrix_quadratic: converged iterate is not PSD");
  }
  return result;
}

}  // namespace nrdf
