#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "nrdf/model.hpp"
#include "nrdf/numerics.hpp"

namespace nrdf::testing {

inline Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

inline Matrix diag2(double a, double b) { return mat2(a, 0.0, 0.0, b); }

/// Coupled scalar pair: a11 = a22 = 0.9, a12 = a21 = 0.3, q1 = q2 = 1, unit initial variances.
inline SourceModel coupled_scalar_model(int n) {
  return make_time_invariant(n, 1, 1, 1, 1, mat2(0.9, 0.3, 0.3, 0.9), Matrix::Identity(2, 2),
                             Matrix::Identity(2, 2), Matrix::Identity(2, 2));
}

/// Scalar pair with diagonal dynamics diag(a1, a2) and noise variances q1, q2.
inline SourceModel decoupled_scalar_model(int n, double a1, double a2, double q1, double q2,
                                          double s1 = 1.0, double s2 = 1.0) {
  return make_time_invariant(n, 1, 1, 1, 1, diag2(a1, a2), Matrix::Identity(2, 2), diag2(q1, q2),
                             diag2(s1, s2));
}

/// Single-stage model with initial covariance diag(s1, s2).
inline SourceModel single_stage_model(double s1, double s2) {
  SourceModel m;
  m.n = 1;
  m.q_x1 = diag2(s1, s2);
  return m;
}

inline Matrix random_matrix(std::mt19937_64& rng, Index rows, Index cols, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

/// Random symmetric positive-definite matrix with eigenvalues in [lo, hi].
inline SymMatrix random_pd(std::mt19937_64& rng, Index dim, double lo = 0.2, double hi = 3.0) {
  const Matrix q = Eigen::HouseholderQR<Matrix>(random_matrix(rng, dim, dim)).householderQ();
  std::uniform_real_distribution<double> u(lo, hi);
  Vector ev(dim);
  for (Index i = 0; i < dim; ++i) ev(i) = u(rng);
  return SymMatrix(Matrix(q * ev.asDiagonal() * q.transpose()));
}

/// Random time-varying 2+2 model with stable dynamics and full-rank noise.
inline SourceModel random_model(std::mt19937_64& rng, int n, int p1 = 2, int p2 = 2) {
  SourceModel m;
  m.n = n;
  m.p1 = p1;
  m.p2 = p2;
  m.q1 = p1;
  m.q2 = p2;
  const Index p = p1 + p2;
  for (int k = 0; k + 1 < n; ++k) {
    Matrix a = random_matrix(rng, p, p);
    const double radius = Eigen::EigenSolver<Matrix>(a).eigenvalues().cwiseAbs().maxCoeff();
    m.a.push_back(a * (0.9 / std::max(radius, 1e-9)));
    m.b.push_back(Matrix::Identity(p, p) + random_matrix(rng, p, p, 0.2));
    m.q_w.push_back(random_pd(rng, p, 0.3, 1.5).matrix());
  }
  m.q_x1 = random_pd(rng, p, 0.5, 2.0).matrix();
  return m;
}

inline std::string data_path(const std::string& name) {
  return std::string(NRDF_TEST_DATA_DIR) + "/" + name;
}

}  // namespace nrdf::testing
