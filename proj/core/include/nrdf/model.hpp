#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "nrdf/numerics.hpp"

namespace nrdf {

/// Gauss-Markov source tuple
///   X_1 ~ G(0, Q_X1),  X_{t+1} = A_t X_t + B_t W_{t+1},  W_{t+1} ~ G(0, Q_W,t)
/// with X = (X1, X2) stacked as p1 + p2 rows and W as q1 + q2 rows.
///
/// Entry k (0-based) of `a`, `b`, `q_w` drives the transition into stage k + 2
/// (1-based), so `q_w[k]` is the covariance of W_{k+2}. Holds raw matrices so
/// that validate_model() can report malformed input instead of rejecting it
/// at construction.
struct SourceModel {
  int n = 1;
  int p1 = 1;
  int p2 = 1;
  int q1 = 1;
  int q2 = 1;
  std::vector<Matrix> a;    // n-1 entries, (p1+p2) x (p1+p2)
  std::vector<Matrix> b;    // n-1 entries, (p1+p2) x (q1+q2)
  std::vector<Matrix> q_w;  // n-1 entries, (q1+q2) x (q1+q2)
  Matrix q_x1;              // (p1+p2) x (p1+p2)

  int state_dim() const { return p1 + p2; }
  int noise_dim() const { return q1 + q2; }
  /// True when every A, B and Q_W entry equals the first one.
  bool time_invariant() const;
};

struct DistortionSpec {
  double delta1 = 1.0;
  double delta2 = 1.0;
};

/// Qbar_t = B_t Q_W,t B_t^T for t = 1..n-1.
struct QbarSchedule {
  std::vector<SymMatrix> qbar;
  std::vector<bool> strictly_pd;  // smallest eigenvalue > kPsdTol
};

struct Problem {
  SourceModel model;
  DistortionSpec distortion;
};

/// Empty result means the model is well formed.
std::vector<std::string> validate_model(const SourceModel& m);
std::vector<std::string> validate_distortion(const DistortionSpec& d);

QbarSchedule qbar_schedule(const SourceModel& m);

/// Builds a time-invariant model by replicating a, b, q_w into n-1 stages.
SourceModel make_time_invariant(int n, int p1, int p2, int q1, int q2, const Matrix& a,
                                const Matrix& b, const Matrix& q_w, const Matrix& q_x1);

/// Parses the JSON problem format. Throws ParseError on malformed text or
/// missing/ill-typed fields, ValidationError when the parsed model or budgets
/// fail validation.
Problem parse_problem(std::string_view json_text);
Problem load_problem(const std::filesystem::path& path);

/// JSON text that parse_problem() maps back to an identical problem. Doubles
/// are printed with round-trip precision.
std::string serialize_problem(const Problem& problem);

}  // namespace nrdf
