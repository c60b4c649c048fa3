#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nrdf/model.hpp"
#include "nrdf/numerics.hpp"
#include "nrdf/realization.hpp"

namespace nrdf {

// Direct minimization of
//   sum_t 0.5 * (logdet Sigma^-_t - logdet Sigma_t)
// over filter covariances, with Sigma^-_t eliminated through the predictor
// recursion. Used as ground truth for the multiplier path and as the only
// solver for schedules that touch the ordering constraints.

inline constexpr int kOracleMaxStateDim = 6;
inline constexpr int kOracleMaxStages = 16;

struct OracleOptions {
  double barrier_start = 1.0;
  double barrier_decay = 0.2;
  double barrier_final = 1e-10;
  int max_outer = 40;
  int max_inner = 100;
  double grad_tol = 1e-8;
  std::uint64_t seed = 0;
  int restarts = 5;
};

struct OracleResiduals {
  double barrier_weight = 0.0;
  /// Norm of the barrier-objective gradient in square-root coordinates.
  double gradient_norm = 0.0;
  double newton_decrement = 0.0;
  /// Budget multipliers implied by the barrier, mu / (n delta_i - sum_t trace_i).
  std::array<double, 2> lambda_estimate{0.0, 0.0};
  /// delta_i - average trace.
  std::array<double, 2> budget_margin{0.0, 0.0};
  /// min_t lambda_min(Sigma^-_t - Sigma_t).
  double ordering_margin = 0.0;
  /// max_t |trace(Theta_t (Sigma_t - Sigma^-_t))| with Theta_t = mu (Sigma^-_t - Sigma_t)^{-1}.
  double theta_slackness = 0.0;
};

struct OracleResult {
  CovarianceSchedule schedule;
  double rate = 0.0;
  OracleResiduals residuals;
  bool converged = false;
  std::vector<double> start_rates;
  /// max - min of start_rates.
  double start_spread = 0.0;
  /// start_spread > 1e-6.
  bool starts_disagree = false;
};

/// Barrier path following in Cholesky-factor coordinates with Newton steps and
/// backtracking line search; best of `restarts` starts. Requires state dim <= 6
/// and n <= 16. Throws InfeasibleBudget when no strictly feasible start exists.
OracleResult direct_minimize(const SourceModel& m, const DistortionSpec& d,
                             const OracleOptions& options = {});

struct GridOracleResult {
  double rate = 0.0;  // +infinity when no grid point is feasible
  bool feasible = false;
  std::vector<SymMatrix> sigma;
  long evaluations = 0;
};

/// Brute-force search for p1 = p2 = 1, n <= 3: a tensor grid over each stage's
/// (variance1, cross, variance2) followed by pattern refinement around the
/// incumbent with golden-ratio shrinking.
GridOracleResult grid_oracle_scalar(const SourceModel& m, const DistortionSpec& d,
                                    int grid_points);

/// Rate objective of a filter schedule; +infinity if a covariance is not PD.
double nrdf_objective(const SourceModel& m, std::span<const SymMatrix> sigma);

/// Gradient G_t of nrdf_objective, d f = sum_t trace(G_t d Sigma_t).
std::vector<SymMatrix> nrdf_gradient(const SourceModel& m, std::span<const SymMatrix> sigma);

/// Objective plus mu-weighted log barriers on Sigma^-_t - Sigma_t and the two
/// budget slacks; +infinity outside the strict interior.
double barrier_objective(const SourceModel& m, const DistortionSpec& d,
                         std::span<const SymMatrix> sigma, double mu);

/// Gradient of barrier_objective with respect to the packed lower-triangular
/// Cholesky factors of each Sigma_t (the oracle's search coordinates).
Vector barrier_gradient_factor(const SourceModel& m, const DistortionSpec& d,
                               std::span<const SymMatrix> sigma, double mu);

/// Hessian of barrier_objective in the same coordinates.
Matrix barrier_hessian_factor(const SourceModel& m, const DistortionSpec& d,
                              std::span<const SymMatrix> sigma, double mu);

struct GradientCheck {
  double max_relative_error = 0.0;
  bool skipped = false;
  std::string reason;
};

/// Central finite differences against nrdf_gradient, entrywise over symmetric
/// perturbations. Skipped unless every Sigma_t > 0 and Sigma_t < Sigma^-_t.
GradientCheck gradient_check(const SourceModel& m, std::span<const SymMatrix> schedule,
                             double epsilon);

/// Same check for barrier_gradient_factor in Cholesky-factor coordinates.
GradientCheck gradient_check_barrier(const SourceModel& m, const DistortionSpec& d,
                                     std::span<const SymMatrix> schedule, double mu,
                                     double epsilon);

}  // namespace nrdf
