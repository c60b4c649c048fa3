#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nrdf/model.hpp"
#include "nrdf/numerics.hpp"
#include "nrdf/realization.hpp"

namespace nrdf {

/// Lagrange data. The ordering multipliers theta[t] and the positivity
/// multipliers v[t] are all zero on interior solutions.
struct Multipliers {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::vector<SymMatrix> theta;
  std::vector<SymMatrix> v;
};

enum class Regime {
  interior,           // sigma_t < sigma_minus_t at every stage, theta == 0
  zero_rate,          // budgets cover the prior uncertainty; lambda == 0, sigma == sigma_minus
  boundary_detected,  // the theta == 0 schedule violates an ordering constraint
  oracle_only,        // boundary case answered by the direct minimizer
};

std::string_view to_string(Regime regime);

struct KktResiduals {
  /// ||-0.5 Sigma_n^{-1} + Lambda + Theta_n + V_n||_F.
  double stationarity_terminal = 0.0;
  /// ||Sigma_t + Sigma_t Qbar_t Sigma_t - 0.5 (Lambda + Theta_t - A_t^T Theta_{t+1} A_t)^{-1}||_F,
  /// t < n. NaN where the bracketed matrix is not invertible.
  std::vector<double> backward;
  std::array<double, 2> slackness_lambda{0.0, 0.0};
  std::vector<double> slackness_v;
  std::vector<double> slackness_theta;
  /// min_t lambda_min(sigma_minus_t - sigma_t).
  double ordering_margin = 0.0;
  /// delta_i - (1/n) sum_t trace(Sigma_{Ei,t}).
  std::array<double, 2> budget_margin{0.0, 0.0};
  /// min(lambda1, lambda2, lambda_min(Theta_t), lambda_min(V_t)).
  double dual_margin = 0.0;

  /// Largest stationarity residual; NaN if any entry is NaN.
  double stationarity() const;
  double complementary_slackness() const;
  /// max(stationarity, complementary slackness, primal and dual infeasibility).
  double max_residual() const;
};

struct SolveReport {
  Regime regime = Regime::interior;
  std::string method;  // "kkt", "closed-form", "zero-rate", "oracle"
  double rate_total = 0.0;  // nats
  std::vector<double> rate_per_stage;
  std::array<double, 2> achieved{0.0, 0.0};
  Multipliers multipliers;
  CovarianceSchedule schedule;
  RealizationSchedule realization;
  KktResiduals residuals;
  std::optional<ConditionReport> conditions;
  std::optional<double> oracle_rate;
  /// rate_total of the multiplier path minus the oracle rate.
  std::optional<double> oracle_gap;
};

/// Filter covariances with theta == 0: Sigma_n = 0.5 Lambda^{-1} and, for
/// t < n, the PSD root of Sigma + Sigma Qbar_t Sigma = 0.5 Lambda^{-1}.
std::vector<SymMatrix> interior_schedule(double lambda1, double lambda2, const SourceModel& m);

struct CalibrationOptions {
  double lambda_min = 1e-8;
  double lambda_max = 1e8;
  /// Relative accuracy demanded of each average trace.
  double trace_tolerance = 1e-12;
  int max_bisection = 200;
  int max_newton = 50;
  int max_sweeps = 500;
};

struct Calibration {
  Multipliers multipliers;
  CovarianceSchedule schedule;
  Regime regime = Regime::interior;
};

/// Finds lambda1, lambda2 so that the interior schedule meets both budgets
/// with equality, then classifies the regime. Budgets that cover the state
/// covariances give the zero-rate schedule with lambda == 0.
Calibration calibrate_multipliers(const SourceModel& m, const DistortionSpec& d,
                                  const CalibrationOptions& options = {});

KktResiduals kkt_residuals(const CovarianceSchedule& schedule, const Multipliers& multipliers,
                           const SourceModel& m, const DistortionSpec& d);

// --- scalar two-process case -------------------------------------------------

/// Positive root of s + q s^2 = 1/(2 lambda).
double scalar_interior_variance(double lambda, double q);

/// Diagonal entries (alpha, beta) and cross entry gamma of A diag(s1, s2) A^T + diag(q1, q2).
struct ScalarPredictor {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};
ScalarPredictor scalar_predictor(const Matrix& a, double s1, double s2, double q1, double q2);

/// Closed-form solution for p1 = p2 = 1, constant A, Qbar = diag(q1, q2) > 0,
/// diagonal Q_X1. Throws NotScalar when the model does not have that shape and
/// BoundaryRegime when the closed form leaves the interior.
SolveReport scalar_example(const SourceModel& m, const DistortionSpec& d);

/// Stationary rate per stage of a time-invariant model: the stationary theta == 0
/// covariance with trace(Sigma_i) == delta_i, its predictor A Sigma A^T + Qbar, and
/// 0.5 (logdet Sigma^- - logdet Sigma).
double per_unit_time_rate(const SourceModel& m, const DistortionSpec& d);

/// Report assembly shared by the multiplier and closed-form paths.
SolveReport make_report(const SourceModel& m, const DistortionSpec& d, Calibration calibration,
                        std::string method);

}  // namespace nrdf
