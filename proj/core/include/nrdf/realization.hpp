#pragma once

#include <array>
#include <span>
#include <vector>

#include "nrdf/model.hpp"
#include "nrdf/numerics.hpp"

namespace nrdf {

/// Per-stage predictor (sigma_minus) and filter (sigma) error covariances of
/// the joint state, with sigma_minus[0] == Q_X1.
struct CovarianceSchedule {
  std::vector<SymMatrix> sigma_minus;
  std::vector<SymMatrix> sigma;
  /// Per stage: sigma[t] <= sigma_minus[t] up to the PSD tolerance.
  std::vector<bool> feasible;
  /// Per stage: smallest eigenvalue of sigma_minus[t] - sigma[t].
  std::vector<double> ordering_margin;

  std::size_t stages() const { return sigma.size(); }
  bool all_feasible() const;
  /// Every stage satisfies sigma[t] < sigma_minus[t] with margin above tol.
  bool strictly_interior(double tol = kPsdTol) const;
};

/// Leading p1 x p1 (component 1) or trailing p2 x p2 (component 2) block.
SymMatrix component_block(const SymMatrix& s, int p1, int p2, int component);

/// (1/n) * sum_t trace of the component blocks of `sigma`.
std::array<double, 2> average_traces(std::span<const SymMatrix> sigma, int p1, int p2);

/// Test-channel matrices of the realization
///   Y_t = H_t X_t + feedback_t Y_{t-1} + V_t,  V_t ~ G(0, Q_V,t).
struct RealizationSchedule {
  std::vector<Matrix> h;
  std::vector<SymMatrix> q_v;
  std::vector<Matrix> feedback;  // (I - H_t) A_{t-1}; zero at the first stage
};

/// A_prev * sigma_prev * A_prev^T + qbar_prev.
SymMatrix predictor_step(const SymMatrix& sigma_prev, const Matrix& a_prev,
                         const SymMatrix& qbar_prev);

/// Runs the predictor recursion over a filter-covariance schedule.
CovarianceSchedule forward_chain(const SourceModel& m, std::span<const SymMatrix> sigma);

/// State covariances of the source, i.e. the chain with sigma[t] == sigma_minus[t].
std::vector<SymMatrix> state_covariances(const SourceModel& m);

/// H_t = (sigma_minus - sigma) pinv(sigma_minus), Q_V,t = H_t sigma_minus (I - H_t)^T.
/// Throws InfeasibleSchedule if sigma[t] <= sigma_minus[t] fails beyond tolerance,
/// NotPSD if a Q_V,t has an eigenvalue below -1e-8.
RealizationSchedule synthesize(const CovarianceSchedule& schedule, const SourceModel& m);

struct ConditionReport {
  /// ||Sigma^- H^T - (H Sigma^- H^T + Q_V)||_F per stage.
  std::vector<double> condition1;
  /// ||H Sigma^- - Sigma^- H^T||_F per stage.
  std::vector<double> symmetry_defect;
  /// Smallest eigenvalue of H Sigma^- (symmetrized) per stage.
  std::vector<double> gain_min_eigenvalue;
  /// Smallest eigenvalue of Q_V per stage.
  std::vector<double> qv_min_eigenvalue;
  /// ||Q_V - (Sigma - Sigma (Sigma^-)^{-1} Sigma)||_F; NaN where Sigma^- is rank deficient.
  std::vector<double> qv_formula_gap;
  /// Condition 2 (the reproduction depends on the past only through the
  /// affine feedback) holds by construction of the realization.
  bool condition2_structural = true;

  double max_residual() const;
};

ConditionReport check_sufficient_conditions(const RealizationSchedule& r,
                                            const CovarianceSchedule& schedule);

/// 0.5 * (logdet sigma_minus - logdet sigma), nats.
double stage_rate(const SymMatrix& sigma_minus, const SymMatrix& sigma);

struct RateSummary {
  std::vector<double> per_stage;
  double total = 0.0;
  double average = 0.0;
};

RateSummary total_rate(const CovarianceSchedule& schedule);

}  // namespace nrdf
