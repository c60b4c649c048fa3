#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nrdf/model.hpp"
#include "nrdf/numerics.hpp"
#include "nrdf/realization.hpp"

namespace nrdf {

/// Sampled source and reproduction trajectories, stored path-major:
/// entry (path, t, k) lives at ((path * n) + t) * dim + k.
struct PathEnsemble {
  long paths = 0;
  int n = 0;
  int p1 = 0;
  int p2 = 0;
  std::uint64_t seed = 0;
  std::vector<double> x;
  std::vector<double> y;

  int dim() const { return p1 + p2; }
  Eigen::Map<const Vector> x_at(long path, int t) const;
  Eigen::Map<const Vector> y_at(long path, int t) const;
  Eigen::Map<Vector> x_at(long path, int t);
  Eigen::Map<Vector> y_at(long path, int t);
};

/// Draws N paths of the source and of the realization
///   Y_t = H_t X_t + feedback_t Y_{t-1} + V_t.
/// Each path has its own generator seeded from (seed, path), so the ensemble is
/// identical for any `jobs`.
PathEnsemble sample_paths(const SourceModel& m, const RealizationSchedule& r, long paths,
                          std::uint64_t seed, int jobs = 1);

struct DistortionEstimate {
  /// Per stage and component: (1/N) sum ||x_i - y_i||^2 and its standard error.
  std::vector<std::array<double, 2>> mean;
  std::vector<std::array<double, 2>> standard_error;
  std::array<double, 2> average{0.0, 0.0};
  std::array<double, 2> average_standard_error{0.0, 0.0};
};

DistortionEstimate empirical_distortion(const PathEnsemble& e);

/// Sample mean of a product moment in standard-error units.
struct ZStat {
  int t = 0;  // 0-based stages
  int s = 0;
  Index row = 0;
  Index col = 0;
  double mean = 0.0;
  double standard_error = 0.0;
  double z = 0.0;  // 0 when both mean and standard error vanish
};

double max_abs_z(const std::vector<ZStat>& stats);

/// E[(X_t - Y_t) Y_s^T] for every s <= t and every entry.
std::vector<ZStat> orthogonality_residuals(const PathEnsemble& e);

struct CausalityReport {
  /// Entries of E[e_Y e_F^T] where e_Y, e_F are the residuals of Y_t and of
  /// X_{t+1..n} after regression on X_{1..t}; s indexes the future stage.
  std::vector<ZStat> residuals;
  /// Some conditioning covariance was numerically singular; a pseudo-inverse
  /// was used for that stage.
  bool singular_conditioning = false;
};

CausalityReport causality_check(const PathEnsemble& e);

/// 0.5 sum_t (logdet cov(X_t - A_{t-1} Y_{t-1}) - logdet cov(X_t - Y_t)) from
/// sample second moments.
double empirical_rate(const PathEnsemble& e, const SourceModel& m);

/// Sample covariance of X_t for every stage.
std::vector<SymMatrix> sample_state_covariances(const PathEnsemble& e);

/// Scales every H_t; Q_V and the feedback are left untouched.
RealizationSchedule perturb_gain(const RealizationSchedule& r, double factor);

/// Y_t += factor * X_{t+1} for t < n.
void apply_anticausal_corruption(PathEnsemble& e, double factor);

}  // namespace nrdf
