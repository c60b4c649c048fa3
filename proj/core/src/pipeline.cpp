#include "nrdf/pipeline.hpp"

#include <utility>

namespace nrdf {

namespace {

SolveReport multiplier_path(const SourceModel& m, const DistortionSpec& d) {
  Calibration c = calibrate_multipliers(m, d);
  const char* method = c.regime == Regime::zero_rate ? "zero-rate" : "kkt";
  return make_report(m, d, std::move(c), method);
}

}  // namespace

SolveReport solve(const SourceModel& m, const DistortionSpec& d, const SolveOptions& options) {
  SolveReport report;
  bool done = false;
  if (options.closed_form) {
    try {
      report = scalar_example(m, d);
      done = true;
    } catch (const NotScalar&) {
    } catch (const BoundaryRegime&) {
    }
  }
  if (!done) report = multiplier_path(m, d);
  if (!options.run_oracle) return report;

  const OracleResult oracle = direct_minimize(m, d, options.oracle);
  report.oracle_rate = oracle.rate;
  if (report.regime != Regime::boundary_detected) {
    report.oracle_gap = report.rate_total - oracle.rate;
    return report;
  }

  // The multiplier path has no answer here; the oracle schedule replaces it.
  report.regime = Regime::oracle_only;
  report.method = "oracle";
  report.schedule = oracle.schedule;
  report.achieved = average_traces(report.schedule.sigma, m.p1, m.p2);
  const RateSummary rates = total_rate(report.schedule);
  report.rate_total = rates.total;
  report.rate_per_stage = rates.per_stage;
  report.multipliers.lambda1 = oracle.residuals.lambda_estimate[0];
  report.multipliers.lambda2 = oracle.residuals.lambda_estimate[1];
  report.realization = synthesize(report.schedule, m);
  report.conditions = check_sufficient_conditions(report.realization, report.schedule);
  report.oracle_gap = 0.0;
  return report;
}

}  // namespace nrdf
