#pragma once

#include "nrdf/kkt_solver.hpp"
#include "nrdf/model.hpp"
#include "nrdf/oracle.hpp"

namespace nrdf {

struct SolveOptions {
  /// Use the scalar closed form when the model has that shape.
  bool closed_form = false;
  /// Run the direct minimizer and attach its rate. Boundary cases are then
  /// answered by the oracle (regime oracle_only).
  bool run_oracle = false;
  OracleOptions oracle;
};

/// Calibration, realization and diagnostics for one problem.
SolveReport solve(const SourceModel& m, const DistortionSpec& d, const SolveOptions& options = {});

}  // namespace nrdf
