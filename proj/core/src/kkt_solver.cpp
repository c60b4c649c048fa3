#include "nrdf/kkt_solver.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace nrdf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Matrix lambda_matrix(double lambda1, double lambda2, int p1, int p2) {
  Vector d(p1 + p2);
  d.head(p1).setConstant(lambda1);
  d.tail(p2).setConstant(lambda2);
  return d.asDiagonal();
}

// 0.5 * Lambda^{-1}
SymMatrix half_inverse_lambda(double lambda1, double lambda2, int p1, int p2) {
  Vector d(p1 + p2);
  d.head(p1).setConstant(0.5 / lambda1);
  d.tail(p2).setConstant(0.5 / lambda2);
  return SymMatrix::diagonal(d);
}

bool qbar_block_diagonal(const QbarSchedule& qbar, int p1, int p2) {
  for (const auto& q : qbar.qbar) {
    const double scale = std::max(1.0, q.matrix().cwiseAbs().maxCoeff());
    if (q.matrix().block(0, p1, p1, p2).cwiseAbs().maxCoeff() > 1e-14 * scale) return false;
  }
  return true;
}

using ScalarMap = std::function<double(double)>;

// Root of the nonincreasing map lambda -> g(lambda) on [lo, hi], bisected in log lambda.
double bisect_log(const ScalarMap& g, double target, const CalibrationOptions& opt,
                  const char* which) {
  double lo = std::log(opt.lambda_min);
  double hi = std::log(opt.lambda_max);
  const double tol = opt.trace_tolerance * std::max(1.0, target);
  const double g_lo = g(std::exp(lo)) - target;
  const double g_hi = g(std::exp(hi)) - target;
  if (g_lo < 0.0 || g_hi > 0.0) {
    throw BracketingFailure(std::string("no multiplier in range meets the budget of ") + which);
  }
  if (std::abs(g_lo) <= tol) return std::exp(lo);
  if (std::abs(g_hi) <= tol) return std::exp(hi);
  double mid = 0.5 * (lo + hi);
  for (int i = 0; i < opt.max_bisection; ++i) {
    mid = 0.5 * (lo + hi);
    const double v = g(std::exp(mid)) - target;
    if (std::abs(v) <= tol) break;
    if (v > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(mid))) {
      break;
    }
  }
  return std::exp(mid);
}

using TraceMap = std::function<std::array<double, 2>(double, double)>;

bool traces_converged(const std::array<double, 2>& tr, const std::array<double, 2>& targets,
                      double tol) {
  return std::abs(tr[0] - targets[0]) <= tol * std::max(1.0, targets[0]) &&
         std::abs(tr[1] - targets[1]) <= tol * std::max(1.0, targets[1]);
}

// Damped Newton on log(lambda) with a finite-difference Jacobian. Returns false
// if it fails to converge; lambdas are updated in place only on success.
bool newton_refine(const TraceMap& traces, const std::array<double, 2>& targets,
                   std::array<double, 2>& lambdas, const CalibrationOptions& opt) {
  Eigen::Vector2d u(std::log(lambdas[0]), std::log(lambdas[1]));
  const auto residual = [&](const Eigen::Vector2d& x) {
    const auto tr = traces(std::exp(x(0)), std::exp(x(1)));
    return Eigen::Vector2d(tr[0] / targets[0] - 1.0, tr[1] / targets[1] - 1.0);
  };
  const double lo = std::log(opt.lambda_min);
  const double hi = std::log(opt.lambda_max);
  Eigen::Vector2d f = residual(u);
  for (int iter = 0; iter < opt.max_newton; ++iter) {
    if (f.cwiseAbs().maxCoeff() <= opt.trace_tolerance) {
      lambdas = {std::exp(u(0)), std::exp(u(1))};
      return true;
    }
    Eigen::Matrix2d jac;
    for (int j = 0; j < 2; ++j) {
      const double h = 1e-7 * std::max(1.0, std::abs(u(j)));
      Eigen::Vector2d up = u;
      up(j) += h;
      jac.col(j) = (residual(up) - f) / h;
    }
    Eigen::FullPivLU<Eigen::Matrix2d> lu(jac);
    if (!lu.isInvertible() || std::abs(jac.determinant()) < 1e-14) return false;
    const Eigen::Vector2d step = -lu.solve(f);
    double alpha = 1.0;
    bool accepted = false;
    while (alpha > 1e-6) {
      Eigen::Vector2d trial = (u + alpha * step).cwiseMax(lo).cwiseMin(hi);
      Eigen::Vector2d ft = residual(trial);
      if (ft.norm() < f.norm()) {
        u = trial;
        f = ft;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) return false;
  }
  if (f.cwiseAbs().maxCoeff() <= opt.trace_tolerance) {
    lambdas = {std::exp(u(0)), std::exp(u(1))};
    return true;
  }
  return false;
}

// Matches both average traces; decoupled maps get one bisection per component.
std::array<double, 2> calibrate_pair(const TraceMap& traces, const std::array<double, 2>& targets,
                                     bool decoupled, const CalibrationOptions& opt) {
  const auto sweep = [&](std::array<double, 2>& l) {
    l[0] = bisect_log([&](double x) { return traces(x, l[1])[0]; }, targets[0], opt, "delta1");
    l[1] = bisect_log([&](double x) { return traces(l[0], x)[1]; }, targets[1], opt, "delta2");
  };
  std::array<double, 2> lambdas{1.0, 1.0};
  if (decoupled) {
    sweep(lambdas);
    return lambdas;
  }
  for (int s = 0; s < 3; ++s) sweep(lambdas);
  if (traces_converged(traces(lambdas[0], lambdas[1]), targets, opt.trace_tolerance)) {
    return lambdas;
  }
  if (newton_refine(traces, targets, lambdas, opt)) return lambdas;
  // Derivative-free fallback: keep bracketing coordinate-wise.
  for (int s = 0; s < opt.max_sweeps; ++s) {
    sweep(lambdas);
    if (traces_converged(traces(lambdas[0], lambdas[1]), targets, opt.trace_tolerance)) {
      return lambdas;
    }
  }
  throw BracketingFailure("multiplier search did not converge");
}

Multipliers zero_dual(double lambda1, double lambda2, const SourceModel& m) {
  Multipliers mult;
  mult.lambda1 = lambda1;
  mult.lambda2 = lambda2;
  mult.theta.assign(static_cast<std::size_t>(m.n), SymMatrix::zero(m.state_dim()));
  mult.v.assign(static_cast<std::size_t>(m.n), SymMatrix::zero(m.state_dim()));
  return mult;
}

// Zero-rate calibration when both budgets cover the prior uncertainty.
std::optional<Calibration> zero_rate_calibration(const SourceModel& m, const DistortionSpec& d) {
  const std::vector<SymMatrix> states = state_covariances(m);
  const auto tr = average_traces(states, m.p1, m.p2);
  if (d.delta1 < tr[0] || d.delta2 < tr[1]) return std::nullopt;
  Calibration c;
  c.multipliers = zero_dual(0.0, 0.0, m);
  c.schedule = forward_chain(m, states);
  c.regime = Regime::zero_rate;
  return c;
}

std::optional<Matrix> try_inverse(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) return std::nullopt;
  return Matrix(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

}  // namespace

std::string_view to_string(Regime regime) {
  switch (regime) {
    case Regime::interior:
      return "interior";
    case Regime::zero_rate:
      return "zero-rate";
    case Regime::boundary_detected:
      return "boundary-detected";
    case Regime::oracle_only:
      return "oracle-only";
  }
  return "unknown";
}

double KktResiduals::stationarity() const {
  if (std::isnan(stationarity_terminal)) return kNaN;
  double worst = stationarity_terminal;
  for (double b : backward) {
    if (std::isnan(b)) return kNaN;
    worst = std::max(worst, b);
  }
  return worst;
}

double KktResiduals::complementary_slackness() const {
  double worst = std::max(slackness_lambda[0], slackness_lambda[1]);
  for (double v : slackness_v) worst = std::max(worst, v);
  for (double v : slackness_theta) worst = std::max(worst, v);
  return worst;
}

double KktResiduals::max_residual() const {
  const double st = stationarity();
  if (std::isnan(st)) return kNaN;
  double worst = std::max(st, complementary_slackness());
  worst = std::max(worst, std::max(0.0, -ordering_margin));
  worst = std::max(worst, std::max(0.0, -budget_margin[0]));
  worst = std::max(worst, std::max(0.0, -budget_margin[1]));
  worst = std::max(worst, std::max(0.0, -dual_margin));
  return worst;
}

std::vector<SymMatrix> interior_schedule(double lambda1, double lambda2, const SourceModel& m) {
  if (!(lambda1 > 0.0) || !(lambda2 > 0.0)) {
    throw std::invalid_argument("interior_schedule: multipliers must be positive");
  }
  const QbarSchedule qbar = qbar_schedule(m);
  const SymMatrix c = half_inverse_lambda(lambda1, lambda2, m.p1, m.p2);
  const auto n = static_cast<std::size_t>(m.n);
  std::vector<SymMatrix> sigma(n);
  sigma[n - 1] = c;
  for (std::size_t t = n - 1; t-- > 0;) {
    // Time-invariant stretches reuse the previous root.
    if (t + 2 < n && qbar.qbar[t] == qbar.qbar[t + 1]) {
      sigma[t] = sigma[t + 1];
    } else {
      sigma[t] = solve_matrix_quadratic(c, qbar.qbar[t]);
    }
  }
  return sigma;
}

Calibration calibrate_multipliers(const SourceModel& m, const DistortionSpec& d,
                                  const CalibrationOptions& options) {
  if (auto zero = zero_rate_calibration(m, d)) return *zero;

  const QbarSchedule qbar = qbar_schedule(m);
  const bool decoupled = qbar_block_diagonal(qbar, m.p1, m.p2);
  const TraceMap traces = [&](double l1, double l2) {
    return average_traces(interior_schedule(l1, l2, m), m.p1, m.p2);
  };
  const auto lambdas = calibrate_pair(traces, {d.delta1, d.delta2}, decoupled, options);

  Calibration c;
  c.multipliers = zero_dual(lambdas[0], lambdas[1], m);
  c.schedule = forward_chain(m, interior_schedule(lambdas[0], lambdas[1], m));
  c.regime = c.schedule.strictly_interior() ? Regime::interior : Regime::boundary_detected;
  return c;
}

KktResiduals kkt_residuals(const CovarianceSchedule& schedule, const Multipliers& multipliers,
                           const SourceModel& m, const DistortionSpec& d) {
  const auto n = schedule.stages();
  const Index p = m.state_dim();
  const Matrix lambda = lambda_matrix(multipliers.lambda1, multipliers.lambda2, m.p1, m.p2);
  const QbarSchedule qbar = qbar_schedule(m);
  const auto theta = [&](std::size_t t) -> Matrix {
    return t < multipliers.theta.size() ? multipliers.theta[t].matrix() : Matrix::Zero(p, p);
  };
  const auto v = [&](std::size_t t) -> Matrix {
    return t < multipliers.v.size() ? multipliers.v[t].matrix() : Matrix::Zero(p, p);
  };

  KktResiduals out;
  {
    const auto inv = try_inverse(schedule.sigma[n - 1].matrix());
    out.stationarity_terminal =
        inv ? Matrix(-0.5 * *inv + lambda + theta(n - 1) + v(n - 1)).norm() : kNaN;
  }
  for (std::size_t t = 0; t + 1 < n; ++t) {
    const Matrix& s = schedule.sigma[t].matrix();
    const Matrix bracket = lambda + theta(t) - m.a[t].transpose() * theta(t + 1) * m.a[t];
    const auto inv = try_inverse(0.5 * (bracket + bracket.transpose()));
    out.backward.push_back(
        inv ? Matrix(s + s * qbar.qbar[t].matrix() * s - 0.5 * *inv).norm() : kNaN);
  }

  const auto tr = average_traces(schedule.sigma, m.p1, m.p2);
  const double nd = static_cast<double>(n);
  out.slackness_lambda = {std::abs(multipliers.lambda1 * nd * (tr[0] - d.delta1)),
                          std::abs(multipliers.lambda2 * nd * (tr[1] - d.delta2))};
  out.budget_margin = {d.delta1 - tr[0], d.delta2 - tr[1]};

  out.ordering_margin = std::numeric_limits<double>::infinity();
  out.dual_margin = std::min(multipliers.lambda1, multipliers.lambda2);
  for (std::size_t t = 0; t < n; ++t) {
    const Matrix& s = schedule.sigma[t].matrix();
    const Matrix& sm = schedule.sigma_minus[t].matrix();
    out.slackness_v.push_back(std::abs((v(t) * s).trace()));
    out.slackness_theta.push_back(std::abs((theta(t) * (s - sm)).trace()));
    out.ordering_margin = std::min(out.ordering_margin, min_eigenvalue(SymMatrix(Matrix(sm - s))));
    out.dual_margin = std::min(out.dual_margin, min_eigenvalue(SymMatrix(theta(t))));
    out.dual_margin = std::min(out.dual_margin, min_eigenvalue(SymMatrix(v(t))));
  }
  return out;
}

SolveReport make_report(const SourceModel& m, const DistortionSpec& d, Calibration calibration,
                        std::string method) {
  SolveReport report;
  report.regime = calibration.regime;
  report.method = std::move(method);
  report.multipliers = std::move(calibration.multipliers);
  report.schedule = std::move(calibration.schedule);
  report.achieved = average_traces(report.schedule.sigma, m.p1, m.p2);
  report.residuals = kkt_residuals(report.schedule, report.multipliers, m, d);
  if (report.regime == Regime::boundary_detected) {
    report.rate_total = kNaN;
    return report;
  }
  const RateSummary rates = total_rate(report.schedule);
  report.rate_total = rates.total;
  report.rate_per_stage = rates.per_stage;
  report.realization = synthesize(report.schedule, m);
  report.conditions = check_sufficient_conditions(report.realization, report.schedule);
  return report;
}

// --- scalar two-process case -------------------------------------------------

double scalar_interior_variance(double lambda, double q) {
  // (-1 + sqrt(1 + 2q/lambda)) / (2q), rearranged to avoid cancellation.
  return (1.0 / lambda) / (1.0 + std::sqrt(1.0 + 2.0 * q / lambda));
}

ScalarPredictor scalar_predictor(const Matrix& a, double s1, double s2, double q1, double q2) {
  ScalarPredictor out;
  out.alpha = a(0, 0) * a(0, 0) * s1 + a(0, 1) * a(0, 1) * s2 + q1;
  out.beta = a(1, 0) * a(1, 0) * s1 + a(1, 1) * a(1, 1) * s2 + q2;
  out.gamma = a(0, 0) * a(1, 0) * s1 + a(1, 1) * a(0, 1) * s2;
  return out;
}

SolveReport scalar_example(const SourceModel& m, const DistortionSpec& d) {
  if (m.p1 != 1 || m.p2 != 1) throw NotScalar("scalar_example requires p1 = p2 = 1");
  if (!m.time_invariant()) throw NotScalar("scalar_example requires constant A, B, Q_W");
  if (std::abs(m.q_x1(0, 1)) > 0.0) throw NotScalar("scalar_example requires diagonal Q_X1");
  double q1 = 1.0;
  double q2 = 1.0;
  if (m.n > 1) {
    const SymMatrix qbar = qbar_schedule(m).qbar.front();
    q1 = qbar(0, 0);
    q2 = qbar(1, 1);
    if (qbar(0, 1) != 0.0) throw NotScalar("scalar_example requires diagonal Qbar");
    if (!(q1 > 0.0) || !(q2 > 0.0)) throw NotScalar("scalar_example requires Qbar > 0");
  }

  if (auto zero = zero_rate_calibration(m, d)) {
    return make_report(m, d, std::move(*zero), "zero-rate");
  }

  const CalibrationOptions opt;
  const double n = static_cast<double>(m.n);
  // 1/(2 lambda) + (n - 1) * s(lambda) = n * delta
  const auto calibrate = [&](double q, double delta, const char* which) {
    return bisect_log(
        [&](double l) { return (0.5 / l + (n - 1.0) * scalar_interior_variance(l, q)) / n; },
        delta, opt, which);
  };
  const double lambda1 = calibrate(q1, d.delta1, "delta1");
  const double lambda2 = calibrate(q2, d.delta2, "delta2");

  const auto stages = static_cast<std::size_t>(m.n);
  const double s1 = scalar_interior_variance(lambda1, q1);
  const double s2 = scalar_interior_variance(lambda2, q2);
  std::vector<double> e1(stages, s1);
  std::vector<double> e2(stages, s2);
  e1.back() = 1.0 / (2.0 * lambda1);
  e2.back() = 1.0 / (2.0 * lambda2);

  Calibration c;
  c.multipliers = zero_dual(lambda1, lambda2, m);
  std::vector<double> rate(stages);
  for (std::size_t t = 0; t < stages; ++t) {
    ScalarPredictor pred{m.q_x1(0, 0), m.q_x1(1, 1), 0.0};
    if (t > 0) pred = scalar_predictor(m.a[t - 1], e1[t - 1], e2[t - 1], q1, q2);
    Matrix sm(2, 2);
    sm << pred.alpha, pred.gamma, pred.gamma, pred.beta;
    Matrix s = Matrix::Zero(2, 2);
    s(0, 0) = e1[t];
    s(1, 1) = e2[t];
    c.schedule.sigma_minus.emplace_back(sm);
    c.schedule.sigma.emplace_back(s);
    const double margin = min_eigenvalue(SymMatrix(Matrix(sm - s)));
    c.schedule.ordering_margin.push_back(margin);
    c.schedule.feasible.push_back(margin >= 0.0);
    rate[t] = 0.5 * std::log((pred.alpha * pred.beta - pred.gamma * pred.gamma) / (e1[t] * e2[t]));
  }
  if (!c.schedule.strictly_interior()) {
    throw BoundaryRegime("scalar_example: closed form violates sigma < sigma_minus");
  }
  c.regime = Regime::interior;
  SolveReport report = make_report(m, d, std::move(c), "closed-form");
  report.rate_per_stage = rate;
  report.rate_total = 0.0;
  for (double r : rate) report.rate_total += r;
  return report;
}

namespace {

// P = A P A^T + Q for a stable A; nullopt if A is not stable.
std::optional<SymMatrix> stationary_state_covariance(const Matrix& a, const SymMatrix& q) {
  Eigen::EigenSolver<Matrix> es(a, false);
  if (es.eigenvalues().cwiseAbs().maxCoeff() >= 1.0) return std::nullopt;
  const Index p = a.rows();
  // (I - A (x) A) vec(P) = vec(Q)
  Matrix k = Matrix::Identity(p * p, p * p);
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j < p; ++j) k.block(i * p, j * p, p, p) -= a(i, j) * a;
  }
  const Eigen::Map<const Vector> rhs(q.matrix().data(), p * p);
  const Vector x = k.partialPivLu().solve(rhs);
  return SymMatrix(Matrix(Eigen::Map<const Matrix>(x.data(), p, p)));
}

}  // namespace

double per_unit_time_rate(const SourceModel& m, const DistortionSpec& d) {
  if (m.n < 2) {
    throw std::invalid_argument("per_unit_time_rate: model needs at least one transition");
  }
  if (!m.time_invariant()) {
    throw std::invalid_argument("per_unit_time_rate: model must be time-invariant");
  }
  const Matrix& a = m.a.front();
  const SymMatrix qbar = qbar_schedule(m).qbar.front();

  if (const auto p = stationary_state_covariance(a, qbar)) {
    const double t1 = p->matrix().diagonal().head(m.p1).sum();
    const double t2 = p->matrix().diagonal().tail(m.p2).sum();
    if (d.delta1 >= t1 && d.delta2 >= t2) return 0.0;
  }

  QbarSchedule single{{qbar}, {true}};
  const bool decoupled = qbar_block_diagonal(single, m.p1, m.p2);
  const auto stationary = [&](double l1, double l2) {
    return solve_matrix_quadratic(half_inverse_lambda(l1, l2, m.p1, m.p2), qbar);
  };
  const TraceMap traces = [&](double l1, double l2) {
    const SymMatrix s = stationary(l1, l2);
    return std::array<double, 2>{s.matrix().diagonal().head(m.p1).sum(),
                                 s.matrix().diagonal().tail(m.p2).sum()};
  };
  const auto lambdas = calibrate_pair(traces, {d.delta1, d.delta2}, decoupled, CalibrationOptions{});
  const SymMatrix sigma = stationary(lambdas[0], lambdas[1]);
  const SymMatrix sigma_minus = predictor_step(sigma, a, qbar);
  const double margin = min_eigenvalue(sigma_minus - sigma);
  if (!(margin > kPsdTol * std::max(1.0, sigma_minus.matrix().cwiseAbs().maxCoeff()))) {
    throw BoundaryRegime("per_unit_time_rate: stationary point leaves the interior");
  }
  return stage_rate(sigma_minus, sigma);
}

}  // namespace nrdf
