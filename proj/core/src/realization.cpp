#include "nrdf/realization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace nrdf {

namespace {

double ordering_tolerance(const SymMatrix& sigma_minus) {
  const double scale = sigma_minus.dim() > 0 ? sigma_minus.matrix().cwiseAbs().maxCoeff() : 0.0;
  return kPsdTol * std::max(1.0, scale);
}

}  // namespace

bool CovarianceSchedule::all_feasible() const {
  return std::all_of(feasible.begin(), feasible.end(), [](bool f) { return f; });
}

bool CovarianceSchedule::strictly_interior(double tol) const {
  for (std::size_t t = 0; t < sigma.size(); ++t) {
    if (!(ordering_margin[t] > tol * std::max(1.0, sigma_minus[t].matrix().cwiseAbs().maxCoeff()))) {
      return false;
    }
  }
  return true;
}

SymMatrix component_block(const SymMatrix& s, int p1, int p2, int component) {
  return component == 1 ? s.principal_block(0, p1) : s.principal_block(p1, p2);
}

std::array<double, 2> average_traces(std::span<const SymMatrix> sigma, int p1, int p2) {
  std::array<double, 2> sum{0.0, 0.0};
  for (const auto& s : sigma) {
    sum[0] += s.matrix().diagonal().head(p1).sum();
    sum[1] += s.matrix().diagonal().segment(p1, p2).sum();
  }
  const double n = static_cast<double>(sigma.size());
  return {sum[0] / n, sum[1] / n};
}

SymMatrix predictor_step(const SymMatrix& sigma_prev, const Matrix& a_prev,
                         const SymMatrix& qbar_prev) {
  return SymMatrix(Matrix(a_prev * sigma_prev.matrix() * a_prev.transpose() + qbar_prev.matrix()));
}

CovarianceSchedule forward_chain(const SourceModel& m, std::span<const SymMatrix> sigma) {
  if (sigma.size() != static_cast<std::size_t>(m.n)) {
    throw std::invalid_argument("forward_chain: expected " + std::to_string(m.n) +
                                " stages, got " + std::to_string(sigma.size()));
  }
  const QbarSchedule qbar = qbar_schedule(m);
  CovarianceSchedule out;
  out.sigma.assign(sigma.begin(), sigma.end());
  out.sigma_minus.reserve(sigma.size());
  out.sigma_minus.emplace_back(m.q_x1);
  for (std::size_t t = 1; t < sigma.size(); ++t) {
    out.sigma_minus.push_back(predictor_step(sigma[t - 1], m.a[t - 1], qbar.qbar[t - 1]));
  }
  for (std::size_t t = 0; t < sigma.size(); ++t) {
    const double margin = min_eigenvalue(out.sigma_minus[t] - out.sigma[t]);
    out.ordering_margin.push_back(margin);
    out.feasible.push_back(margin >= -ordering_tolerance(out.sigma_minus[t]));
  }
  return out;
}

std::vector<SymMatrix> state_covariances(const SourceModel& m) {
  const QbarSchedule qbar = qbar_schedule(m);
  std::vector<SymMatrix> out;
  out.reserve(static_cast<std::size_t>(m.n));
  out.emplace_back(m.q_x1);
  for (int t = 1; t < m.n; ++t) {
    const auto k = static_cast<std::size_t>(t - 1);
    out.push_back(predictor_step(out.back(), m.a[k], qbar.qbar[k]));
  }
  return out;
}

RealizationSchedule synthesize(const CovarianceSchedule& schedule, const SourceModel& m) {
  const Index p = m.state_dim();
  const Matrix id = Matrix::Identity(p, p);
  RealizationSchedule r;
  for (std::size_t t = 0; t < schedule.stages(); ++t) {
    const SymMatrix& sm = schedule.sigma_minus[t];
    const SymMatrix& s = schedule.sigma[t];
    if (!schedule.feasible.empty() && !schedule.feasible[t]) {
      throw InfeasibleSchedule("synthesize: stage " + std::to_string(t + 1) +
                               " violates sigma <= sigma_minus");
    }
    const double margin = min_eigenvalue(sm - s);
    if (margin < -ordering_tolerance(sm)) {
      throw InfeasibleSchedule("synthesize: stage " + std::to_string(t + 1) +
                               " violates sigma <= sigma_minus");
    }
    const Matrix h = (sm.matrix() - s.matrix()) * pinv(sm).matrix();
    const Matrix gain = h * sm.matrix();
    SymMatrix q_v(Matrix(gain - gain * h.transpose()));
    if (min_eigenvalue(q_v) < -1e-8) {
      throw NotPSD("synthesize: Q_V at stage " + std::to_string(t + 1) + " is not PSD");
    }
    r.h.push_back(h);
    r.q_v.push_back(std::move(q_v));
    r.feedback.push_back(t == 0 ? Matrix(Matrix::Zero(p, p)) : Matrix((id - h) * m.a[t - 1]));
  }
  return r;
}

double ConditionReport::max_residual() const {
  double worst = 0.0;
  for (double v : condition1) worst = std::max(worst, v);
  for (double v : symmetry_defect) worst = std::max(worst, v);
  return worst;
}

ConditionReport check_sufficient_conditions(const RealizationSchedule& r,
                                            const CovarianceSchedule& schedule) {
  ConditionReport out;
  for (std::size_t t = 0; t < r.h.size(); ++t) {
    const Matrix& h = r.h[t];
    const Matrix& sm = schedule.sigma_minus[t].matrix();
    const Matrix& qv = r.q_v[t].matrix();
    // cov(X, Y | past) = Sigma^- H^T, cov(Y, Y | past) = H Sigma^- H^T + Q_V
    const Matrix cross = sm * h.transpose();
    const Matrix output = h * sm * h.transpose() + qv;
    out.condition1.push_back((cross - output).norm());
    const Matrix gain = h * sm;
    out.symmetry_defect.push_back((gain - gain.transpose()).norm());
    out.gain_min_eigenvalue.push_back(min_eigenvalue(SymMatrix(gain)));
    out.qv_min_eigenvalue.push_back(min_eigenvalue(r.q_v[t]));

    const SymMatrix& smin = schedule.sigma_minus[t];
    Eigen::LLT<Matrix> llt(sm);
    const bool full_rank =
        llt.info() == Eigen::Success && min_eigenvalue(smin) > kRankTol * smin.matrix().norm();
    if (full_rank) {
      const Matrix& s = schedule.sigma[t].matrix();
      const Matrix alt = s - s * llt.solve(s);
      out.qv_formula_gap.push_back((qv - 0.5 * (alt + alt.transpose())).norm());
    } else {
      out.qv_formula_gap.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return out;
}

double stage_rate(const SymMatrix& sigma_minus, const SymMatrix& sigma) {
  return 0.5 * (logdet(sigma_minus) - logdet(sigma));
}

RateSummary total_rate(const CovarianceSchedule& schedule) {
  RateSummary out;
  for (std::size_t t = 0; t < schedule.stages(); ++t) {
    const double r = stage_rate(schedule.sigma_minus[t], schedule.sigma[t]);
    out.per_stage.push_back(r);
    out.total += r;
  }
  out.average = schedule.stages() > 0 ? out.total / static_cast<double>(schedule.stages()) : 0.0;
  return out;
}

}  // namespace nrdf
