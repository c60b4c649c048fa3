#include "nrdf/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>

namespace nrdf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::optional<double> chol_logdet(const Matrix& m, Eigen::LLT<Matrix>& llt) {
  llt.compute(m);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const auto diag = llt.matrixLLT().diagonal();
  if ((diag.array() <= 0.0).any()) return std::nullopt;
  return 2.0 * diag.array().log().sum();
}

Matrix inverse_from(const Eigen::LLT<Matrix>& llt, Index p) {
  return llt.solve(Matrix::Identity(p, p));
}

// The oracle's view of the problem: stage data and the barrier objective in
// Cholesky-factor coordinates. Stage t has p(p+1)/2 parameters, the lower
// triangle of L_t packed column by column.
class BarrierProblem {
 public:
  struct State {
    std::vector<Matrix> factor;     // L_t
    std::vector<Matrix> sigma;      // L_t L_t^T
    std::vector<Matrix> predictor;  // Sigma^-_t
    std::vector<Matrix> gap;        // Sigma^-_t - Sigma_t
    std::vector<Matrix> sigma_inv;
    std::vector<Matrix> predictor_inv;
    std::vector<Matrix> gap_inv;
    std::array<double, 2> slack{0.0, 0.0};
    double rate = 0.0;
    double value = 0.0;
  };

  BarrierProblem(const SourceModel& m, const DistortionSpec& d)
      : n_(m.n), p_(m.state_dim()), p1_(m.p1), p2_(m.p2), a_(m.a), qx1_(m.q_x1) {
    for (const auto& q : qbar_schedule(m).qbar) qbar_.push_back(q.matrix());
    budget_ = {static_cast<double>(m.n) * d.delta1, static_cast<double>(m.n) * d.delta2};
    select_[0] = Matrix::Zero(p_, p_);
    select_[1] = Matrix::Zero(p_, p_);
    select_[0].diagonal().head(p1_).setOnes();
    select_[1].diagonal().tail(p2_).setOnes();
  }

  int stages() const { return n_; }
  Index dim() const { return p_; }
  Index stage_params() const { return p_ * (p_ + 1) / 2; }
  Index num_params() const { return stage_params() * n_; }
  const Matrix& qx1() const { return qx1_; }

  Vector pack(const std::vector<Matrix>& factors) const {
    Vector x(num_params());
    Index k = 0;
    for (const auto& l : factors) {
      for (Index j = 0; j < p_; ++j) {
        for (Index i = j; i < p_; ++i) x(k++) = l(i, j);
      }
    }
    return x;
  }

  std::vector<Matrix> unpack(const Vector& x) const {
    std::vector<Matrix> out(static_cast<std::size_t>(n_), Matrix::Zero(p_, p_));
    Index k = 0;
    for (auto& l : out) {
      for (Index j = 0; j < p_; ++j) {
        for (Index i = j; i < p_; ++i) l(i, j) = x(k++);
      }
    }
    return out;
  }

  Matrix predictor_from(int t, const Matrix& sigma_prev) const {
    if (t == 0) return qx1_;
    const auto k = static_cast<std::size_t>(t - 1);
    const Matrix s = a_[k] * sigma_prev * a_[k].transpose() + qbar_[k];
    return 0.5 * (s + s.transpose());
  }

  /// Fills `st`; false outside the strict interior.
  bool evaluate(const Vector& x, double mu, State& st) const {
    st.factor = unpack(x);
    st.sigma.assign(st.factor.size(), Matrix());
    st.predictor.assign(st.factor.size(), Matrix());
    st.gap.assign(st.factor.size(), Matrix());
    st.sigma_inv.assign(st.factor.size(), Matrix());
    st.predictor_inv.assign(st.factor.size(), Matrix());
    st.gap_inv.assign(st.factor.size(), Matrix());
    st.rate = 0.0;
    double barrier = 0.0;
    std::array<double, 2> used{0.0, 0.0};
    Eigen::LLT<Matrix> llt;
    for (int t = 0; t < n_; ++t) {
      const auto k = static_cast<std::size_t>(t);
      st.sigma[k] = st.factor[k] * st.factor[k].transpose();
      st.predictor[k] = predictor_from(t, t > 0 ? st.sigma[k - 1] : Matrix());
      st.gap[k] = st.predictor[k] - st.sigma[k];
      const auto ld_sigma = chol_logdet(st.sigma[k], llt);
      if (!ld_sigma) return false;
      st.sigma_inv[k] = inverse_from(llt, p_);
      const auto ld_pred = chol_logdet(st.predictor[k], llt);
      if (!ld_pred) return false;
      st.predictor_inv[k] = inverse_from(llt, p_);
      const auto ld_gap = chol_logdet(st.gap[k], llt);
      if (!ld_gap) return false;
      st.gap_inv[k] = inverse_from(llt, p_);
      st.rate += 0.5 * (*ld_pred - *ld_sigma);
      barrier -= *ld_gap;
      used[0] += st.sigma[k].diagonal().head(p1_).sum();
      used[1] += st.sigma[k].diagonal().tail(p2_).sum();
    }
    for (int i = 0; i < 2; ++i) {
      st.slack[i] = budget_[i] - used[i];
      if (!(st.slack[i] > 0.0)) return false;
      barrier -= std::log(st.slack[i]);
    }
    st.value = st.rate + mu * barrier;
    return std::isfinite(st.value);
  }

  /// G_t with d value = sum_t trace(G_t d Sigma_t).
  std::vector<Matrix> sigma_gradient(const State& st, double mu) const {
    std::vector<Matrix> g(static_cast<std::size_t>(n_));
    const Matrix budget_term = mu / st.slack[0] * select_[0] + mu / st.slack[1] * select_[1];
    for (int t = 0; t < n_; ++t) {
      const auto k = static_cast<std::size_t>(t);
      Matrix gt = -0.5 * st.sigma_inv[k] + mu * st.gap_inv[k] + budget_term;
      if (t + 1 < n_) {
        const Matrix& a = a_[k];
        gt += a.transpose() * (0.5 * st.predictor_inv[k + 1] - mu * st.gap_inv[k + 1]) * a;
      }
      g[k] = 0.5 * (gt + gt.transpose());
    }
    return g;
  }

  /// Directional derivative of sigma_gradient along d Sigma.
  std::vector<Matrix> sigma_gradient_derivative(const State& st, double mu,
                                                const std::vector<Matrix>& dsigma) const {
    const auto n = static_cast<std::size_t>(n_);
    std::vector<Matrix> dpred(n, Matrix::Zero(p_, p_));
    std::vector<Matrix> dgap(n);
    std::array<double, 2> dslack{0.0, 0.0};
    for (std::size_t t = 0; t < n; ++t) {
      if (t > 0) dpred[t] = a_[t - 1] * dsigma[t - 1] * a_[t - 1].transpose();
      dgap[t] = dpred[t] - dsigma[t];
      dslack[0] -= dsigma[t].diagonal().head(p1_).sum();
      dslack[1] -= dsigma[t].diagonal().tail(p2_).sum();
    }
    const Matrix budget_term = -mu * dslack[0] / (st.slack[0] * st.slack[0]) * select_[0] -
                               mu * dslack[1] / (st.slack[1] * st.slack[1]) * select_[1];
    std::vector<Matrix> dg(n);
    for (std::size_t t = 0; t < n; ++t) {
      Matrix v = 0.5 * st.sigma_inv[t] * dsigma[t] * st.sigma_inv[t] -
                 mu * st.gap_inv[t] * dgap[t] * st.gap_inv[t] + budget_term;
      if (t + 1 < n) {
        const Matrix inner =
            -0.5 * st.predictor_inv[t + 1] * dpred[t + 1] * st.predictor_inv[t + 1] +
            mu * st.gap_inv[t + 1] * dgap[t + 1] * st.gap_inv[t + 1];
        v += a_[t].transpose() * inner * a_[t];
      }
      dg[t] = 0.5 * (v + v.transpose());
    }
    return dg;
  }

  Vector factor_gradient(const State& st, double mu) const {
    const auto g = sigma_gradient(st, mu);
    std::vector<Matrix> gl(g.size());
    for (std::size_t t = 0; t < g.size(); ++t) gl[t] = 2.0 * g[t] * st.factor[t];
    return pack_lower(gl);
  }

  Matrix factor_hessian(const State& st, double mu) const {
    const auto g = sigma_gradient(st, mu);
    const Index np = num_params();
    Matrix h(np, np);
    const auto n = static_cast<std::size_t>(n_);
    Index col = 0;
    for (std::size_t t = 0; t < n; ++t) {
      for (Index j = 0; j < p_; ++j) {
        for (Index i = j; i < p_; ++i, ++col) {
          Matrix dl = Matrix::Zero(p_, p_);
          dl(i, j) = 1.0;
          std::vector<Matrix> dsigma(n, Matrix::Zero(p_, p_));
          dsigma[t] = dl * st.factor[t].transpose() + st.factor[t] * dl.transpose();
          const auto dg = sigma_gradient_derivative(st, mu, dsigma);
          std::vector<Matrix> dgl(n);
          for (std::size_t s = 0; s < n; ++s) dgl[s] = 2.0 * dg[s] * st.factor[s];
          dgl[t] += 2.0 * g[t] * dl;
          h.col(col) = pack_lower(dgl);
        }
      }
    }
    return 0.5 * (h + h.transpose());
  }

  /// Strictly feasible start: Sigma_t = f * S^{1/2} R S^{1/2} with R = mix * I for
  /// the first start and a random contraction for the others.
  Vector start(int index, std::uint64_t seed) const {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(index));
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform(0.05, 0.95);
    std::vector<Matrix> shapes;
    for (int t = 0; t < n_; ++t) {
      if (index == 0) {
        shapes.push_back(0.5 * Matrix::Identity(p_, p_));
        continue;
      }
      Matrix z(p_, p_);
      for (Index i = 0; i < p_; ++i) {
        for (Index j = 0; j < p_; ++j) z(i, j) = normal(rng);
      }
      const Matrix q = Eigen::HouseholderQR<Matrix>(z).householderQ();
      Vector ev(p_);
      for (Index i = 0; i < p_; ++i) ev(i) = uniform(rng);
      shapes.push_back(q * ev.asDiagonal() * q.transpose());
    }
    for (double f = 1.0; f > 1e-14; f *= 0.5) {
      std::vector<Matrix> factors;
      std::array<double, 2> used{0.0, 0.0};
      Matrix prev;
      for (int t = 0; t < n_; ++t) {
        const Matrix pred = predictor_from(t, prev);
        Eigen::LLT<Matrix> check(pred);
        if (check.info() != Eigen::Success ||
            min_eigenvalue(SymMatrix(pred)) <= 1e-300) {
          throw InfeasibleBudget("direct_minimize: predictor covariance at stage " +
                                 std::to_string(t + 1) +
                                 " is singular, no strictly feasible schedule exists");
        }
        const Matrix root = psd_sqrt(SymMatrix(pred)).matrix();
        Matrix sigma = f * root * shapes[static_cast<std::size_t>(t)] * root;
        sigma = 0.5 * (sigma + sigma.transpose());
        used[0] += sigma.diagonal().head(p1_).sum();
        used[1] += sigma.diagonal().tail(p2_).sum();
        Eigen::LLT<Matrix> llt(sigma);
        if (llt.info() != Eigen::Success) break;
        factors.push_back(llt.matrixL());
        prev = sigma;
      }
      if (static_cast<int>(factors.size()) == n_ && used[0] < budget_[0] && used[1] < budget_[1]) {
        return pack(factors);
      }
    }
    throw InfeasibleBudget("direct_minimize: no strictly feasible start within the budgets");
  }

 private:
  Vector pack_lower(const std::vector<Matrix>& full) const {
    Vector x(num_params());
    Index k = 0;
    for (const auto& m : full) {
      for (Index j = 0; j < p_; ++j) {
        for (Index i = j; i < p_; ++i) x(k++) = m(i, j);
      }
    }
    return x;
  }

  int n_;
  Index p_;
  int p1_;
  int p2_;
  std::vector<Matrix> a_;
  std::vector<Matrix> qbar_;
  Matrix qx1_;
  std::array<double, 2> budget_{0.0, 0.0};
  std::array<Matrix, 2> select_;
};

struct NewtonOutcome {
  bool converged = false;
  double decrement = 0.0;
};

// Damped Newton on the barrier objective at fixed mu.
NewtonOutcome newton_minimize(const BarrierProblem& problem, double mu, int max_iter,
                              Vector& x, BarrierProblem::State& st) {
  NewtonOutcome out;
  if (!problem.evaluate(x, mu, st)) return out;
  BarrierProblem::State trial;
  for (int iter = 0; iter < max_iter; ++iter) {
    const Vector g = problem.factor_gradient(st, mu);
    const Matrix h = problem.factor_hessian(st, mu);
    const Index np = h.rows();
    double shift = 0.0;
    const double scale = std::max(1e-12, h.diagonal().cwiseAbs().maxCoeff());
    Eigen::LLT<Matrix> llt;
    for (int attempt = 0; attempt < 60; ++attempt) {
      llt.compute(h + shift * Matrix::Identity(np, np));
      if (llt.info() == Eigen::Success) break;
      shift = shift == 0.0 ? 1e-10 * scale : 10.0 * shift;
    }
    if (llt.info() != Eigen::Success) return out;
    const Vector step = -llt.solve(g);
    const double slope = g.dot(step);
    out.decrement = -slope;
    if (0.5 * out.decrement <= 1e-14) {
      out.converged = true;
      return out;
    }
    double alpha = 1.0;
    bool accepted = false;
    while (alpha > 1e-16) {
      const Vector xt = x + alpha * step;
      if (problem.evaluate(xt, mu, trial) && trial.value <= st.value + 1e-4 * alpha * slope) {
        x = xt;
        std::swap(st, trial);
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // Rounding-level decrement: the iterate is as good as the arithmetic allows.
      out.converged = 0.5 * out.decrement <= 1e-10 * std::max(1.0, std::abs(st.value));
      return out;
    }
  }
  return out;
}

struct StartOutcome {
  Vector x;
  BarrierProblem::State state;
  double mu = 0.0;
  bool converged = false;
  double decrement = 0.0;
};

StartOutcome path_follow(const BarrierProblem& problem, const OracleOptions& opt, Vector x) {
  StartOutcome out;
  double mu = opt.barrier_start;
  NewtonOutcome last;
  for (int outer = 0; outer < opt.max_outer; ++outer) {
    last = newton_minimize(problem, mu, opt.max_inner, x, out.state);
    if (mu <= opt.barrier_final) break;
    mu = std::max(mu * opt.barrier_decay, opt.barrier_final);
  }
  problem.evaluate(x, mu, out.state);
  out.x = std::move(x);
  out.mu = mu;
  out.decrement = last.decrement;
  const double gnorm = problem.factor_gradient(out.state, mu).norm();
  out.converged = last.converged || gnorm <= opt.grad_tol;
  return out;
}

std::vector<SymMatrix> to_sym(const std::vector<Matrix>& ms) {
  std::vector<SymMatrix> out;
  out.reserve(ms.size());
  for (const auto& m : ms) out.emplace_back(m);
  return out;
}

std::vector<Matrix> cholesky_factors(std::span<const SymMatrix> sigma) {
  std::vector<Matrix> out;
  for (const auto& s : sigma) {
    Eigen::LLT<Matrix> llt(s.matrix());
    if (llt.info() != Eigen::Success) {
      throw NonPositiveDefinite("schedule entry is not positive definite");
    }
    out.push_back(llt.matrixL());
  }
  return out;
}

// Relative deviation with a floor tied to the gradient's overall magnitude so
// that entries that vanish analytically do not divide by zero.
double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace

OracleResult direct_minimize(const SourceModel& m, const DistortionSpec& d,
                             const OracleOptions& options) {
  if (m.state_dim() > kOracleMaxStateDim || m.n > kOracleMaxStages) {
    throw Error("direct_minimize: problem exceeds desk scale (state dim <= 6, n <= 16)");
  }
  if (!(options.barrier_decay > 0.0 && options.barrier_decay < 1.0) ||
      !(options.barrier_start > 0.0) || !(options.grad_tol > 0.0)) {
    throw std::invalid_argument("direct_minimize: invalid barrier options");
  }
  const BarrierProblem problem(m, d);

  OracleResult result;
  std::optional<StartOutcome> best;
  const int starts = std::max(1, options.restarts);
  for (int k = 0; k < starts; ++k) {
    StartOutcome run = path_follow(problem, options, problem.start(k, options.seed));
    result.start_rates.push_back(run.state.rate);
    if (!best || run.state.rate < best->state.rate) best = std::move(run);
  }
  const auto [lo, hi] = std::minmax_element(result.start_rates.begin(), result.start_rates.end());
  result.start_spread = *hi - *lo;
  result.starts_disagree = result.start_spread > 1e-6;

  const auto& st = best->state;
  result.rate = st.rate;
  result.converged = best->converged;
  result.schedule = forward_chain(m, to_sym(st.sigma));

  OracleResiduals& r = result.residuals;
  r.barrier_weight = best->mu;
  r.gradient_norm = problem.factor_gradient(st, best->mu).norm();
  r.newton_decrement = best->decrement;
  r.lambda_estimate = {best->mu / st.slack[0], best->mu / st.slack[1]};
  const double n = static_cast<double>(m.n);
  r.budget_margin = {st.slack[0] / n, st.slack[1] / n};
  r.ordering_margin = kInf;
  for (std::size_t t = 0; t < st.gap.size(); ++t) {
    r.ordering_margin = std::min(r.ordering_margin, min_eigenvalue(SymMatrix(st.gap[t])));
    const Matrix theta = best->mu * st.gap_inv[t];
    r.theta_slackness = std::max(r.theta_slackness, std::abs((theta * st.gap[t]).trace()));
  }
  return result;
}

double nrdf_objective(const SourceModel& m, std::span<const SymMatrix> sigma) {
  const CovarianceSchedule chain = forward_chain(m, sigma);
  double total = 0.0;
  Eigen::LLT<Matrix> llt;
  for (std::size_t t = 0; t < chain.stages(); ++t) {
    const auto ld_pred = chol_logdet(chain.sigma_minus[t].matrix(), llt);
    const auto ld_sigma = chol_logdet(chain.sigma[t].matrix(), llt);
    if (!ld_pred || !ld_sigma) return kInf;
    total += 0.5 * (*ld_pred - *ld_sigma);
  }
  return total;
}

std::vector<SymMatrix> nrdf_gradient(const SourceModel& m, std::span<const SymMatrix> sigma) {
  const CovarianceSchedule chain = forward_chain(m, sigma);
  std::vector<SymMatrix> g;
  for (std::size_t t = 0; t < chain.stages(); ++t) {
    Matrix gt = -0.5 * inverse_pd(chain.sigma[t]).matrix();
    if (t + 1 < chain.stages()) {
      const Matrix& a = m.a[t];
      gt += 0.5 * a.transpose() * inverse_pd(chain.sigma_minus[t + 1]).matrix() * a;
    }
    g.emplace_back(gt);
  }
  return g;
}

double barrier_objective(const SourceModel& m, const DistortionSpec& d,
                         std::span<const SymMatrix> sigma, double mu) {
  const BarrierProblem problem(m, d);
  BarrierProblem::State st;
  const Vector x = problem.pack(cholesky_factors(sigma));
  return problem.evaluate(x, mu, st) ? st.value : kInf;
}

Vector barrier_gradient_factor(const SourceModel& m, const DistortionSpec& d,
                               std::span<const SymMatrix> sigma, double mu) {
  const BarrierProblem problem(m, d);
  BarrierProblem::State st;
  if (!problem.evaluate(problem.pack(cholesky_factors(sigma)), mu, st)) {
    throw InfeasibleSchedule("barrier_gradient_factor: schedule outside the strict interior");
  }
  return problem.factor_gradient(st, mu);
}

Matrix barrier_hessian_factor(const SourceModel& m, const DistortionSpec& d,
                              std::span<const SymMatrix> sigma, double mu) {
  const BarrierProblem problem(m, d);
  BarrierProblem::State st;
  if (!problem.evaluate(problem.pack(cholesky_factors(sigma)), mu, st)) {
    throw InfeasibleSchedule("barrier_hessian_factor: schedule outside the strict interior");
  }
  return problem.factor_hessian(st, mu);
}

GradientCheck gradient_check(const SourceModel& m, std::span<const SymMatrix> schedule,
                             double epsilon) {
  GradientCheck out;
  const CovarianceSchedule chain = forward_chain(m, schedule);
  for (std::size_t t = 0; t < chain.stages(); ++t) {
    const double scale = std::max(1.0, chain.sigma_minus[t].matrix().cwiseAbs().maxCoeff());
    if (min_eigenvalue(chain.sigma[t]) <= kPsdTol * scale ||
        chain.ordering_margin[t] <= kPsdTol * scale) {
      out.skipped = true;
      out.reason = "boundary";
      return out;
    }
  }
  const auto g = nrdf_gradient(m, schedule);
  double gmax = 0.0;
  for (const auto& gt : g) gmax = std::max(gmax, gt.matrix().cwiseAbs().maxCoeff());
  const double floor = std::max(1e-3 * gmax, 1e-12);

  std::vector<SymMatrix> work(schedule.begin(), schedule.end());
  for (std::size_t t = 0; t < work.size(); ++t) {
    const Index p = work[t].dim();
    for (Index i = 0; i < p; ++i) {
      for (Index j = i; j < p; ++j) {
        Matrix e = Matrix::Zero(p, p);
        e(i, j) = 1.0;
        e(j, i) = 1.0;
        const SymMatrix base = work[t];
        work[t] = SymMatrix(Matrix(base.matrix() + epsilon * e));
        const double fp = nrdf_objective(m, work);
        work[t] = SymMatrix(Matrix(base.matrix() - epsilon * e));
        const double fm = nrdf_objective(m, work);
        work[t] = base;
        const double numeric = (fp - fm) / (2.0 * epsilon);
        const double analytic = i == j ? g[t](i, i) : 2.0 * g[t](i, j);
        out.max_relative_error =
            std::max(out.max_relative_error, relative_error(analytic, numeric, floor));
      }
    }
  }
  return out;
}

GradientCheck gradient_check_barrier(const SourceModel& m, const DistortionSpec& d,
                                     std::span<const SymMatrix> schedule, double mu,
                                     double epsilon) {
  GradientCheck out;
  const BarrierProblem problem(m, d);
  BarrierProblem::State st;
  Vector x = problem.pack(cholesky_factors(schedule));
  if (!problem.evaluate(x, mu, st)) {
    out.skipped = true;
    out.reason = "boundary";
    return out;
  }
  const Vector g = problem.factor_gradient(st, mu);
  const double floor = std::max(1e-3 * g.cwiseAbs().maxCoeff(), 1e-12);
  for (Index k = 0; k < x.size(); ++k) {
    const double base = x(k);
    x(k) = base + epsilon;
    const bool ok_p = problem.evaluate(x, mu, st);
    const double fp = st.value;
    x(k) = base - epsilon;
    const bool ok_m = problem.evaluate(x, mu, st);
    const double fm = st.value;
    x(k) = base;
    if (!ok_p || !ok_m) {
      out.skipped = true;
      out.reason = "boundary";
      return out;
    }
    out.max_relative_error =
        std::max(out.max_relative_error, relative_error(g(k), (fp - fm) / (2.0 * epsilon), floor));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scalar grid oracle

namespace {

// Per-stage 2x2 covariance stored as (s11, s12, s22).
struct ScalarGridProblem {
  int n;
  std::vector<Matrix> a;
  std::vector<Matrix> qbar;
  Matrix qx1;
  std::array<double, 2> budget;

  double evaluate(const std::vector<double>& x) const {
    double used1 = 0.0;
    double used2 = 0.0;
    double rate = 0.0;
    double pm11 = qx1(0, 0);
    double pm12 = qx1(0, 1);
    double pm22 = qx1(1, 1);
    for (int t = 0; t < n; ++t) {
      const double s11 = x[3 * t];
      const double s12 = x[3 * t + 1];
      const double s22 = x[3 * t + 2];
      if (t > 0) {
        const Matrix& at = a[static_cast<std::size_t>(t - 1)];
        const Matrix& qt = qbar[static_cast<std::size_t>(t - 1)];
        const double x11 = s11 * at(0, 0) + s12 * at(0, 1);
        const double x12 = s12 * at(0, 0) + s22 * at(0, 1);
        const double x21 = s11 * at(1, 0) + s12 * at(1, 1);
        const double x22 = s12 * at(1, 0) + s22 * at(1, 1);
        pm11 = at(0, 0) * x11 + at(0, 1) * x12 + qt(0, 0);
        pm12 = at(1, 0) * x11 + at(1, 1) * x12 + qt(0, 1);
        pm22 = at(1, 0) * x21 + at(1, 1) * x22 + qt(1, 1);
      }
      const double det_s = s11 * s22 - s12 * s12;
      if (!(s11 > 0.0) || !(det_s > 0.0)) return kInf;
      const double g11 = pm11 - s11;
      const double g12 = pm12 - s12;
      const double g22 = pm22 - s22;
      const double tol = 1e-12 * std::max(1.0, std::max(pm11, pm22));
      if (g11 < -tol || g22 < -tol || g11 * g22 - g12 * g12 < -tol * tol) return kInf;
      const double det_p = pm11 * pm22 - pm12 * pm12;
      if (!(det_p > 0.0)) return kInf;
      rate += 0.5 * std::log(det_p / det_s);
      used1 += s11;
      used2 += s22;
    }
    if (used1 > budget[0] * (1.0 + 1e-12) || used2 > budget[1] * (1.0 + 1e-12)) return kInf;
    return rate;
  }
};

}  // namespace

GridOracleResult grid_oracle_scalar(const SourceModel& m, const DistortionSpec& d,
                                    int grid_points) {
  if (m.p1 != 1 || m.p2 != 1) throw NotScalar("grid_oracle_scalar requires p1 = p2 = 1");
  if (m.n > 3) throw std::invalid_argument("grid_oracle_scalar requires n <= 3");
  if (grid_points < 2) throw std::invalid_argument("grid_oracle_scalar needs >= 2 grid points");

  ScalarGridProblem problem;
  problem.n = m.n;
  problem.a = m.a;
  for (const auto& q : qbar_schedule(m).qbar) problem.qbar.push_back(q.matrix());
  problem.qx1 = m.q_x1;
  problem.budget = {m.n * d.delta1, m.n * d.delta2};

  const auto dims = static_cast<std::size_t>(3 * m.n);
  const std::vector<SymMatrix> states = state_covariances(m);
  std::vector<double> lo(dims);
  std::vector<double> hi(dims);
  for (int t = 0; t < m.n; ++t) {
    const SymMatrix& p = states[static_cast<std::size_t>(t)];
    const double bound = std::sqrt(std::max(0.0, p(0, 0) * p(1, 1)));
    lo[3 * t] = 0.0;
    hi[3 * t] = p(0, 0);
    lo[3 * t + 1] = -bound;
    hi[3 * t + 1] = bound;
    lo[3 * t + 2] = 0.0;
    hi[3 * t + 2] = p(1, 1);
  }

  GridOracleResult out;
  out.rate = kInf;
  std::vector<double> best;
  std::vector<double> x(dims);

  // Level 0: cell midpoints of a tensor grid, capped at ~2e7 points.
  int g0 = grid_points;
  while (g0 > 2 && std::pow(static_cast<double>(g0), static_cast<double>(dims)) > 2e7) --g0;
  {
    std::vector<int> idx(dims, 0);
    while (true) {
      for (std::size_t k = 0; k < dims; ++k) {
        x[k] = lo[k] + (idx[k] + 0.5) * (hi[k] - lo[k]) / g0;
      }
      const double v = problem.evaluate(x);
      ++out.evaluations;
      if (v < out.rate) {
        out.rate = v;
        best = x;
      }
      std::size_t k = 0;
      while (k < dims && ++idx[k] == g0) idx[k++] = 0;
      if (k == dims) break;
    }
  }
  if (best.empty()) return out;

  // Pattern refinement: all 3^dims offsets {-h, 0, +h} around the incumbent.
  // One step length for every coordinate, so that moves trading variance
  // between stages at a fixed trace exist when a budget is active.
  constexpr double kGolden = 0.6180339887498949;
  double scale = 0.0;
  for (std::size_t k = 0; k < dims; ++k) scale = std::max(scale, hi[k] - lo[k]);
  std::vector<double> h(dims, scale / g0);
  for (int level = 0; level < 2000; ++level) {
    double hmax = 0.0;
    for (double v : h) hmax = std::max(hmax, v);
    if (hmax <= 1e-13 * std::max(1.0, scale)) break;
    std::vector<int> idx(dims, 0);
    std::vector<double> candidate = best;
    double candidate_rate = out.rate;
    while (true) {
      for (std::size_t k = 0; k < dims; ++k) x[k] = best[k] + (idx[k] - 1) * h[k];
      const double v = problem.evaluate(x);
      ++out.evaluations;
      if (v < candidate_rate) {
        candidate_rate = v;
        candidate = x;
      }
      std::size_t k = 0;
      while (k < dims && ++idx[k] == 3) idx[k++] = 0;
      if (k == dims) break;
    }
    if (candidate_rate < out.rate) {
      out.rate = candidate_rate;
      best = candidate;
    } else {
      for (double& v : h) v *= kGolden;
    }
  }

  out.feasible = true;
  for (int t = 0; t < m.n; ++t) {
    Matrix s(2, 2);
    s << best[3 * t], best[3 * t + 1], best[3 * t + 1], best[3 * t + 2];
    out.sigma.emplace_back(s);
  }
  return out;
}

}  // namespace nrdf
