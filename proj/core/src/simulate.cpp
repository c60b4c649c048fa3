#include "nrdf/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <thread>

namespace nrdf {

namespace {

std::size_t offset(const PathEnsemble& e, long path, int t) {
  return (static_cast<std::size_t>(path) * static_cast<std::size_t>(e.n) +
          static_cast<std::size_t>(t)) *
         static_cast<std::size_t>(e.dim());
}

// Running mean and standard error of a scalar sample.
struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
  }

  double mean(long n) const { return sum / static_cast<double>(n); }

  double standard_error(long n) const {
    if (n < 2) return 0.0;
    const double dn = static_cast<double>(n);
    const double m = sum / dn;
    const double var = std::max(0.0, (sum_sq - dn * m * m) / (dn - 1.0));
    return std::sqrt(var / dn);
  }
};

ZStat make_stat(int t, int s, Index row, Index col, const Moments& mo, long n) {
  ZStat z{t, s, row, col, mo.mean(n), mo.standard_error(n), 0.0};
  if (z.standard_error > 0.0) {
    z.z = z.mean / z.standard_error;
  } else if (z.mean != 0.0) {
    z.z = std::copysign(std::numeric_limits<double>::infinity(), z.mean);
  }
  return z;
}

// Stacks the listed stages of X (or Y) of one path into a single vector.
Vector stack(const PathEnsemble& e, const std::vector<double>& data, long path, int from,
             int to) {
  const Index p = e.dim();
  Vector v(p * (to - from));
  for (int t = from; t < to; ++t) {
    v.segment(p * (t - from), p) =
        Eigen::Map<const Vector>(data.data() + offset(e, path, t), p);
  }
  return v;
}

Matrix second_moment(const PathEnsemble& e, const std::vector<double>& a_data, int a_from,
                     int a_to, const std::vector<double>& b_data, int b_from, int b_to) {
  const Index p = e.dim();
  Matrix acc = Matrix::Zero(p * (a_to - a_from), p * (b_to - b_from));
  for (long i = 0; i < e.paths; ++i) {
    acc.noalias() += stack(e, a_data, i, a_from, a_to) * stack(e, b_data, i, b_from, b_to).transpose();
  }
  return acc / static_cast<double>(e.paths);
}

}  // namespace

Eigen::Map<const Vector> PathEnsemble::x_at(long path, int t) const {
  return Eigen::Map<const Vector>(x.data() + offset(*this, path, t), dim());
}
Eigen::Map<const Vector> PathEnsemble::y_at(long path, int t) const {
  return Eigen::Map<const Vector>(y.data() + offset(*this, path, t), dim());
}
Eigen::Map<Vector> PathEnsemble::x_at(long path, int t) {
  return Eigen::Map<Vector>(x.data() + offset(*this, path, t), dim());
}
Eigen::Map<Vector> PathEnsemble::y_at(long path, int t) {
  return Eigen::Map<Vector>(y.data() + offset(*this, path, t), dim());
}

PathEnsemble sample_paths(const SourceModel& m, const RealizationSchedule& r, long paths,
                          std::uint64_t seed, int jobs) {
  if (paths < 0) throw std::invalid_argument("sample_paths: negative path count");
  if (r.h.size() != static_cast<std::size_t>(m.n) || r.q_v.size() != r.h.size() ||
      r.feedback.size() != r.h.size()) {
    throw std::invalid_argument("sample_paths: realization does not match the model horizon");
  }
  PathEnsemble e;
  e.paths = paths;
  e.n = m.n;
  e.p1 = m.p1;
  e.p2 = m.p2;
  e.seed = seed;
  const std::size_t total = static_cast<std::size_t>(paths) * static_cast<std::size_t>(m.n) *
                            static_cast<std::size_t>(m.state_dim());
  e.x.assign(total, 0.0);
  e.y.assign(total, 0.0);

  const Index p = m.state_dim();
  const Index q = m.noise_dim();
  const Matrix fx1 = psd_factor(SymMatrix(m.q_x1));
  std::vector<Matrix> fw;
  std::vector<Matrix> fv;
  for (const auto& qw : m.q_w) fw.push_back(m.b[fw.size()] * psd_factor(SymMatrix(qw)));
  for (const auto& qv : r.q_v) fv.push_back(psd_factor(qv));

  const auto run = [&](long begin, long end) {
    Vector z(std::max(p, q));
    Vector xt(p);
    Vector yt(p);
    for (long i = begin; i < end; ++i) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(i),
                        static_cast<std::uint32_t>(static_cast<std::uint64_t>(i) >> 32)};
      std::mt19937_64 rng(seq);
      std::normal_distribution<double> normal;
      const auto draw = [&](Index k) {
        for (Index j = 0; j < k; ++j) z(j) = normal(rng);
        return z.head(k);
      };
      for (int t = 0; t < m.n; ++t) {
        const auto k = static_cast<std::size_t>(t);
        if (t == 0) {
          xt = fx1 * draw(p);
        } else {
          xt = m.a[k - 1] * xt + fw[k - 1] * draw(q);
        }
        Vector next = r.h[k] * xt + fv[k] * draw(p);
        if (t > 0) next += r.feedback[k] * yt;
        yt = next;
        e.x_at(i, t) = xt;
        e.y_at(i, t) = yt;
      }
    }
  };

  const long workers = std::clamp<long>(jobs, 1, std::max<long>(1, paths));
  if (workers == 1) {
    run(0, paths);
  } else {
    std::vector<std::thread> pool;
    const long chunk = (paths + workers - 1) / workers;
    for (long w = 0; w < workers; ++w) {
      const long begin = w * chunk;
      const long end = std::min(paths, begin + chunk);
      if (begin < end) pool.emplace_back(run, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return e;
}

DistortionEstimate empirical_distortion(const PathEnsemble& e) {
  DistortionEstimate out;
  if (e.paths == 0 || e.n == 0) return out;
  std::array<Moments, 2> avg;
  std::vector<std::array<Moments, 2>> stage(static_cast<std::size_t>(e.n));
  for (long i = 0; i < e.paths; ++i) {
    std::array<double, 2> path_avg{0.0, 0.0};
    for (int t = 0; t < e.n; ++t) {
      const Vector err = e.x_at(i, t) - e.y_at(i, t);
      const double d1 = err.head(e.p1).squaredNorm();
      const double d2 = err.tail(e.p2).squaredNorm();
      stage[static_cast<std::size_t>(t)][0].add(d1);
      stage[static_cast<std::size_t>(t)][1].add(d2);
      path_avg[0] += d1 / e.n;
      path_avg[1] += d2 / e.n;
    }
    avg[0].add(path_avg[0]);
    avg[1].add(path_avg[1]);
  }
  for (const auto& s : stage) {
    out.mean.push_back({s[0].mean(e.paths), s[1].mean(e.paths)});
    out.standard_error.push_back({s[0].standard_error(e.paths), s[1].standard_error(e.paths)});
  }
  for (int c = 0; c < 2; ++c) {
    out.average[c] = avg[c].mean(e.paths);
    out.average_standard_error[c] = avg[c].standard_error(e.paths);
  }
  return out;
}

double max_abs_z(const std::vector<ZStat>& stats) {
  double worst = 0.0;
  for (const auto& s : stats) worst = std::max(worst, std::abs(s.z));
  return worst;
}

std::vector<ZStat> orthogonality_residuals(const PathEnsemble& e) {
  std::vector<ZStat> out;
  const Index p = e.dim();
  for (int t = 0; t < e.n; ++t) {
    for (int s = 0; s <= t; ++s) {
      std::vector<Moments> mo(static_cast<std::size_t>(p * p));
      for (long i = 0; i < e.paths; ++i) {
        const Vector err = e.x_at(i, t) - e.y_at(i, t);
        const auto ys = e.y_at(i, s);
        for (Index a = 0; a < p; ++a) {
          for (Index b = 0; b < p; ++b) mo[static_cast<std::size_t>(a * p + b)].add(err(a) * ys(b));
        }
      }
      for (Index a = 0; a < p; ++a) {
        for (Index b = 0; b < p; ++b) {
          out.push_back(make_stat(t, s, a, b, mo[static_cast<std::size_t>(a * p + b)], e.paths));
        }
      }
    }
  }
  return out;
}

CausalityReport causality_check(const PathEnsemble& e) {
  CausalityReport out;
  const Index p = e.dim();
  for (int t = 0; t + 1 < e.n; ++t) {
    // Regression of Y_t and X_{t+1..n} on X_{1..t} via the sample Schur complement.
    const Matrix cxx = second_moment(e, e.x, 0, t + 1, e.x, 0, t + 1);
    const Matrix cyx = second_moment(e, e.y, t, t + 1, e.x, 0, t + 1);
    const Matrix cfx = second_moment(e, e.x, t + 1, e.n, e.x, 0, t + 1);
    const SymMatrix cond(cxx);
    const Vector ev = eigenvalues(cond);
    const double top = ev.size() > 0 ? ev.maxCoeff() : 0.0;
    Matrix inv;
    if (!(ev.minCoeff() > 1e-12 * std::max(top, 1e-300))) {
      out.singular_conditioning = true;
      inv = pinv(cond).matrix();
    } else {
      inv = inverse_pd(cond).matrix();
    }
    const Matrix by = cyx * inv;
    const Matrix bf = cfx * inv;
    const Index nf = p * (e.n - t - 1);
    std::vector<Moments> mo(static_cast<std::size_t>(p * nf));
    for (long i = 0; i < e.paths; ++i) {
      const Vector past = stack(e, e.x, i, 0, t + 1);
      const Vector ry = Vector(e.y_at(i, t)) - by * past;
      const Vector rf = stack(e, e.x, i, t + 1, e.n) - bf * past;
      for (Index a = 0; a < p; ++a) {
        for (Index b = 0; b < nf; ++b) mo[static_cast<std::size_t>(a * nf + b)].add(ry(a) * rf(b));
      }
    }
    for (Index a = 0; a < p; ++a) {
      for (Index b = 0; b < nf; ++b) {
        const int future = t + 1 + static_cast<int>(b / p);
        out.residuals.push_back(
            make_stat(t, future, a, b % p, mo[static_cast<std::size_t>(a * nf + b)], e.paths));
      }
    }
  }
  return out;
}

double empirical_rate(const PathEnsemble& e, const SourceModel& m) {
  const Index p = e.dim();
  double rate = 0.0;
  for (int t = 0; t < e.n; ++t) {
    Matrix pred = Matrix::Zero(p, p);
    Matrix filt = Matrix::Zero(p, p);
    for (long i = 0; i < e.paths; ++i) {
      Vector innov = e.x_at(i, t);
      if (t > 0) innov -= m.a[static_cast<std::size_t>(t - 1)] * e.y_at(i, t - 1);
      const Vector err = e.x_at(i, t) - e.y_at(i, t);
      pred.noalias() += innov * innov.transpose();
      filt.noalias() += err * err.transpose();
    }
    const double n = static_cast<double>(e.paths);
    rate += 0.5 * (logdet(SymMatrix(Matrix(pred / n))) - logdet(SymMatrix(Matrix(filt / n))));
  }
  return rate;
}

std::vector<SymMatrix> sample_state_covariances(const PathEnsemble& e) {
  std::vector<SymMatrix> out;
  for (int t = 0; t < e.n; ++t) out.emplace_back(second_moment(e, e.x, t, t + 1, e.x, t, t + 1));
  return out;
}

RealizationSchedule perturb_gain(const RealizationSchedule& r, double factor) {
  RealizationSchedule out = r;
  for (auto& h : out.h) h *= factor;
  return out;
}

void apply_anticausal_corruption(PathEnsemble& e, double factor) {
  for (long i = 0; i < e.paths; ++i) {
    for (int t = 0; t + 1 < e.n; ++t) e.y_at(i, t) += factor * e.x_at(i, t + 1);
  }
}

}  // namespace nrdf
