#include "nrdf_cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <locale>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "nrdf/errors.hpp"
#include "nrdf/pipeline.hpp"
#include "nrdf/simulate.hpp"

namespace nrdf::cli {

namespace {

using nlohmann::json;

constexpr double kNatsToBits = 1.4426950408889634;  // 1 / ln 2

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename Range>
json matrices_json(const Range& ms) {
  json out = json::array();
  for (const auto& m : ms) {
    if constexpr (std::is_same_v<std::decay_t<decltype(m)>, SymMatrix>) {
      out.push_back(matrix_json(m.matrix()));
    } else {
      out.push_back(matrix_json(m));
    }
  }
  return out;
}

// NaN and infinities have no JSON literal; they are written as null.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json numbers(const std::vector<double>& vs) {
  json out = json::array();
  for (double v : vs) out.push_back(number(v));
  return out;
}

double scale_rate(double nats, bool bits) { return bits ? nats * kNatsToBits : nats; }

json config_json(const std::string& command, const std::string& file, const Options& o) {
  return json{{"command", command},       {"problem_file", file},
              {"oracle", o.oracle},       {"closed_form", o.closed_form},
              {"bits", o.bits},           {"skip_mc", o.skip_mc},
              {"paths", o.paths},         {"seed", o.seed},
              {"jobs", o.jobs},           {"delta1_grid", o.delta1_grid},
              {"delta2_grid", o.delta2_grid}, {"perturb_h", o.perturb_h}};
}

json report_json(const SolveReport& r, bool bits) {
  std::vector<double> per_stage;
  for (double v : r.rate_per_stage) per_stage.push_back(scale_rate(v, bits));
  json j{
      {"regime", std::string(to_string(r.regime))},
      {"method", r.method},
      {"rate_unit", bits ? "bits" : "nats"},
      {"rate_total", number(scale_rate(r.rate_total, bits))},
      {"rate_per_stage", numbers(per_stage)},
      {"achieved", {{"delta1", number(r.achieved[0])}, {"delta2", number(r.achieved[1])}}},
      {"multipliers",
       {{"lambda1", number(r.multipliers.lambda1)},
        {"lambda2", number(r.multipliers.lambda2)},
        {"theta", matrices_json(r.multipliers.theta)},
        {"v", matrices_json(r.multipliers.v)}}},
      {"schedule",
       {{"sigma_minus", matrices_json(r.schedule.sigma_minus)},
        {"sigma", matrices_json(r.schedule.sigma)},
        {"ordering_margin", numbers(r.schedule.ordering_margin)}}},
  };
  const KktResiduals& k = r.residuals;
  j["residuals"] = {
      {"stationarity_terminal", number(k.stationarity_terminal)},
      {"backward", numbers(k.backward)},
      {"slackness_lambda", {number(k.slackness_lambda[0]), number(k.slackness_lambda[1])}},
      {"slackness_v", numbers(k.slackness_v)},
      {"slackness_theta", numbers(k.slackness_theta)},
      {"ordering_margin", number(k.ordering_margin)},
      {"budget_margin", {number(k.budget_margin[0]), number(k.budget_margin[1])}},
      {"dual_margin", number(k.dual_margin)},
      {"max_residual", number(k.max_residual())},
  };
  if (!r.realization.h.empty()) {
    j["realization"] = {{"H", matrices_json(r.realization.h)},
                        {"Q_V", matrices_json(r.realization.q_v)},
                        {"feedback", matrices_json(r.realization.feedback)}};
  } else {
    j["realization"] = nullptr;
  }
  if (r.conditions) {
    const ConditionReport& c = *r.conditions;
    j["conditions"] = {{"condition1", numbers(c.condition1)},
                       {"symmetry_defect", numbers(c.symmetry_defect)},
                       {"gain_min_eigenvalue", numbers(c.gain_min_eigenvalue)},
                       {"qv_min_eigenvalue", numbers(c.qv_min_eigenvalue)},
                       {"qv_formula_gap", numbers(c.qv_formula_gap)},
                       {"condition2_structural", c.condition2_structural}};
  } else {
    j["conditions"] = nullptr;
  }
  j["oracle_rate"] = r.oracle_rate ? number(scale_rate(*r.oracle_rate, bits)) : json(nullptr);
  j["oracle_gap"] = r.oracle_gap ? number(scale_rate(*r.oracle_gap, bits)) : json(nullptr);
  return j;
}

void emit_json(const json& j, const Options& o, std::ostream& out) {
  const std::string text = j.dump(2) + "\n";
  if (o.output.empty()) {
    out << text;
    return;
  }
  std::ofstream f(o.output, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open output file " + o.output);
  f << text;
}

std::ostringstream csv_stream() {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s << std::setprecision(std::numeric_limits<double>::max_digits10);
  return s;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open output file " + path);
  f << text;
}

SolveOptions solve_options(const Options& o) {
  SolveOptions s;
  s.closed_form = o.closed_form;
  s.run_oracle = o.oracle;
  s.oracle.seed = o.seed;
  return s;
}

bool has_realization(const SolveReport& r) {
  return r.regime != Regime::boundary_detected && !r.realization.h.empty();
}

int regime_exit(const SolveReport& r) {
  return r.regime == Regime::interior || r.regime == Regime::zero_rate ? kExitOk : kExitBoundary;
}

// Runs a command body and maps library errors onto exit code 1.
template <typename Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ValidationError& e) {
    err << "error: ValidationError: " << e.what() << "\n";
    for (const auto& v : e.violations()) err << "  - " << v << "\n";
  } catch (const ParseError& e) {
    err << "error: ParseError: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitError;
}

struct MonteCarlo {
  DistortionEstimate distortion;
  std::vector<double> distortion_z_stage;  // max over components, per stage
  double orthogonality_max_z = 0.0;
  double causality_max_z = 0.0;
  std::size_t statistics = 0;  // number of z-scores inspected
  bool singular_conditioning = false;
  double empirical_rate = 0.0;
};

MonteCarlo run_monte_carlo(const SourceModel& m, const SolveReport& r,
                           const RealizationSchedule& realization, const Options& o) {
  const PathEnsemble e = sample_paths(m, realization, o.paths, o.seed, o.jobs);
  MonteCarlo mc;
  mc.distortion = empirical_distortion(e);
  for (std::size_t t = 0; t < mc.distortion.mean.size(); ++t) {
    const SymMatrix& s = r.schedule.sigma[t];
    const double target[2] = {component_block(s, m.p1, m.p2, 1).trace(),
                              component_block(s, m.p1, m.p2, 2).trace()};
    double worst = 0.0;
    for (int c = 0; c < 2; ++c) {
      const double diff = mc.distortion.mean[t][c] - target[c];
      const double se = mc.distortion.standard_error[t][c];
      const double z = se > 0.0 ? diff / se : (diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
      worst = std::max(worst, std::abs(z));
    }
    mc.distortion_z_stage.push_back(worst);
  }
  const std::vector<ZStat> orth = orthogonality_residuals(e);
  mc.orthogonality_max_z = max_abs_z(orth);
  const CausalityReport causal = causality_check(e);
  mc.causality_max_z = max_abs_z(causal.residuals);
  mc.statistics = orth.size() + causal.residuals.size() + 2 * mc.distortion.mean.size();
  mc.singular_conditioning = causal.singular_conditioning;
  mc.empirical_rate = empirical_rate(e, m);
  return mc;
}

json monte_carlo_json(const MonteCarlo& mc, bool bits) {
  json stages = json::array();
  for (std::size_t t = 0; t < mc.distortion.mean.size(); ++t) {
    stages.push_back({{"d1", mc.distortion.mean[t][0]},
                      {"d1_se", mc.distortion.standard_error[t][0]},
                      {"d2", mc.distortion.mean[t][1]},
                      {"d2_se", mc.distortion.standard_error[t][1]},
                      {"max_abs_z", number(mc.distortion_z_stage[t])}});
  }
  return json{{"distortion", stages},
              {"average_distortion", {mc.distortion.average[0], mc.distortion.average[1]}},
              {"orthogonality_max_abs_z", number(mc.orthogonality_max_z)},
              {"causality_max_abs_z", number(mc.causality_max_z)},
              {"singular_conditioning", mc.singular_conditioning},
              {"empirical_rate", number(scale_rate(mc.empirical_rate, bits))}};
}

// Two-sided Bonferroni threshold: P(|Z| > z) = alpha / k, never below 3.
double familywise_threshold(std::size_t k, double alpha = 0.01) {
  const double target = alpha / static_cast<double>(std::max<std::size_t>(k, 1));
  double lo = 0.0;
  double hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std::erfc(mid / std::sqrt(2.0)) > target ? lo : hi) = mid;
  }
  return std::max(3.0, hi);
}

}  // namespace

std::vector<double> parse_grid(std::string_view text) {
  const auto bad = [&](const std::string& why) {
    return std::invalid_argument("grid \"" + std::string(text) + "\": " + why);
  };
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ':') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  if (parts.size() != 3) throw bad("expected a:b:k");
  double a = 0.0;
  double b = 0.0;
  long k = 0;
  try {
    std::size_t used = 0;
    a = std::stod(parts[0], &used);
    if (used != parts[0].size()) throw bad("malformed start");
    b = std::stod(parts[1], &used);
    if (used != parts[1].size()) throw bad("malformed end");
    k = std::stol(parts[2], &used);
    if (used != parts[2].size()) throw bad("malformed count");
  } catch (const std::invalid_argument&) {
    throw bad("malformed number");
  } catch (const std::out_of_range&) {
    throw bad("number out of range");
  }
  if (k < 1) throw bad("count must be at least 1");
  if (!(a > 0.0) || !std::isfinite(b)) throw bad("values must be positive");
  if (k == 1) return {a};
  if (!(b > a)) throw bad("end must exceed start");
  std::vector<double> out;
  for (long i = 0; i < k; ++i) out.push_back(a + (b - a) * static_cast<double>(i) / static_cast<double>(k - 1));
  out.back() = b;
  return out;
}

int cmd_solve(const std::string& problem_file, const Options& o, std::ostream& out,
              std::ostream& err) {
  return guarded(err, [&]() -> int {
    const Problem p = load_problem(problem_file);
    const SolveReport r = solve(p.model, p.distortion, solve_options(o));
    json j = report_json(r, o.bits);
    j["config"] = config_json("solve", problem_file, o);
    emit_json(j, o, out);
    if (!o.csv.empty()) {
      auto s = csv_stream();
      s << "stage,rate_" << (o.bits ? "bits" : "nats") << ",trace1,trace2,ordering_margin\n";
      for (std::size_t t = 0; t < r.schedule.stages(); ++t) {
        const SymMatrix& sg = r.schedule.sigma[t];
        const double rate = t < r.rate_per_stage.size() ? r.rate_per_stage[t]
                                                        : std::numeric_limits<double>::quiet_NaN();
        s << (t + 1) << ',' << scale_rate(rate, o.bits) << ','
          << component_block(sg, p.model.p1, p.model.p2, 1).trace() << ','
          << component_block(sg, p.model.p1, p.model.p2, 2).trace() << ','
          << r.schedule.ordering_margin[t] << '\n';
      }
      write_text(o.csv, s.str());
    }
    return regime_exit(r);
  });
}

int cmd_sweep(const std::string& problem_file, const Options& o, std::ostream& out,
              std::ostream& err) {
  return guarded(err, [&]() -> int {
    const Problem p = load_problem(problem_file);
    if (o.delta1_grid.empty() || o.delta2_grid.empty()) {
      throw std::invalid_argument("sweep needs --delta1-grid and --delta2-grid");
    }
    const std::vector<double> g1 = parse_grid(o.delta1_grid);
    const std::vector<double> g2 = parse_grid(o.delta2_grid);

    struct Cell {
      double rate = std::numeric_limits<double>::quiet_NaN();
      std::string regime = "error";
      std::array<double, 2> achieved{std::numeric_limits<double>::quiet_NaN(),
                                     std::numeric_limits<double>::quiet_NaN()};
    };
    std::vector<Cell> cells(g1.size() * g2.size());
    const SolveOptions so = solve_options(o);
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
      for (std::size_t k = next++; k < cells.size(); k = next++) {
        const DistortionSpec d{g1[k / g2.size()], g2[k % g2.size()]};
        try {
          const SolveReport r = solve(p.model, d, so);
          cells[k].rate = r.rate_total;
          cells[k].regime = std::string(to_string(r.regime));
          cells[k].achieved = r.achieved;
        } catch (const std::exception&) {
          cells[k] = Cell{};
        }
      }
    };
    const int jobs = std::max(1, o.jobs);
    if (jobs == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < jobs; ++w) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }

    // A rate that grows when either budget grows is a monotonicity violation.
    const auto rate_at = [&](std::size_t i, std::size_t j) { return cells[i * g2.size() + j].rate; };
    long violations = 0;
    for (std::size_t i = 0; i < g1.size(); ++i) {
      for (std::size_t j = 0; j < g2.size(); ++j) {
        const double r = rate_at(i, j);
        if (std::isnan(r)) continue;
        if (i + 1 < g1.size() && rate_at(i + 1, j) > r + 1e-9) ++violations;
        if (j + 1 < g2.size() && rate_at(i, j + 1) > r + 1e-9) ++violations;
      }
    }

    auto s = csv_stream();
    s << "delta1,delta2,rate_nats,rate_bits,regime,d1_achieved,d2_achieved\n";
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const Cell& c = cells[k];
      const auto field = [](double v) {
        auto f = csv_stream();
        if (std::isfinite(v)) f << v;
        return f.str();
      };
      s << field(g1[k / g2.size()]) << ',' << field(g2[k % g2.size()]) << ',' << field(c.rate)
        << ',' << field(c.rate * kNatsToBits) << ',' << c.regime << ',' << field(c.achieved[0])
        << ',' << field(c.achieved[1]) << '\n';
    }
    s << "# monotonicity_violations," << violations << '\n';
    if (o.csv.empty()) {
      out << s.str();
    } else {
      write_text(o.csv, s.str());
    }
    return kExitOk;
  });
}

int cmd_simulate(const std::string& problem_file, const Options& o, std::ostream& out,
                 std::ostream& err) {
  return guarded(err, [&]() -> int {
    const Problem p = load_problem(problem_file);
    const SolveReport r = solve(p.model, p.distortion, solve_options(o));
    json j{{"regime", std::string(to_string(r.regime))},
           {"rate_total", number(scale_rate(r.rate_total, o.bits))},
           {"config", config_json("simulate", problem_file, o)}};
    if (!has_realization(r)) {
      j["monte_carlo"] = nullptr;
      emit_json(j, o, out);
      err << "boundary regime: no realization to simulate (rerun with --oracle)\n";
      return kExitBoundary;
    }
    const RealizationSchedule realization =
        o.perturb_h == 1.0 ? r.realization : perturb_gain(r.realization, o.perturb_h);
    const MonteCarlo mc = run_monte_carlo(p.model, r, realization, o);
    j["monte_carlo"] = monte_carlo_json(mc, o.bits);
    emit_json(j, o, out);
    return regime_exit(r);
  });
}

int cmd_verify(const std::string& problem_file, const Options& o, std::ostream& out,
               std::ostream& err) {
  return guarded(err, [&]() -> int {
    const Problem p = load_problem(problem_file);
    const SourceModel& m = p.model;
    const SolveReport r = solve(m, p.distortion, solve_options(o));
    json checks = json::array();
    bool all_pass = true;
    const auto check = [&](const std::string& name, double value, double threshold) {
      const bool pass = value <= threshold;  // NaN fails
      all_pass = all_pass && pass;
      checks.push_back({{"name", name},
                        {"value", number(value)},
                        {"threshold", threshold},
                        {"pass", pass}});
    };

    json j{{"regime", std::string(to_string(r.regime))},
           {"rate_total", number(scale_rate(r.rate_total, o.bits))},
           {"config", config_json("verify", problem_file, o)}};
    if (!has_realization(r)) {
      j["checks"] = checks;
      j["pass"] = false;
      emit_json(j, o, out);
      err << "boundary regime: nothing to verify without --oracle\n";
      return kExitBoundary;
    }

    const RealizationSchedule realization =
        o.perturb_h == 1.0 ? r.realization : perturb_gain(r.realization, o.perturb_h);
    const ConditionReport c = check_sufficient_conditions(realization, r.schedule);
    const auto worst = [](const std::vector<double>& v) {
      double w = 0.0;
      for (double x : v) w = std::isnan(x) ? w : std::max(w, std::abs(x));
      return w;
    };
    const auto most_negative = [](const std::vector<double>& v) {
      double w = 0.0;
      for (double x : v) w = std::max(w, -x);
      return w;
    };
    check("condition1_residual", worst(c.condition1), 1e-9);
    check("gain_symmetry_defect", worst(c.symmetry_defect), 1e-10);
    check("gain_negative_eigenvalue", most_negative(c.gain_min_eigenvalue), 1e-10);
    check("qv_negative_eigenvalue", most_negative(c.qv_min_eigenvalue), 1e-10);
    check("qv_formula_gap", worst(c.qv_formula_gap), 1e-10);
    if (r.regime != Regime::oracle_only) check("kkt_max_residual", r.residuals.max_residual(), 1e-6);
    if (r.oracle_rate) check("oracle_dominance", *r.oracle_rate - r.rate_total, 1e-6);

    if (!o.skip_mc) {
      const MonteCarlo mc = run_monte_carlo(m, r, realization, o);
      double dz = 0.0;
      for (double z : mc.distortion_z_stage) dz = std::max(dz, z);
      // Hundreds of z-scores are inspected at once, so a per-entry 3 SE rule
      // would fail by chance; the threshold controls the family-wise rate.
      const double zmax = familywise_threshold(mc.statistics);
      check("mc_distortion_max_abs_z", dz, zmax);
      check("mc_orthogonality_max_abs_z", mc.orthogonality_max_z, zmax);
      check("mc_causality_max_abs_z", mc.causality_max_z, zmax);
      const double rel = r.rate_total > 0.0
                             ? std::abs(mc.empirical_rate - r.rate_total) / r.rate_total
                             : std::abs(mc.empirical_rate);
      check("mc_rate_relative_error", rel, 0.05);
      j["monte_carlo"] = monte_carlo_json(mc, o.bits);
    }
    j["oracle_gap"] = r.oracle_gap ? number(scale_rate(*r.oracle_gap, o.bits)) : json(nullptr);
    j["checks"] = checks;
    j["pass"] = all_pass;
    emit_json(j, o, out);
    for (const auto& ch : checks) {
      err << (ch["pass"].get<bool>() ? "PASS " : "FAIL ") << ch["name"].get<std::string>()
          << " = " << ch["value"].dump() << " (<= " << ch["threshold"].dump() << ")\n";
    }
    if (!all_pass) return kExitVerifyFailed;
    return regime_exit(r);
  });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint nonanticipative rate-distortion solver for Gauss-Markov source pairs"};
  app.require_subcommand(1);
  Options o;
  std::string file;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("problem", file, "Problem JSON file")->required();
    sub->add_option("--output", o.output, "Write the JSON report here instead of stdout");
    sub->add_flag("--oracle", o.oracle, "Also run the direct minimizer");
    sub->add_flag("--closed-form", o.closed_form, "Use the scalar closed form when applicable");
    sub->add_flag("--bits", o.bits, "Report rates in bits");
    sub->add_option("--seed", o.seed, "Random seed");
    sub->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  };
  CLI::App* solve_cmd = app.add_subcommand("solve", "Solve one problem");
  common(solve_cmd);
  solve_cmd->add_option("--csv", o.csv, "Per-stage CSV output");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Rate surface over a budget grid");
  common(sweep_cmd);
  sweep_cmd->add_option("--csv", o.csv, "CSV output (stdout when omitted)");
  sweep_cmd->add_option("--delta1-grid", o.delta1_grid, "a:b:k")->required();
  sweep_cmd->add_option("--delta2-grid", o.delta2_grid, "a:b:k")->required();

  CLI::App* sim_cmd = app.add_subcommand("simulate", "Monte-Carlo run of the realization");
  common(sim_cmd);
  sim_cmd->add_option("--paths", o.paths, "Sample paths")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--perturb-h", o.perturb_h, "Scale every H_t by this factor");

  CLI::App* verify_cmd = app.add_subcommand("verify", "Run every property check");
  common(verify_cmd);
  verify_cmd->add_option("--paths", o.paths, "Sample paths")->check(CLI::PositiveNumber);
  verify_cmd->add_option("--perturb-h", o.perturb_h, "Scale every H_t by this factor");
  verify_cmd->add_flag("--skip-mc", o.skip_mc, "Deterministic checks only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o_out;
    std::ostringstream o_err;
    const int code = app.exit(e, o_out, o_err);
    out << o_out.str();
    err << o_err.str();
    return code == 0 ? kExitOk : kExitError;
  }
  if (solve_cmd->parsed()) return cmd_solve(file, o, out, err);
  if (sweep_cmd->parsed()) return cmd_sweep(file, o, out, err);
  if (sim_cmd->parsed()) return cmd_simulate(file, o, out, err);
  return cmd_verify(file, o, out, err);
}

}  // namespace nrdf::cli
