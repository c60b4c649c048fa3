#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "json.hpp"
#include "nrdf_cli/commands.hpp"

using nlohmann::json;
using namespace nrdf::cli;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "nrdf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  CliRun r;
  r.code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("nrdf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& text) const {
    const auto path = dir_ / name;
    std::ofstream(path) << text;
    return path.string();
  }

  std::string scalar_problem(int n, double a12, double d1, double d2) const {
    std::ostringstream s;
    s << R"({"n": )" << n << R"(, "p1": 1, "p2": 1, "q1": 1, "q2": 1,
      "A": [[0.9, )" << a12 << "], [" << a12 << R"(, 0.9]],
      "B": [[1, 0], [0, 1]], "Q_W": [[1, 0], [0, 1]], "Q_X1": [[1, 0], [0, 1]],
      "delta1": )" << d1 << R"(, "delta2": )" << d2 << "}";
    return write("problem.json", s.str());
  }

  std::filesystem::path dir_;
};

}  // namespace

TEST(ParseGrid, EvenlySpaced) {
  const auto g = parse_grid("0.1:0.5:5");
  ASSERT_EQ(g.size(), 5u);
  EXPECT_DOUBLE_EQ(g.front(), 0.1);
  EXPECT_DOUBLE_EQ(g.back(), 0.5);
  EXPECT_NEAR(g[2], 0.3, 1e-15);
  EXPECT_EQ(parse_grid("0.2:0.2:1"), std::vector<double>{0.2});
}

TEST(ParseGrid, RejectsMalformedSpecs) {
  for (const char* bad : {"0.1:0.5", "0:1:3", "0.5:0.1:3", "0.1:0.5:0", "a:b:c", "0.1:0.5:3x"}) {
    EXPECT_THROW(parse_grid(bad), std::invalid_argument) << bad;
  }
}

TEST_F(CliTest, SolveInteriorExample) {
  const CliRun r = run_cli({"solve", nrdf::testing::data_path("example1.json"), "--closed-form"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["regime"], "interior");
  EXPECT_EQ(j["method"], "closed-form");
  EXPECT_LE(j["residuals"]["max_residual"].get<double>(), 1e-6);
  EXPECT_EQ(j["rate_per_stage"].size(), 10u);
  EXPECT_EQ(j["config"]["closed_form"], true);
}

TEST_F(CliTest, SolveWritesFilesAndBits) {
  const std::string problem = scalar_problem(4, 0.3, 0.2, 0.3);
  const std::string out = (dir_ / "report.json").string();
  const std::string csv = (dir_ / "stages.csv").string();
  ASSERT_EQ(run_cli({"solve", problem, "--output", out, "--csv", csv}).code, kExitOk);
  const CliRun bits = run_cli({"solve", problem, "--bits"});
  std::ifstream f(out);
  const json nats = json::parse(f);
  const json b = json::parse(bits.out);
  EXPECT_EQ(b["rate_unit"], "bits");
  EXPECT_NEAR(b["rate_total"].get<double>(), nats["rate_total"].get<double>() / std::log(2.0), 1e-12);
  std::ifstream c(csv);
  std::string header;
  std::getline(c, header);
  EXPECT_EQ(header, "stage,rate_nats,trace1,trace2,ordering_margin");
  int rows = 0;
  for (std::string line; std::getline(c, line);) ++rows;
  EXPECT_EQ(rows, 4);
}

TEST_F(CliTest, SolveRejectsZeroBudget) {
  const CliRun r = run_cli({"solve", scalar_problem(3, 0.3, 0.0, 0.3)});
  EXPECT_EQ(r.code, kExitError);
  EXPECT_NE(r.err.find("ValidationError"), std::string::npos);
  EXPECT_NE(r.err.find("delta1 must be positive"), std::string::npos);
}

TEST_F(CliTest, SolveGenerousBudgets) {
  const CliRun r = run_cli({"solve", scalar_problem(3, 0.3, 50.0, 50.0)});
  ASSERT_EQ(r.code, kExitOk);
  const json j = json::parse(r.out);
  EXPECT_EQ(j["rate_total"].get<double>(), 0.0);
  EXPECT_EQ(j["multipliers"]["lambda1"].get<double>(), 0.0);
  EXPECT_EQ(j["multipliers"]["lambda2"].get<double>(), 0.0);
}

TEST_F(CliTest, SolveBoundaryExitCodes) {
  const std::string problem = scalar_problem(6, 0.3, 0.1, 1.05);
  const CliRun plain = run_cli({"solve", problem});
  EXPECT_EQ(plain.code, kExitBoundary);
  const json j = json::parse(plain.out);
  EXPECT_EQ(j["regime"], "boundary-detected");
  EXPECT_TRUE(j["rate_total"].is_null());
  const CliRun oracle = run_cli({"solve", problem, "--oracle"});
  EXPECT_EQ(oracle.code, kExitBoundary);
  const json o = json::parse(oracle.out);
  EXPECT_EQ(o["regime"], "oracle-only");
  EXPECT_TRUE(o["rate_total"].is_number());
}

TEST_F(CliTest, SweepDecoupledGrid) {
  const std::string problem = scalar_problem(4, 0.0, 0.1, 0.1);
  const CliRun r = run_cli({"sweep", problem, "--delta1-grid", "0.1:0.2:2", "--delta2-grid",
                         "0.1:0.3:2", "--jobs", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream s(r.out);
  std::string line;
  std::getline(s, line);
  EXPECT_EQ(line, "delta1,delta2,rate_nats,rate_bits,regime,d1_achieved,d2_achieved");
  std::vector<double> rates;
  while (std::getline(s, line) && line.rfind('#', 0) != 0) {
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    ASSERT_EQ(fields.size(), 7u);
    EXPECT_EQ(fields[4], "interior");
    rates.push_back(std::stod(fields[2]));
  }
  ASSERT_EQ(rates.size(), 4u);
  EXPECT_LE(rates[2], rates[0]);
  EXPECT_LE(rates[1], rates[0]);
  EXPECT_LE(rates[3], rates[1]);
  EXPECT_LE(rates[3], rates[2]);
  EXPECT_EQ(line, "# monotonicity_violations,0");
}

TEST_F(CliTest, SweepGenerousAndBoundaryCells) {
  const std::string problem = scalar_problem(3, 0.3, 0.1, 0.1);
  const std::string csv = (dir_ / "sweep.csv").string();
  const CliRun r = run_cli({"sweep", problem, "--delta1-grid", "0.1:40:2", "--delta2-grid",
                         "0.1:40:2", "--oracle", "--csv", csv});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream f(csv);
  std::stringstream text;
  text << f.rdbuf();
  const std::string t = text.str();
  EXPECT_NE(t.find("40,40,0,0,zero-rate"), std::string::npos) << t;
  EXPECT_NE(t.find("oracle-only"), std::string::npos) << t;
}

TEST_F(CliTest, SimulateReportsMonteCarlo) {
  const CliRun r = run_cli({"simulate", scalar_problem(3, 0.3, 0.2, 0.3), "--paths", "20000",
                         "--seed", "4"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["monte_carlo"]["distortion"].size(), 3u);
  EXPECT_EQ(j["config"]["paths"], 20000);
}

TEST_F(CliTest, VerifyPassesOnExample) {
  const CliRun r = run_cli({"verify", nrdf::testing::data_path("example1.json"), "--oracle",
                         "--seed", "1"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(r.out);
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_LT(j["oracle_gap"].get<double>(), 0.1);
}

TEST_F(CliTest, VerifyDetectsMisScaledGain) {
  const CliRun r = run_cli({"verify", nrdf::testing::data_path("example1.json"), "--perturb-h",
                         "1.2", "--seed", "1"});
  EXPECT_EQ(r.code, kExitVerifyFailed);
  const json j = json::parse(r.out);
  bool orthogonality_failed = false;
  for (const auto& c : j["checks"]) {
    if (c["name"] == "mc_orthogonality_max_abs_z") orthogonality_failed = !c["pass"].get<bool>();
  }
  EXPECT_TRUE(orthogonality_failed);
}

TEST_F(CliTest, VerifySkipMonteCarlo) {
  const CliRun r = run_cli({"verify", nrdf::testing::data_path("example1.json"), "--skip-mc"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(r.out);
  for (const auto& c : j["checks"]) {
    EXPECT_EQ(c["name"].get<std::string>().rfind("mc_", 0), std::string::npos);
  }
  EXPECT_FALSE(j.contains("monte_carlo"));
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run_cli({}).code, kExitError);
  EXPECT_EQ(run_cli({"frobnicate"}).code, kExitError);
  EXPECT_EQ(run_cli({"solve", (dir_ / "missing.json").string()}).code, kExitError);
  EXPECT_EQ(run_cli({"sweep", nrdf::testing::data_path("example1.json"), "--delta1-grid",
                     "0.1:0.2", "--delta2-grid", "0.1:0.2:2"})
                .code,
            kExitError);
  EXPECT_EQ(run_cli({"--help"}).code, kExitOk);
}
