#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <string>

#include "fixtures.hpp"
#include "nrdf/errors.hpp"
#include "nrdf/model.hpp"

using namespace nrdf;
using namespace nrdf::testing;

namespace {

bool contains(const std::vector<std::string>& report, const std::string& needle) {
  return std::any_of(report.begin(), report.end(),
                     [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

const char* kMinimal = R"({
  "n": 3, "p1": 1, "p2": 1, "q1": 1, "q2": 1,
  "A": [[1, 0], [0, 1]],
  "B": [[1, 0], [0, 1]],
  "Q_W": [[1, 0], [0, 1]],
  "Q_X1": [[1, 0], [0, 1]],
  "delta1": 0.5, "delta2": 0.5
})";

std::string replace(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  if (pos != std::string::npos) text.replace(pos, from.size(), to);
  return text;
}

}  // namespace

TEST(ValidateModel, IdentityModelIsClean) {
  const SourceModel m = decoupled_scalar_model(3, 1.0, 1.0, 1.0, 1.0);
  EXPECT_TRUE(validate_model(m).empty());
}

TEST(ValidateModel, NonPsdInitialCovariance) {
  SourceModel m = decoupled_scalar_model(3, 1.0, 1.0, 1.0, 1.0);
  m.q_x1 = diag2(1.0, -1.0);
  EXPECT_TRUE(contains(validate_model(m), "Q_X1 not PSD"));
}

TEST(ValidateModel, WrongDimension) {
  SourceModel m = decoupled_scalar_model(3, 1.0, 1.0, 1.0, 1.0);
  m.a[1] = Matrix::Identity(3, 3);
  EXPECT_TRUE(contains(validate_model(m), "A[1] has dimension 3x3"));
}

TEST(ValidateModel, CountsNonFiniteAndAsymmetric) {
  SourceModel m = decoupled_scalar_model(3, 1.0, 1.0, 1.0, 1.0);
  m.a.pop_back();
  m.b[0](0, 0) = std::nan("");
  m.q_w[1] = mat2(1.0, 0.5, 0.0, 1.0);
  const auto report = validate_model(m);
  EXPECT_TRUE(contains(report, "A has 1 entries"));
  EXPECT_TRUE(contains(report, "B[0] has non-finite"));
  EXPECT_TRUE(contains(report, "Q_W[1] not symmetric"));
}

TEST(ValidateDistortion, RejectsNonPositive) {
  EXPECT_TRUE(contains(validate_distortion({0.0, 1.0}), "delta1 must be positive"));
  EXPECT_TRUE(contains(validate_distortion({1.0, -2.0}), "delta2 must be positive"));
  EXPECT_TRUE(validate_distortion({1.0, 1.0}).empty());
}

TEST(QbarSchedule, IdentityConjugation) {
  const SourceModel m = decoupled_scalar_model(3, 0.5, 0.5, 0.3, 2.0);
  const QbarSchedule q = qbar_schedule(m);
  ASSERT_EQ(q.qbar.size(), 2u);
  EXPECT_EQ(q.qbar[0].matrix(), diag2(0.3, 2.0));
  EXPECT_TRUE(q.strictly_pd[0]);
}

TEST(QbarSchedule, ZeroInputMatrix) {
  SourceModel m = decoupled_scalar_model(2, 0.5, 0.5, 1.0, 1.0);
  m.b[0].setZero();
  const QbarSchedule q = qbar_schedule(m);
  EXPECT_EQ(q.qbar[0], SymMatrix::zero(2));
  EXPECT_FALSE(q.strictly_pd[0]);
}

TEST(QbarSchedule, SharedNoiseIsRankOne) {
  SourceModel m;
  m.n = 2;
  m.q1 = 1;
  m.q2 = 0;
  m.a = {Matrix::Identity(2, 2)};
  Matrix b(2, 1);
  b << 1.0, 1.0;
  m.b = {b};
  Matrix qw(1, 1);
  qw << 2.5;
  m.q_w = {qw};
  m.q_x1 = Matrix::Identity(2, 2);
  EXPECT_TRUE(validate_model(m).empty());
  const SymMatrix q = qbar_schedule(m).qbar[0];
  EXPECT_EQ(q.matrix(), 2.5 * mat2(1, 1, 1, 1));
  EXPECT_NEAR(eigenvalues(q).minCoeff(), 0.0, 1e-15);
}

TEST(QbarSchedule, AlwaysPsdOnRandomModels) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    for (const auto& q : qbar_schedule(random_model(rng, 4)).qbar) EXPECT_TRUE(is_psd(q, 1e-10));
  }
}

TEST(ParseProblem, ReplicatesConstantMatrices) {
  const Problem p = parse_problem(kMinimal);
  EXPECT_EQ(p.model.n, 3);
  ASSERT_EQ(p.model.a.size(), 2u);
  EXPECT_EQ(p.model.a[1], Matrix::Identity(2, 2));
  EXPECT_TRUE(p.model.time_invariant());
  EXPECT_DOUBLE_EQ(p.distortion.delta1, 0.5);
}

TEST(ParseProblem, AcceptsPerStageLists) {
  const std::string text = replace(kMinimal, R"("A": [[1, 0], [0, 1]])",
                                   R"("A": [[[1, 0], [0, 1]], [[0.5, 0], [0, 0.5]]])");
  const Problem p = parse_problem(text);
  EXPECT_EQ(p.model.a[1], 0.5 * Matrix::Identity(2, 2));
  EXPECT_FALSE(p.model.time_invariant());
}

TEST(ParseProblem, MissingFieldIsNamed) {
  const std::string text = replace(kMinimal, R"("n": 3, )", "");
  try {
    parse_problem(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("\"n\""), std::string::npos);
  }
}

TEST(ParseProblem, ZeroBudgetIsValidationError) {
  const std::string text = replace(kMinimal, R"("delta1": 0.5)", R"("delta1": 0)");
  try {
    parse_problem(text);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_TRUE(contains(e.violations(), "delta1 must be positive"));
  }
}

TEST(ParseProblem, MalformedJsonReportsPosition) {
  try {
    parse_problem("{\n  \"n\": 3,\n  oops\n}");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(ParseProblem, RejectsUnknownFieldsAndNonzeroMeans) {
  EXPECT_THROW(parse_problem(replace(kMinimal, R"("n": 3,)", R"("n": 3, "delta3": 1,)")),
               ParseError);
  EXPECT_THROW(parse_problem(replace(kMinimal, R"("n": 3,)", R"("n": 3, "mean_X1": [1, 0],)")),
               ValidationError);
  EXPECT_NO_THROW(parse_problem(replace(kMinimal, R"("n": 3,)", R"("n": 3, "mean_X1": [0, 0],)")));
}

TEST(ParseProblem, WrongStageCount) {
  const std::string text =
      replace(kMinimal, R"("A": [[1, 0], [0, 1]])", R"("A": [[[1, 0], [0, 1]]])");
  EXPECT_ANY_THROW(parse_problem(text));
}

TEST(ParseProblem, RaggedMatrix) {
  EXPECT_THROW(parse_problem(replace(kMinimal, R"("Q_X1": [[1, 0], [0, 1]])",
                                     R"("Q_X1": [[1, 0], [0]])")),
               ParseError);
}

TEST(SerializeProblem, RoundTripIsBitExact) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    Problem p;
    p.model = random_model(rng, 2 + trial);
    p.distortion = {0.1 + 0.37 * trial, 1.0 / 3.0};
    const Problem q = parse_problem(serialize_problem(p));
    EXPECT_EQ(q.model.n, p.model.n);
    for (std::size_t k = 0; k < p.model.a.size(); ++k) {
      EXPECT_EQ(q.model.a[k], p.model.a[k]);
      EXPECT_EQ(q.model.b[k], p.model.b[k]);
      EXPECT_EQ(q.model.q_w[k], p.model.q_w[k]);
    }
    EXPECT_EQ(q.model.q_x1, p.model.q_x1);
    EXPECT_EQ(q.distortion.delta1, p.distortion.delta1);
    EXPECT_EQ(q.distortion.delta2, p.distortion.delta2);
    EXPECT_EQ(serialize_problem(q), serialize_problem(p));
  }
}

TEST(LoadProblem, ReadsFileAndReportsMissingFile) {
  const Problem p = load_problem(data_path("example1.json"));
  EXPECT_EQ(p.model.n, 10);
  EXPECT_THROW(load_problem(data_path("does_not_exist.json")), ParseError);
}
