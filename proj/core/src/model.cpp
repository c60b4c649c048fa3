#include "nrdf/model.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace nrdf {

using json = nlohmann::json;

ValidationError::ValidationError(std::vector<std::string> violations)
    : Error([&] {
        std::string msg = "validation failed";
        for (const auto& v : violations) msg += "; " + v;
        return msg;
      }()),
      violations_(std::move(violations)) {}

bool SourceModel::time_invariant() const {
  for (std::size_t k = 1; k < a.size(); ++k) {
    if (a[k] != a[0]) return false;
  }
  for (std::size_t k = 1; k < b.size(); ++k) {
    if (b[k] != b[0]) return false;
  }
  for (std::size_t k = 1; k < q_w.size(); ++k) {
    if (q_w[k] != q_w[0]) return false;
  }
  return true;
}

namespace {

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void check_shape(std::vector<std::string>& out, const std::string& name, const Matrix& m,
                 Index rows, Index cols) {
  if (m.rows() != rows || m.cols() != cols) {
    out.push_back(name + " has dimension " + dims(m) + ", expected " + std::to_string(rows) +
                  "x" + std::to_string(cols));
  }
}

bool check_finite(std::vector<std::string>& out, const std::string& name, const Matrix& m) {
  if (!m.allFinite()) {
    out.push_back(name + " has non-finite entries");
    return false;
  }
  return true;
}

void check_covariance(std::vector<std::string>& out, const std::string& name, const Matrix& m) {
  if (m.rows() != m.cols() || !m.allFinite()) return;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff())) {
    out.push_back(name + " not symmetric");
    return;
  }
  if (!is_psd(SymMatrix(m), kPsdTol)) out.push_back(name + " not PSD");
}

std::string indexed(const char* name, std::size_t k) {
  return std::string(name) + "[" + std::to_string(k) + "]";
}

}  // namespace

std::vector<std::string> validate_model(const SourceModel& m) {
  std::vector<std::string> out;
  if (m.n < 1) out.push_back("n must be a positive integer");
  if (m.p1 < 1) out.push_back("p1 must be a positive integer");
  if (m.p2 < 1) out.push_back("p2 must be a positive integer");
  if (m.q1 < 0) out.push_back("q1 must be nonnegative");
  if (m.q2 < 0) out.push_back("q2 must be nonnegative");
  if (!out.empty()) return out;

  const Index p = m.state_dim();
  const Index q = m.noise_dim();
  const std::size_t stages = static_cast<std::size_t>(m.n - 1);

  const auto check_count = [&](const char* name, std::size_t count) {
    if (count != stages) {
      out.push_back(std::string(name) + " has " + std::to_string(count) + " entries, expected " +
                    std::to_string(stages));
    }
  };
  check_count("A", m.a.size());
  check_count("B", m.b.size());
  check_count("Q_W", m.q_w.size());

  for (std::size_t k = 0; k < m.a.size(); ++k) {
    check_shape(out, indexed("A", k), m.a[k], p, p);
    check_finite(out, indexed("A", k), m.a[k]);
  }
  for (std::size_t k = 0; k < m.b.size(); ++k) {
    check_shape(out, indexed("B", k), m.b[k], p, q);
    check_finite(out, indexed("B", k), m.b[k]);
  }
  for (std::size_t k = 0; k < m.q_w.size(); ++k) {
    check_shape(out, indexed("Q_W", k), m.q_w[k], q, q);
    if (check_finite(out, indexed("Q_W", k), m.q_w[k])) {
      check_covariance(out, indexed("Q_W", k), m.q_w[k]);
    }
  }
  check_shape(out, "Q_X1", m.q_x1, p, p);
  if (check_finite(out, "Q_X1", m.q_x1)) check_covariance(out, "Q_X1", m.q_x1);
  return out;
}

std::vector<std::string> validate_distortion(const DistortionSpec& d) {
  std::vector<std::string> out;
  if (!(std::isfinite(d.delta1) && d.delta1 > 0.0)) out.push_back("delta1 must be positive");
  if (!(std::isfinite(d.delta2) && d.delta2 > 0.0)) out.push_back("delta2 must be positive");
  return out;
}

QbarSchedule qbar_schedule(const SourceModel& m) {
  QbarSchedule out;
  const std::size_t stages = m.n > 0 ? static_cast<std::size_t>(m.n - 1) : 0;
  out.qbar.reserve(stages);
  out.strictly_pd.reserve(stages);
  for (std::size_t k = 0; k < stages; ++k) {
    SymMatrix qbar = congruence(m.b[k], SymMatrix(m.q_w[k]));
    out.strictly_pd.push_back(min_eigenvalue(qbar) > kPsdTol);
    out.qbar.push_back(std::move(qbar));
  }
  return out;
}

SourceModel make_time_invariant(int n, int p1, int p2, int q1, int q2, const Matrix& a,
                                const Matrix& b, const Matrix& q_w, const Matrix& q_x1) {
  SourceModel m;
  m.n = n;
  m.p1 = p1;
  m.p2 = p2;
  m.q1 = q1;
  m.q2 = q2;
  const std::size_t stages = n > 1 ? static_cast<std::size_t>(n - 1) : 0;
  m.a.assign(stages, a);
  m.b.assign(stages, b);
  m.q_w.assign(stages, q_w);
  m.q_x1 = q_x1;
  return m;
}

// ---------------------------------------------------------------------------
// JSON problem files

namespace {

const std::set<std::string> kKnownFields = {"n",  "p1", "p2",   "q1",      "q2",     "A",
                                            "B",  "Q_W", "Q_X1", "delta1", "delta2", "mean_X1",
                                            "mean_W", "name", "comment"};

const json& require(const json& doc, const std::string& field) {
  auto it = doc.find(field);
  if (it == doc.end()) throw ParseError("missing required field \"" + field + "\"");
  return *it;
}

int read_int(const json& doc, const std::string& field) {
  const json& v = require(doc, field);
  if (!v.is_number_integer()) throw ParseError("field \"" + field + "\" must be an integer");
  return v.get<int>();
}

double read_number(const json& doc, const std::string& field) {
  const json& v = require(doc, field);
  if (!v.is_number()) throw ParseError("field \"" + field + "\" must be a number");
  return v.get<double>();
}

bool is_number_row(const json& v) {
  return v.is_array() && (v.empty() || v.front().is_number());
}

// Single matrix: array of equal-length numeric rows.
Matrix read_matrix(const json& v, const std::string& field) {
  if (!v.is_array()) throw ParseError("field \"" + field + "\" must be a nested array");
  const Index rows = static_cast<Index>(v.size());
  Index cols = -1;
  Matrix m;
  for (Index i = 0; i < rows; ++i) {
    const json& row = v[static_cast<std::size_t>(i)];
    if (!row.is_array()) {
      throw ParseError("field \"" + field + "\" row " + std::to_string(i) + " is not an array");
    }
    if (cols < 0) {
      cols = static_cast<Index>(row.size());
      m.resize(rows, cols);
    } else if (static_cast<Index>(row.size()) != cols) {
      throw ParseError("field \"" + field + "\" is ragged at row " + std::to_string(i));
    }
    for (Index j = 0; j < cols; ++j) {
      const json& x = row[static_cast<std::size_t>(j)];
      if (!x.is_number()) {
        throw ParseError("field \"" + field + "\" entry (" + std::to_string(i) + "," +
                         std::to_string(j) + ") is not a number");
      }
      m(i, j) = x.get<double>();
    }
  }
  if (rows == 0) m.resize(0, 0);
  return m;
}

// Either one matrix (replicated to `stages` copies) or a list of matrices.
std::vector<Matrix> read_matrix_list(const json& doc, const std::string& field,
                                     std::size_t stages) {
  const json& v = require(doc, field);
  if (!v.is_array()) throw ParseError("field \"" + field + "\" must be an array");
  if (!v.empty() && is_number_row(v.front())) {
    return std::vector<Matrix>(stages, read_matrix(v, field));
  }
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    out.push_back(read_matrix(v[k], field + "[" + std::to_string(k) + "]"));
  }
  return out;
}

bool all_zero(const json& v) {
  if (v.is_number()) return v.get<double>() == 0.0;
  if (v.is_array()) {
    for (const auto& x : v) {
      if (!all_zero(x)) return false;
    }
    return true;
  }
  return false;
}

std::pair<std::size_t, std::size_t> line_and_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json matrix_list_to_json(const std::vector<Matrix>& list) {
  json out = json::array();
  for (const auto& m : list) out.push_back(matrix_to_json(m));
  return out;
}

}  // namespace

Problem parse_problem(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_and_column(json_text, e.byte > 0 ? e.byte - 1 : 0);
    std::ostringstream os;
    os << "malformed JSON at line " << line << ", column " << col << ": " << e.what();
    throw ParseError(os.str());
  }
  if (!doc.is_object()) throw ParseError("problem file must contain a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (!kKnownFields.contains(key)) throw ParseError("unknown field \"" + key + "\"");
  }

  Problem problem;
  SourceModel& m = problem.model;
  m.n = read_int(doc, "n");
  m.p1 = read_int(doc, "p1");
  m.p2 = read_int(doc, "p2");
  m.q1 = read_int(doc, "q1");
  m.q2 = read_int(doc, "q2");
  if (m.n < 1) throw ParseError("field \"n\" must be a positive integer");
  const std::size_t stages = static_cast<std::size_t>(m.n - 1);
  m.a = read_matrix_list(doc, "A", stages);
  m.b = read_matrix_list(doc, "B", stages);
  m.q_w = read_matrix_list(doc, "Q_W", stages);
  m.q_x1 = read_matrix(require(doc, "Q_X1"), "Q_X1");
  problem.distortion.delta1 = read_number(doc, "delta1");
  problem.distortion.delta2 = read_number(doc, "delta2");

  std::vector<std::string> violations;
  for (const char* mean_field : {"mean_X1", "mean_W"}) {
    auto it = doc.find(mean_field);
    if (it != doc.end() && !all_zero(*it)) {
      violations.push_back(std::string(mean_field) + ": nonzero means are not supported");
    }
  }
  for (auto& v : validate_model(m)) violations.push_back(std::move(v));
  for (auto& v : validate_distortion(problem.distortion)) violations.push_back(std::move(v));
  if (!violations.empty()) throw ValidationError(std::move(violations));
  return problem;
}

Problem load_problem(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open problem file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_problem(buffer.str());
}

std::string serialize_problem(const Problem& problem) {
  const SourceModel& m = problem.model;
  json doc;
  doc["n"] = m.n;
  doc["p1"] = m.p1;
  doc["p2"] = m.p2;
  doc["q1"] = m.q1;
  doc["q2"] = m.q2;
  doc["A"] = matrix_list_to_json(m.a);
  doc["B"] = matrix_list_to_json(m.b);
  doc["Q_W"] = matrix_list_to_json(m.q_w);
  doc["Q_X1"] = matrix_to_json(m.q_x1);
  doc["delta1"] = problem.distortion.delta1;
  doc["delta2"] = problem.distortion.delta2;
  return doc.dump(2);
}

}  // namespace nrdf
