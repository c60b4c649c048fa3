#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace nrdf::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  kExitBoundary = 2,
  kExitVerifyFailed = 3,
};

struct Options {
  std::string output;  // JSON destination; stdout when empty
  std::string csv;     // optional CSV destination
  bool oracle = false;
  bool closed_form = false;
  bool bits = false;
  bool skip_mc = false;
  long paths = 100000;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string delta1_grid;
  std::string delta2_grid;
  double perturb_h = 1.0;
};

/// Parses "a:b:k" into k evenly spaced values from a to b. Throws
/// std::invalid_argument unless the result is positive and strictly increasing.
std::vector<double> parse_grid(std::string_view text);

int cmd_solve(const std::string& problem_file, const Options& options, std::ostream& out,
              std::ostream& err);
int cmd_sweep(const std::string& problem_file, const Options& options, std::ostream& out,
              std::ostream& err);
int cmd_simulate(const std::string& problem_file, const Options& options, std::ostream& out,
                 std::ostream& err);
int cmd_verify(const std::string& problem_file, const Options& options, std::ostream& out,
               std::ostream& err);

/// Full command-line entry point.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nrdf::cli
