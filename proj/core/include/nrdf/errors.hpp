#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nrdf {

// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonPositiveDefinite : public Error {
 public:
  using Error::Error;
};

class NotPSD : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Carries the full list of model/budget violations.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> violations);

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

class InfeasibleSchedule : public Error {
 public:
  using Error::Error;
};

class BracketingFailure : public Error {
 public:
  using Error::Error;
};

class NotScalar : public Error {
 public:
  using Error::Error;
};

class BoundaryRegime : public Error {
 public:
  using Error::Error;
};

class InfeasibleBudget : public Error {
 public:
  using Error::Error;
};

}  // namespace nrdf
