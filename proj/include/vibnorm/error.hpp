#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace vibnorm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid builder parameters, quadrature settings or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

/// Damper geometry vector is zero or has the wrong length.
class InvalidGeometry : public Error {
 public:
  using Error::Error;
};

/// A precondition on the caller's side was violated (even Simpson node count,
/// unsorted sweep input, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Damping strength outside the range the frequency cut-off was built for.
class OutOfRange : public Error {
 public:
  using Error::Error;
};

/// Non-finite intermediate in the closed-form kernels.
class NumericFailure : public Error {
 public:
  NumericFailure(double s, double gamma, const std::string& what)
      : Error(format(s, gamma, what)), s_(s), gamma_(gamma) {}

  double s() const noexcept { return s_; }
  double gamma() const noexcept { return gamma_; }

 private:
  static std::string format(double s, double gamma, const std::string& what) {
    std::ostringstream os;
    os << what << " (s=" << s << ", gamma=" << gamma << ")";
    return os.str();
  }

  double s_;
  double gamma_;
};

/// Dense reference solver did not meet its residual or convergence target.
class SolverFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace vibnorm
