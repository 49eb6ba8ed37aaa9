#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pmpkit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr const char* kVersion = "0.1.0";

/// Malformed input: bad dimensions, out-of-range parameters, inconsistent grids.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A well-posed computation that failed: blow-up, chattering, no root found.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

/// Closed interval of admissible values for one control channel.
struct Interval {
  double lo = -1.0;
  double hi = 1.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Time-stamped samples of a state (and optionally an adjoint).
struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> adjoints;  // empty when no adjoint was propagated

  std::size_t size() const { return times.size(); }
  bool empty() const { return times.empty(); }
  const Vec& back() const { return states.back(); }

  void push(double t, Vec x) {
    times.push_back(t);
    states.push_back(std::move(x));
  }

  void validate() const {
    if (states.size() != times.size())
      throw ValidationError("trajectory: times/states length mismatch");
    if (!adjoints.empty() && adjoints.size() != times.size())
      throw ValidationError("trajectory: times/adjoints length mismatch");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] >= times[i - 1]))
        throw ValidationError("trajectory: times not increasing at index " + std::to_string(i));
  }
};

inline int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

}  // namespace pmpkit
