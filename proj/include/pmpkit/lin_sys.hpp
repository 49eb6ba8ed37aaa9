#pragma once

// Linear control systems x' = A x + B u with piecewise-constant controls,
// propagated exactly through matrix exponentials.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pmpkit/types.hpp"

namespace pmpkit {

struct LinearSystem {
  Mat A;
  Mat B;
  /// One interval per control channel; nullopt means unconstrained controls.
  std::optional<std::vector<Interval>> bounds;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index m() const { return B.cols(); }
  bool bounded() const { return bounds.has_value(); }

  /// True when every channel is constrained to [-1, 1].
  bool has_unit_box() const {
    if (!bounds) return false;
    return std::all_of(bounds->begin(), bounds->end(),
                       [](const Interval& i) { return i.lo == -1.0 && i.hi == 1.0; });
  }

  void validate() const {
    if (A.rows() == 0 || A.rows() != A.cols()) throw ValidationError("linear system: A must be square and non-empty");
    if (B.rows() != A.rows()) throw ValidationError("linear system: B must have as many rows as A");
    if (B.cols() == 0) throw ValidationError("linear system: B must have at least one column");
    if (!A.allFinite() || !B.allFinite()) throw ValidationError("linear system: non-finite entries");
    if (bounds) {
      if (static_cast<Eigen::Index>(bounds->size()) != B.cols())
        throw ValidationError("linear system: need one bound interval per control channel");
      for (std::size_t j = 0; j < bounds->size(); ++j)
        if (!((*bounds)[j].lo < (*bounds)[j].hi))
          throw ValidationError("linear system: bounds[" + std::to_string(j) + "] requires lo < hi");
    }
  }

  /// Mass-spring oscillator x'' + x = u with |u| <= 1.
  static LinearSystem oscillator() {
    LinearSystem sys;
    sys.A = (Mat(2, 2) << 0.0, 1.0, -1.0, 0.0).finished();
    sys.B = (Mat(2, 1) << 0.0, 1.0).finished();
    sys.bounds = std::vector<Interval>{{-1.0, 1.0}};
    return sys;
  }
};

/// Piecewise-constant control. breakpoints = {t0, ..., t1}; values[i] holds on
/// [breakpoints[i], breakpoints[i+1]).
struct ControlSignal {
  std::vector<double> breakpoints;
  std::vector<Vec> values;

  static ControlSignal constant(const Vec& v, double t0, double t1) { return ControlSignal{{t0, t1}, {v}}; }

  double t0() const { return breakpoints.front(); }
  double t1() const { return breakpoints.back(); }
  std::size_t intervals() const { return values.size(); }
  Eigen::Index dim() const { return values.empty() ? 0 : values.front().size(); }
  bool empty() const { return values.empty(); }

  void validate() const {
    if (breakpoints.size() < 2) throw ValidationError("control: need at least two breakpoints");
    if (values.size() + 1 != breakpoints.size())
      throw ValidationError("control: value count must equal interval count");
    for (std::size_t i = 1; i < breakpoints.size(); ++i)
      if (!(breakpoints[i] > breakpoints[i - 1]))
        throw ValidationError("control: breakpoints not strictly increasing at index " + std::to_string(i));
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i].size() != values.front().size())
        throw ValidationError("control: inconsistent value dimension at interval " + std::to_string(i));
      if (!values[i].allFinite()) throw ValidationError("control: non-finite value at interval " + std::to_string(i));
    }
  }

  /// Right-continuous interval lookup; t1 belongs to the last interval.
  std::size_t interval_index(double t) const {
    const auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), t);
    if (it == breakpoints.begin()) return 0;
    const auto idx = static_cast<std::size_t>(it - breakpoints.begin()) - 1;
    return std::min(idx, values.size() - 1);
  }

  const Vec& value_at(double t) const { return values[interval_index(t)]; }

  /// Value in force just before t (left limit).
  const Vec& value_before(double t) const {
    const auto it = std::lower_bound(breakpoints.begin(), breakpoints.end(), t);
    if (it == breakpoints.begin()) return values.front();
    const auto idx = static_cast<std::size_t>(it - breakpoints.begin()) - 1;
    return values[std::min(idx, values.size() - 1)];
  }

  /// Restriction to [a, b] with a < b inside the domain.
  ControlSignal restricted(double a, double b) const {
    if (!(a < b) || a < t0() || b > t1()) throw ValidationError("control: restriction outside domain");
    ControlSignal out;
    out.breakpoints.push_back(a);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double lo = breakpoints[i];
      const double hi = breakpoints[i + 1];
      if (hi <= a || lo >= b) continue;
      out.values.push_back(values[i]);
      out.breakpoints.push_back(std::min(hi, b));
    }
    return out;
  }

  /// Collapse adjacent intervals with identical values.
  ControlSignal merged() const {
    ControlSignal out;
    out.breakpoints.push_back(t0());
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!out.values.empty() && out.values.back() == values[i]) {
        out.breakpoints.back() = breakpoints[i + 1];
      } else {
        out.values.push_back(values[i]);
        out.breakpoints.push_back(breakpoints[i + 1]);
      }
    }
    return out;
  }
};

/// a*u1 + b*u2 on the common refinement of both breakpoint lists.
inline ControlSignal linear_combination(double a, const ControlSignal& u1, double b, const ControlSignal& u2) {
  u1.validate();
  u2.validate();
  if (u1.dim() != u2.dim()) throw ValidationError("linear_combination: control dimensions differ");
  const double lo = std::max(u1.t0(), u2.t0());
  const double hi = std::min(u1.t1(), u2.t1());
  if (!(lo < hi)) throw ValidationError("linear_combination: control domains do not overlap");
  std::vector<double> pts;
  for (double t : u1.breakpoints)
    if (t >= lo && t <= hi) pts.push_back(t);
  for (double t : u2.breakpoints)
    if (t >= lo && t <= hi) pts.push_back(t);
  pts.push_back(lo);
  pts.push_back(hi);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  ControlSignal out;
  out.breakpoints = pts;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double t = pts[i];
    out.values.push_back(a * u1.value_at(t) + b * u2.value_at(t));
  }
  return out;
}

/// Matrix exponential exp(t A): scaling and squaring around a degree-13
/// diagonal Pade approximant. The scaled matrix always satisfies
/// ||2^-s t A||_1 <= 5.37, the bound where the degree-13 approximant is
/// accurate to double precision.
inline Mat mat_exp(const Eigen::Ref<const Mat>& A, double t = 1.0) {
  if (A.rows() != A.cols()) throw ValidationError("mat_exp: matrix must be square");
  if (!A.allFinite() || !std::isfinite(t)) throw ValidationError("mat_exp: non-finite input");
  const auto n = A.rows();
  if (n == 0) return Mat(0, 0);

  static constexpr std::array<double, 14> b = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0, 129060195264000.0,
      10559470521600.0,    670442572800.0,      33522128640.0,      1323241920.0,       40840800.0,
      960960.0,            16380.0,             182.0,              1.0};
  constexpr double theta13 = 5.371920351148152;

  Mat X = t * A;
  if (X.isZero(0.0)) return Mat::Identity(n, n);
  const double norm1 = X.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > theta13) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
    X /= std::ldexp(1.0, squarings);
  }

  const Mat I = Mat::Identity(n, n);
  const Mat X2 = X * X;
  const Mat X4 = X2 * X2;
  const Mat X6 = X4 * X2;
  const Mat U = X * (X6 * (b[13] * X6 + b[11] * X4 + b[9] * X2) + b[7] * X6 + b[5] * X4 + b[3] * X2 + b[1] * I);
  const Mat V = X6 * (b[12] * X6 + b[10] * X4 + b[8] * X2) + b[6] * X6 + b[4] * X4 + b[2] * X2 + b[0] * I;
  Mat R = (V - U).partialPivLu().solve(V + U);
  for (int i = 0; i < squarings; ++i) R = R * R;
  if (!R.allFinite()) throw NumericalError("mat_exp: overflow");
  return R;
}

/// Exact zero-order-hold map over a step of length dt: x(dt) = Phi x(0) + Gamma u.
struct StepMap {
  Mat Phi;
  Mat Gamma;

  Vec apply(const Vec& x, const Vec& u) const { return Phi * x + Gamma * u; }
};

inline StepMap step_map(const LinearSystem& sys, double dt) {
  const auto n = sys.n();
  const auto m = sys.m();
  Mat aug = Mat::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = sys.A;
  aug.topRightCorner(n, m) = sys.B;
  const Mat E = mat_exp(aug, dt);
  return StepMap{E.topLeftCorner(n, n), E.topRightCorner(n, m)};
}

inline void check_control_bounds(const LinearSystem& sys, const ControlSignal& u) {
  if (u.dim() != sys.m()) throw ValidationError("control dimension does not match B");
  if (!sys.bounds) return;
  for (std::size_t i = 0; i < u.values.size(); ++i)
    for (Eigen::Index j = 0; j < sys.m(); ++j)
      if (!(*sys.bounds)[static_cast<std::size_t>(j)].contains(u.values[i](j)))
        throw ValidationError("control value out of bounds on interval " + std::to_string(i) + " (channel " +
                              std::to_string(j) + ", value " + std::to_string(u.values[i](j)) + ")");
}

/// Variation-of-constants solution x(t) = e^{(t-t0)A} x0 + int e^{(t-s)A} B u(s) ds
/// from u.t0() to T. Samples every breakpoint, plus interior points no more
/// than max_sample_dt apart; each interior sample is propagated directly
/// from the start of its constant-control interval.
inline Trajectory simulate(const LinearSystem& sys, const Vec& x0, const ControlSignal& u, double T,
                           double max_sample_dt = std::numeric_limits<double>::infinity()) {
  sys.validate();
  u.validate();
  check_control_bounds(sys, u);
  if (x0.size() != sys.n()) throw ValidationError("simulate: x0 dimension does not match A");
  if (!x0.allFinite()) throw ValidationError("simulate: non-finite x0");
  if (!(T >= u.t0()) || T - u.t1() > 1e-12 * std::max(1.0, std::abs(T)))
    throw ValidationError("simulate: horizon outside the control domain");
  if (!(max_sample_dt > 0.0)) throw ValidationError("simulate: max_sample_dt must be positive");

  Trajectory traj;
  traj.push(u.t0(), x0);
  Vec x = x0;
  for (std::size_t i = 0; i < u.intervals(); ++i) {
    const double a = u.breakpoints[i];
    if (a >= T) break;
    const double b = std::min(u.breakpoints[i + 1], T);
    const double len = b - a;
    const long pieces =
        std::isfinite(max_sample_dt) ? std::max(1L, static_cast<long>(std::ceil(len / max_sample_dt))) : 1L;
    const Vec start = x;
    for (long k = 1; k <= pieces; ++k) {
      const double tau = (k == pieces) ? len : len * static_cast<double>(k) / static_cast<double>(pieces);
      x = step_map(sys, tau).apply(start, u.values[i]);
      traj.push(a + tau, x);
    }
    if (b >= T) break;
  }
  return traj;
}

/// ||X_{a u1 + b u2}(T) - a X_{u1}(T) - b X_{u2}(T)|| from x0 = 0. Only
/// meaningful for unconstrained controls, where the reachable set from the
/// origin is a linear subspace.
inline double linearity_check(const LinearSystem& sys, const ControlSignal& u1, const ControlSignal& u2, double a,
                              double b, double T) {
  if (sys.bounded())
    throw ValidationError("linearity_check: requires an unconstrained control set (bounds must be null)");
  const Vec zero = Vec::Zero(sys.n());
  const Vec x1 = simulate(sys, zero, u1, T).back();
  const Vec x2 = simulate(sys, zero, u2, T).back();
  const Vec xc = simulate(sys, zero, linear_combination(a, u1, b, u2), T).back();
  return (xc - a * x1 - b * x2).norm();
}

}  // namespace pmpkit
