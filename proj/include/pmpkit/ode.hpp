#pragma once

// Fixed-step RK4 integration with bisection-located switching events.
//
// A right-hand side is any callable with one of the signatures
//   Vec rhs(double t, const Vec& x)
//   Vec rhs(double t, const Vec& x, int mode)
// The second form receives the current sign (+1/-1) of the switching
// function, which stays constant between located events. This is how
// bang-bang controls are held fixed on each arc.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include "pmpkit/types.hpp"

namespace pmpkit::ode {

struct TimeGrid {
  double t0 = 0.0;
  double t1 = 1.0;
  double step = 1e-3;

  /// Grid with `steps` equal cells on [t0, t1].
  static TimeGrid uniform(double t0, double t1, int steps) {
    return TimeGrid{t0, t1, (t1 - t0) / static_cast<double>(steps)};
  }

  void validate() const {
    if (!std::isfinite(t0) || !std::isfinite(t1) || !std::isfinite(step))
      throw ValidationError("time grid: non-finite field");
    if (!(t1 > t0)) throw ValidationError("time grid: t1 must exceed t0");
    if (!(step > 0.0)) throw ValidationError("time grid: step must be positive");
    if (step > (t1 - t0) * (1.0 + 1e-12)) throw ValidationError("time grid: step exceeds interval length");
  }

  /// Node times t0, t0 + step, ..., t1. The last cell may be shorter; a
  /// remainder below 1e-9 step is absorbed into the previous cell.
  std::vector<double> nodes() const {
    validate();
    std::vector<double> out;
    const double span = t1 - t0;
    const auto full = static_cast<long>(std::floor(span / step * (1.0 + 1e-12)));
    out.reserve(static_cast<std::size_t>(full) + 2);
    for (long k = 0; k <= full; ++k) {
      const double t = t0 + static_cast<double>(k) * step;
      if (t1 - t <= 1e-9 * step) break;
      out.push_back(t);
    }
    out.push_back(t1);
    return out;
  }
};

struct EventSpec {
  std::function<double(double, const Vec&)> switching_function;
  /// Bisection stops once the bracket is narrower than this fraction of the step.
  double localization_tolerance = 1e-10;
  std::size_t max_events = 10000;
  /// Sign of the switching function on the first arc; 0 means "infer from g(t0, x0)".
  int initial_mode = 0;

  void validate() const {
    if (!switching_function) throw ValidationError("event spec: missing switching function");
    if (!(localization_tolerance > 0.0 && localization_tolerance < 1.0))
      throw ValidationError("event spec: localization_tolerance must lie in (0, 1)");
    if (initial_mode < -1 || initial_mode > 1) throw ValidationError("event spec: initial_mode must be -1, 0 or 1");
  }
};

struct EventResult {
  Trajectory trajectory;
  std::vector<double> event_times;
  /// modes[i] is the switching-function sign on arc i; size = event_times.size() + 1.
  std::vector<int> modes;
};

namespace detail {

template <class Rhs>
Vec call_rhs(Rhs& rhs, double t, const Vec& x, int mode) {
  if constexpr (std::is_invocable_v<Rhs&, double, const Vec&, int>) {
    return rhs(t, x, mode);
  } else {
    static_assert(std::is_invocable_v<Rhs&, double, const Vec&>,
                  "rhs must be callable as rhs(t, x) or rhs(t, x, mode)");
    (void)mode;
    return rhs(t, x);
  }
}

template <class Rhs>
Vec rk4_step_mode(Rhs& rhs, double t, const Vec& x, double h, int mode) {
  const Vec k1 = call_rhs(rhs, t, x, mode);
  const Vec k2 = call_rhs(rhs, t + 0.5 * h, x + (0.5 * h) * k1, mode);
  const Vec k3 = call_rhs(rhs, t + 0.5 * h, x + (0.5 * h) * k2, mode);
  const Vec k4 = call_rhs(rhs, t + h, x + h * k3, mode);
  Vec out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!out.allFinite())
    throw NumericalError("rk4: non-finite state at t = " + std::to_string(t + h) + " (integration blew up)");
  return out;
}

}  // namespace detail

/// One classical Runge-Kutta step of size h from (t, x).
template <class Rhs>
Vec rk4_step(Rhs&& rhs, double t, const Vec& x, double h, int mode = 1) {
  if (!(h > 0.0)) throw ValidationError("rk4_step: step must be positive");
  return detail::rk4_step_mode(rhs, t, x, h, mode);
}

/// Plain fixed-step integration over the grid nodes.
template <class Rhs>
Trajectory integrate(Rhs&& rhs, const TimeGrid& grid, const Vec& x0, int mode = 1) {
  const auto nodes = grid.nodes();
  Trajectory traj;
  traj.times.reserve(nodes.size());
  traj.states.reserve(nodes.size());
  traj.push(nodes.front(), x0);
  Vec x = x0;
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    x = detail::rk4_step_mode(rhs, nodes[k], x, nodes[k + 1] - nodes[k], mode);
    traj.push(nodes[k + 1], x);
  }
  return traj;
}

/// Fixed-step RK4 with event location. Whenever the switching function
/// changes sign inside a cell, the crossing is bracketed by bisection on the
/// sub-step length, the mode flips, and integration restarts at the located
/// time. Event times are appended to the trajectory samples.
template <class Rhs>
EventResult integrate_with_events(Rhs&& rhs, const TimeGrid& grid, const Vec& x0, const EventSpec& event) {
  event.validate();
  const auto nodes = grid.nodes();
  const auto& g = event.switching_function;
  const double width = event.localization_tolerance * grid.step;

  int mode = event.initial_mode;
  if (mode == 0) {
    mode = sign_of(g(nodes.front(), x0));
    if (mode == 0) {
      // g(t0) = 0: take the sign the function acquires just after t0.
      const double h = nodes[1] - nodes[0];
      const Vec probe = detail::rk4_step_mode(rhs, nodes[0], x0, h, 1);
      mode = sign_of(g(nodes[1], probe));
      if (mode == 0) mode = 1;
    }
  }

  EventResult out;
  out.trajectory.push(nodes.front(), x0);
  out.modes.push_back(mode);

  double t = nodes.front();
  Vec x = x0;
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const double t_next = nodes[k + 1];
    while (t < t_next) {
      const double h = t_next - t;
      Vec x_new = detail::rk4_step_mode(rhs, t, x, h, mode);
      const double g_new = g(t_next, x_new);
      if (!std::isfinite(g_new)) throw NumericalError("integrate_with_events: non-finite switching function");
      if (static_cast<double>(mode) * g_new >= 0.0) {
        t = t_next;
        x = std::move(x_new);
        break;
      }
      double lo = 0.0;
      double hi = h;
      while (hi - lo > width) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const Vec x_mid = detail::rk4_step_mode(rhs, t, x, mid, mode);
        if (static_cast<double>(mode) * g(t + mid, x_mid) < 0.0)
          hi = mid;
        else
          lo = mid;
      }
      const double t_event = (hi == h) ? t_next : t + hi;
      x = (hi == h) ? std::move(x_new) : detail::rk4_step_mode(rhs, t, x, hi, mode);
      t = t_event;
      mode = -mode;
      out.event_times.push_back(t);
      out.modes.push_back(mode);
      if (out.event_times.size() > event.max_events)
        throw NumericalError("integrate_with_events: more than " + std::to_string(event.max_events) +
                             " switching events (chattering) before t = " + std::to_string(t));
      if (t < t_next) out.trajectory.push(t, x);
    }
    out.trajectory.push(t_next, x);
  }
  return out;
}

}  // namespace pmpkit::ode
