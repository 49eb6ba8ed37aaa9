#pragma once

// Bang-bang control synthesis from a vector of switching functions
// sigma(t) (one per channel): u_j(t) = sign sigma_j(t) with u_j in [-1, 1].

#include <algorithm>
#include <functional>
#include <vector>

#include "pmpkit/lin_sys.hpp"
#include "pmpkit/ode.hpp"

namespace pmpkit {

struct SwitchingOptions {
  /// Number of grid cells on [0, T] scanned for sign changes.
  int steps = 2000;
  double localization_tolerance = 1e-10;
  std::size_t max_events = 10000;
  /// A channel whose switching function stays below this fraction of its
  /// reference magnitude on the whole grid is reported as singular.
  double singular_tol = 1e-12;

  void validate() const {
    if (steps < 1) throw ValidationError("switching options: steps must be >= 1");
    if (!(localization_tolerance > 0.0 && localization_tolerance < 1.0))
      throw ValidationError("switching options: localization_tolerance must lie in (0, 1)");
    if (!(singular_tol >= 0.0)) throw ValidationError("switching options: singular_tol must be non-negative");
  }
};

struct ChannelSwitching {
  std::vector<double> switch_times;  // strictly inside (0, T)
  int initial_sign = 1;
  bool singular = false;  // control held at 0
};

struct BangBangPlan {
  std::vector<ChannelSwitching> channels;
  ControlSignal control;

  std::vector<double> all_switch_times() const {
    std::vector<double> out;
    for (const auto& c : channels) out.insert(out.end(), c.switch_times.begin(), c.switch_times.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  std::vector<int> singular_channels() const {
    std::vector<int> out;
    for (std::size_t j = 0; j < channels.size(); ++j)
      if (channels[j].singular) out.push_back(static_cast<int>(j));
    return out;
  }
};

namespace detail {

/// sigma(t) returns the m switching-function values; reference(j) is the
/// magnitude against which channel j is judged singular.
inline BangBangPlan synthesize_bang_bang(const std::function<Vec(double)>& sigma, const Vec& reference, double T,
                                         const SwitchingOptions& opt) {
  opt.validate();
  if (!(T > 0.0)) throw ValidationError("bang-bang synthesis: horizon must be positive");
  const auto m = reference.size();
  const ode::TimeGrid grid = ode::TimeGrid::uniform(0.0, T, opt.steps);
  const auto nodes = grid.nodes();

  std::vector<Vec> samples;
  samples.reserve(nodes.size());
  for (double t : nodes) samples.push_back(sigma(t));

  BangBangPlan plan;
  plan.channels.resize(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    auto& ch = plan.channels[static_cast<std::size_t>(j)];
    double peak = 0.0;
    for (const auto& s : samples) peak = std::max(peak, std::abs(s(j)));
    if (peak <= opt.singular_tol * reference(j)) {
      ch.singular = true;
      ch.initial_sign = 0;
      continue;
    }
    ode::EventSpec spec;
    spec.switching_function = [&sigma, j](double t, const Vec&) { return sigma(t)(j); };
    spec.localization_tolerance = opt.localization_tolerance;
    spec.max_events = opt.max_events;
    auto still = [](double, const Vec& x) { return Vec::Zero(x.size()).eval(); };
    const auto res = ode::integrate_with_events(still, grid, Vec::Zero(1), spec);
    ch.initial_sign = res.modes.front();
    for (double te : res.event_times)
      if (te > 0.0 && te < T) ch.switch_times.push_back(te);
  }

  auto& u = plan.control;
  u.breakpoints.push_back(0.0);
  for (double t : plan.all_switch_times()) u.breakpoints.push_back(t);
  u.breakpoints.push_back(T);
  for (std::size_t i = 0; i + 1 < u.breakpoints.size(); ++i) {
    const double start = u.breakpoints[i];
    Vec value(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto& ch = plan.channels[static_cast<std::size_t>(j)];
      const auto flips = std::upper_bound(ch.switch_times.begin(), ch.switch_times.end(), start) -
                         ch.switch_times.begin();
      value(j) = static_cast<double>(ch.initial_sign) * ((flips % 2 == 0) ? 1.0 : -1.0);
    }
    u.values.push_back(value);
  }
  return plan;
}

}  // namespace detail
}  // namespace pmpkit
