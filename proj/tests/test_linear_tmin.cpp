#include "pmpkit/linear_tmin.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace pmpkit {
namespace {

using std::numbers::pi;

Vec vec2(double a, double b) { return (Vec(2) << a, b).finished(); }

// Minimum time from (eps, 0) to the origin for the oscillator: a u = -1 arc
// about (-1, 0) until it meets the lower unit circle about (1, 0), then a
// u = +1 arc along that circle into the origin.
double eps_family_time(double eps) {
  const double x = (2.0 * eps + eps * eps) / 4.0;
  const double y = -std::sqrt(1.0 - (x - 1.0) * (x - 1.0));
  return std::atan2(-y, x + 1.0) + pi + std::atan2(y, x - 1.0);
}

// Same quantity by sweeping the first arc: the switch happens where the
// clockwise u = -1 circle through (eps, 0) first leaves the unit disk about (1, 0).
double eps_family_time_sweep(double eps) {
  const double r = 1.0 + eps;
  auto dist = [&](double a) {
    const double x = -1.0 + r * std::cos(a);
    const double y = -r * std::sin(a);
    return std::hypot(x - 1.0, y) - 1.0;
  };
  double lo = 0.0;
  double hi = 0.0;
  for (int k = 1; k <= 200000; ++k) {
    hi = k * 1e-5;
    if (dist(hi) >= 0.0) break;
    lo = hi;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (dist(mid) < 0.0 ? lo : hi) = mid;
  }
  const double x = -1.0 + r * std::cos(hi);
  const double y = -r * std::sin(hi);
  const double second = std::atan2(y, x - 1.0) + pi;
  return hi + second;
}

TEST(EpsFamilyOracle, ClosedFormMatchesSweep) {
  for (double eps : {0.01, 0.3, 1.0, 1.7, 1.99}) EXPECT_NEAR(eps_family_time(eps), eps_family_time_sweep(eps), 1e-10);
  EXPECT_NEAR(eps_family_time(2.0), pi, 1e-12);
}

TEST(BangBangFromAdjoint, OscillatorSwitchGapsArePi) {
  const auto sys = LinearSystem::oscillator();
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * pi);
  for (int trial = 0; trial < 30; ++trial) {
    const double a = ang(rng);
    const auto ext = bang_bang_from_adjoint(sys, Vec::Zero(2), vec2(std::cos(a), std::sin(a)), 12.0);
    const auto& sw = ext.bang_bang.switch_times;
    ASSERT_GE(sw.size(), 3u);
    for (std::size_t i = 1; i < sw.size(); ++i) EXPECT_NEAR(sw[i] - sw[i - 1], pi, 1e-8);
    // eta_2(t) = <e^{-t A^T} eta0, e2> vanishes at each switch
    for (double t : sw) EXPECT_NEAR((oracle::taylor_exp(sys.A.transpose(), -t) * vec2(std::cos(a), std::sin(a)))(1), 0.0, 1e-9);
  }
}

TEST(BangBangFromAdjoint, ZeroDriftGivesConstantControl) {
  LinearSystem sys{Mat::Zero(2, 2), Mat::Identity(2, 2), std::vector<Interval>(2)};
  const auto ext = bang_bang_from_adjoint(sys, Vec::Zero(2), vec2(1.0, 0.0), 3.0);
  EXPECT_TRUE(ext.bang_bang.switch_times.empty());
  ASSERT_EQ(ext.control.intervals(), 1u);
  EXPECT_DOUBLE_EQ(ext.control.values[0](0), 1.0);
  EXPECT_EQ(ext.bang_bang.initial_sign_per_channel[1], 0);
  EXPECT_NEAR((ext.state.back() - vec2(3.0, 0.0)).norm(), 0.0, 1e-12);
}

TEST(BangBangFromAdjoint, ScaleInvariance) {
  const auto sys = LinearSystem::oscillator();
  const Vec eta = vec2(0.3, -0.8);
  const auto a = bang_bang_from_adjoint(sys, vec2(1.0, 1.0), eta, 9.0);
  const auto b = bang_bang_from_adjoint(sys, vec2(1.0, 1.0), 7.5 * eta, 9.0);
  ASSERT_EQ(a.bang_bang.switch_times.size(), b.bang_bang.switch_times.size());
  for (std::size_t i = 0; i < a.bang_bang.switch_times.size(); ++i)
    EXPECT_NEAR(a.bang_bang.switch_times[i], b.bang_bang.switch_times[i], 1e-9);
  EXPECT_EQ(a.bang_bang.initial_sign_per_channel, b.bang_bang.initial_sign_per_channel);
}

TEST(BangBangFromAdjoint, RejectsZeroAdjoint) {
  EXPECT_THROW(bang_bang_from_adjoint(LinearSystem::oscillator(), Vec::Zero(2), Vec::Zero(2), 1.0), ValidationError);
}

TEST(BangBangFromAdjoint, AdjointSolvesCostateEquation) {
  const auto sys = LinearSystem::oscillator();
  const Vec eta0 = vec2(0.6, 0.8);
  const auto ext = bang_bang_from_adjoint(sys, Vec::Zero(2), eta0, 5.0);
  ASSERT_EQ(ext.adjoint.size(), ext.state.size());
  for (std::size_t k = 0; k < ext.adjoint.size(); ++k) {
    const double t = ext.adjoint.times[k];
    // eta' = -A^T eta: eta_1 = 0.6 cos t + 0.8 sin t, eta_2 = 0.8 cos t - 0.6 sin t
    EXPECT_NEAR(ext.adjoint.states[k](0), 0.6 * std::cos(t) + 0.8 * std::sin(t), 1e-12);
    EXPECT_NEAR(ext.adjoint.states[k](1), 0.8 * std::cos(t) - 0.6 * std::sin(t), 1e-12);
  }
}

TEST(BangBangControl, SignalAlternatesPerChannel) {
  BangBangControl c;
  c.horizon = 4.0;
  c.channel_switch_times = {{1.0, 3.0}, {2.0}};
  c.switch_times = {1.0, 2.0, 3.0};
  c.initial_sign_per_channel = {1, -1};
  const auto u = c.to_signal();
  ASSERT_EQ(u.intervals(), 4u);
  EXPECT_EQ(u.values[0], vec2(1, -1));
  EXPECT_EQ(u.values[1], vec2(-1, -1));
  EXPECT_EQ(u.values[2], vec2(-1, 1));
  EXPECT_EQ(u.values[3], vec2(1, 1));
}

TEST(SolveTmin, AlreadyAtTarget) {
  const auto sol = solve_tmin(LinearSystem::oscillator(), vec2(0.4, -0.2), vec2(0.4, -0.2));
  EXPECT_EQ(sol.T_star, 0.0);
  EXPECT_TRUE(sol.control.to_signal().empty());
}

TEST(SolveTmin, EpsFamilyMatchesGeometry) {
  const auto sys = LinearSystem::oscillator();
  for (double eps : {0.05, 0.5, 1.0, 1.6, 2.0}) {
    const auto sol = solve_tmin(sys, vec2(eps, 0.0), Vec::Zero(2));
    EXPECT_NEAR(sol.T_star, eps_family_time(eps), 1e-5) << "eps " << eps;
    EXPECT_LE(sol.endpoint_error, 1e-6);
  }
}

TEST(SolveTmin, SwitchingArcIsASingleArc) {
  const auto sys = LinearSystem::oscillator();
  for (double phi : {-0.4, -1.5, -2.6}) {
    const auto sol = solve_tmin(sys, vec2(1.0 + std::cos(phi), std::sin(phi)), Vec::Zero(2));
    EXPECT_NEAR(sol.T_star, phi + pi, 1e-9);
    EXPECT_TRUE(sol.control.switch_times.empty());
    EXPECT_EQ(sol.control.initial_sign_per_channel[0], 1);
  }
}

TEST(SolveTmin, PiecewiseCircleInvariant) {
  const auto sys = LinearSystem::oscillator();
  const Vec x0 = vec2(3.0, 1.0);
  const Vec x1 = vec2(-0.5, 0.25);
  const auto sol = solve_tmin(sys, x0, x1);
  EXPECT_LE(sol.endpoint_error, 1e-6 * (1.0 + x1.norm()));
  const auto u = sol.control.to_signal();
  const auto& tr = sol.trajectory;
  for (std::size_t i = 0; i < u.intervals(); ++i) {
    const double c = u.values[i](0);
    double ref = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 0; k < tr.size(); ++k) {
      if (tr.times[k] < u.breakpoints[i] || tr.times[k] > u.breakpoints[i + 1]) continue;
      const double r2 = std::pow(tr.states[k](0) - c, 2) + std::pow(tr.states[k](1), 2);
      if (std::isnan(ref)) ref = r2;
      EXPECT_NEAR(r2, ref, 1e-8);
    }
  }
  for (std::size_t i = 1; i < sol.control.switch_times.size(); ++i)
    EXPECT_NEAR(sol.control.switch_times[i] - sol.control.switch_times[i - 1], pi, 1e-8);
}

TEST(SolveTmin, ReproducedThroughAdjoint) {
  const auto sys = LinearSystem::oscillator();
  const auto sol = solve_tmin(sys, vec2(-2.0, 2.0), vec2(0.5, 0.0));
  const auto ext = bang_bang_from_adjoint(sys, vec2(-2.0, 2.0), sol.eta0, sol.T_star);
  ASSERT_EQ(ext.bang_bang.switch_times.size(), sol.control.switch_times.size());
  for (std::size_t i = 0; i < ext.bang_bang.switch_times.size(); ++i)
    EXPECT_NEAR(ext.bang_bang.switch_times[i], sol.control.switch_times[i], 1e-9);
  EXPECT_NEAR(sol.eta0.norm(), 1.0, 1e-15);
}

TEST(SolveTmin, EndpointOnReachableBoundary) {
  const auto sys = LinearSystem::oscillator();
  const Vec x0 = vec2(1.5, -1.0);
  const Vec x1 = vec2(0.0, 0.5);
  const auto sol = solve_tmin(sys, x0, x1);
  // outward normal at x1 is the final adjoint
  const Vec nu = oracle::taylor_exp(sys.A.transpose(), -sol.T_star) * sol.eta0;
  std::vector<Vec> dirs{nu};
  for (int k = 0; k < 32; ++k) dirs.push_back(vec2(std::cos(2 * pi * k / 32), std::sin(2 * pi * k / 32)));
  const double delta = 1e-3;
  EXPECT_GT(reach_hull(sys, x0, sol.T_star - delta, dirs).excess(x1), 1e-6);
  EXPECT_LE(reach_hull(sys, x0, sol.T_star + delta, dirs).excess(x1), 1e-9);
}

TEST(SolveTmin, NoRandomControlArrivesEarlier) {
  const auto sys = LinearSystem::oscillator();
  const Vec x0 = vec2(2.5, 0.5);
  const Vec x1 = Vec::Zero(2);
  const auto sol = solve_tmin(sys, x0, x1);
  std::mt19937 rng(5);
  const double T = sol.T_star - 0.05;
  double closest = 1e300;
  for (int trial = 0; trial < 3000; ++trial) {
    const auto bb = oracle::random_bang_bang(rng, T, 3);
    closest = std::min(closest, (oracle::oscillator_flow(x0, bb.breaks, bb.values, T) - x1).norm());
  }
  EXPECT_GT(closest, 1e-3);
}

TEST(SolveTmin, Preconditions) {
  const auto osc = LinearSystem::oscillator();
  LinearSystem three{Mat::Zero(3, 3), Mat::Identity(3, 1), std::vector<Interval>(1)};
  EXPECT_THROW(solve_tmin(three, Vec::Zero(3), Vec::Ones(3)), ValidationError);
  LinearSystem unctrl{Mat::Zero(2, 2), vec2(1.0, 0.0), std::vector<Interval>(1)};
  EXPECT_THROW(solve_tmin(unctrl, Vec::Zero(2), vec2(0.0, 1.0)), ValidationError);
  LinearSystem wide = osc;
  wide.bounds = std::vector<Interval>{Interval{-2.0, 2.0}};
  EXPECT_THROW(solve_tmin(wide, Vec::Zero(2), vec2(1.0, 0.0)), ValidationError);
}

TEST(SolveTmin, UnreachableWithinShortHorizon) {
  TminOptions opt;
  opt.T_max = 0.5;
  EXPECT_THROW(solve_tmin(LinearSystem::oscillator(), Vec::Zero(2), vec2(5.0, 5.0), opt), NumericalError);
}

TEST(SolveTmin, Deterministic) {
  const auto sys = LinearSystem::oscillator();
  const auto a = solve_tmin(sys, vec2(0.7, -1.3), vec2(-0.2, 0.1));
  const auto b = solve_tmin(sys, vec2(0.7, -1.3), vec2(-0.2, 0.1));
  EXPECT_EQ(a.T_star, b.T_star);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.control.switch_times, b.control.switch_times);
}

TEST(OptimalityProbe, ZeroDeltaPasses) {
  const auto sys = LinearSystem::oscillator();
  const auto sol = solve_tmin(sys, vec2(1.0, 0.0), Vec::Zero(2));
  const auto rep = local_optimality_probe(sys, sol, Vec::Zero(2), 10, 0.0);
  EXPECT_TRUE(rep.passed());
  EXPECT_FALSE(rep.probes.empty());
}

TEST(OptimalityProbe, OneArcSolutionMissesAfterPerturbation) {
  const auto sys = LinearSystem::oscillator();
  const double phi = -1.2;
  const auto sol = solve_tmin(sys, vec2(1.0 + std::cos(phi), std::sin(phi)), Vec::Zero(2));
  const auto rep = local_optimality_probe(sys, sol, Vec::Zero(2), 10, 1e-3);
  EXPECT_TRUE(rep.passed());
  for (const auto& p : rep.probes) EXPECT_GT(p.miss, 1e-4);
}

TEST(OptimalityProbe, SwitchShiftsMiss) {
  const auto sys = LinearSystem::oscillator();
  const auto sol = solve_tmin(sys, vec2(3.0, 1.0), vec2(0.0, 0.0));
  ASSERT_FALSE(sol.control.switch_times.empty());
  const auto rep = local_optimality_probe(sys, sol, Vec::Zero(2), 20, 1e-3);
  EXPECT_TRUE(rep.passed());
  EXPECT_EQ(rep.probes.size(), 2 * sol.control.switch_times.size() + 2);
}

TEST(OptimalityProbe, ReversedControlEndsFarAway) {
  const auto sys = LinearSystem::oscillator();
  const Vec x0 = vec2(1.0, 0.0);
  const auto sol = solve_tmin(sys, x0, Vec::Zero(2));
  auto u = sol.control.to_signal();
  for (auto& v : u.values) v = -v;
  EXPECT_GT(simulate(sys, x0, u, sol.T_star).back().norm(), 0.5);
}

}  // namespace
}  // namespace pmpkit
