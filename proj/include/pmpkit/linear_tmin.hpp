#pragma once

// Minimum-time steering of planar linear systems with |u_j| <= 1.
//
// Extremal controls are u(t) = sign(B^T eta(t)) with eta(t) = e^{-t A^T} eta(0).
// For a fixed eta(0) the control does not depend on the horizon, so every
// eta(0) = (cos theta, sin theta) traces one extremal curve x_theta(t); the
// minimum time is the first t at which some x_theta(t) meets the target.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "pmpkit/controllability.hpp"
#include "pmpkit/detail/bang_bang.hpp"
#include "pmpkit/lin_sys.hpp"

namespace pmpkit {

struct BangBangControl {
  std::vector<double> switch_times;  // all channels merged, strictly inside (0, horizon)
  std::vector<std::vector<double>> channel_switch_times;
  std::vector<int> initial_sign_per_channel;  // 0 for a singular channel
  double horizon = 0.0;

  ControlSignal to_signal() const {
    if (!(horizon > 0.0)) return {};
    ControlSignal u;
    u.breakpoints.push_back(0.0);
    u.breakpoints.insert(u.breakpoints.end(), switch_times.begin(), switch_times.end());
    u.breakpoints.push_back(horizon);
    const auto m = static_cast<Eigen::Index>(initial_sign_per_channel.size());
    for (std::size_t i = 0; i + 1 < u.breakpoints.size(); ++i) {
      Vec v(m);
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto& sw = channel_switch_times[static_cast<std::size_t>(j)];
        const auto flips = std::upper_bound(sw.begin(), sw.end(), u.breakpoints[i]) - sw.begin();
        v(j) = initial_sign_per_channel[static_cast<std::size_t>(j)] * ((flips % 2 == 0) ? 1.0 : -1.0);
      }
      u.values.push_back(v);
    }
    return u;
  }

  static BangBangControl from_plan(const BangBangPlan& plan, double T) {
    BangBangControl c;
    c.horizon = T;
    c.switch_times = plan.all_switch_times();
    for (const auto& ch : plan.channels) {
      c.channel_switch_times.push_back(ch.switch_times);
      c.initial_sign_per_channel.push_back(ch.singular ? 0 : ch.initial_sign);
    }
    return c;
  }
};

struct TminSolution {
  double T_star = 0.0;
  BangBangControl control;
  Vec eta0;          // unit adjoint at t = 0
  double theta = 0;  // eta0 = (cos theta, sin theta)
  double endpoint_error = 0.0;
  Trajectory trajectory;  // state samples, first sample = x0
};

struct BangBangExtremal {
  ControlSignal control;
  BangBangControl bang_bang;
  Trajectory state;
  Trajectory adjoint;  // eta(t) sampled at the same times as `state`
};

namespace detail {

/// Switching functions sigma(t) = B^T e^{-t A^T} eta0. Values at the scan
/// grid nodes are cached per horizon since only eta0 changes between calls.
class AdjointSwitching {
 public:
  AdjointSwitching(const LinearSystem& sys, double T, int steps)
      : At_(sys.A.transpose()), Bt_(sys.B.transpose()), grid_(ode::TimeGrid::uniform(0.0, T, steps)) {
    nodes_ = grid_.nodes();
    basis_.reserve(nodes_.size());
    for (double t : nodes_) basis_.push_back(Bt_ * mat_exp(At_, -t));
  }

  Vec operator()(double t, const Vec& eta0) const {
    const double k = std::round(t / grid_.step);
    if (k >= 0.0 && k < static_cast<double>(nodes_.size())) {
      const auto idx = static_cast<std::size_t>(k);
      if (nodes_[idx] == t) return basis_[idx] * eta0;
    }
    return Bt_ * (mat_exp(At_, -t) * eta0);
  }

  double horizon() const { return grid_.t1; }

 private:
  Mat At_;
  Mat Bt_;
  ode::TimeGrid grid_;
  std::vector<double> nodes_;
  std::vector<Mat> basis_;
};

inline Vec channel_reference(const LinearSystem& sys) {
  Vec ref(sys.m());
  for (Eigen::Index j = 0; j < sys.m(); ++j) ref(j) = sys.B.col(j).norm();
  return ref;
}

inline BangBangPlan plan_from_adjoint(const LinearSystem& sys, const AdjointSwitching& sw, const Vec& eta0,
                                      const SwitchingOptions& opt) {
  auto sigma = [&](double t) { return sw(t, eta0); };
  return synthesize_bang_bang(sigma, channel_reference(sys) * eta0.norm(), sw.horizon(), opt);
}

}  // namespace detail

/// Extremal control for adjoint initial value eta0 on [0, T], the state it
/// drives from x0 and the adjoint, sampled at every switch and at most
/// T / opt.steps apart.
inline BangBangExtremal bang_bang_from_adjoint(const LinearSystem& sys, const Vec& x0, const Vec& eta0, double T,
                                               const SwitchingOptions& opt = {}) {
  sys.validate();
  if (!sys.has_unit_box()) throw ValidationError("bang_bang_from_adjoint: control bounds must be [-1, 1]");
  if (eta0.size() != sys.n() || x0.size() != sys.n()) throw ValidationError("bang_bang_from_adjoint: dimension mismatch");
  if (!(eta0.norm() > 0.0)) throw ValidationError("bang_bang_from_adjoint: eta0 must be non-zero");
  const detail::AdjointSwitching sw(sys, T, opt.steps);
  const auto plan = detail::plan_from_adjoint(sys, sw, eta0, opt);

  BangBangExtremal out;
  out.control = plan.control;
  out.bang_bang = BangBangControl::from_plan(plan, T);
  out.state = simulate(sys, x0, out.control, T, T / opt.steps);
  const Mat At = sys.A.transpose();
  out.adjoint.times = out.state.times;
  for (double t : out.state.times) out.adjoint.states.push_back(mat_exp(At, -t) * eta0);
  return out;
}

struct TminOptions {
  int angle_grid = 720;
  int time_grid = 500;
  /// Search horizon; <= 0 selects 4 pi (1 + |x0| + |x1|).
  double T_max = 0.0;
  /// Accepted endpoint error relative to (1 + |x1|).
  double tolerance = 1e-6;
  double newton_tol = 1e-15;
  int newton_max_iter = 50;
  int max_seeds = 200;
  SwitchingOptions switching;

  void validate() const {
    if (angle_grid < 8) throw ValidationError("tmin options: angle_grid must be >= 8");
    if (time_grid < 4) throw ValidationError("tmin options: time_grid must be >= 4");
    if (!(tolerance > 0.0) || !(newton_tol > 0.0)) throw ValidationError("tmin options: tolerances must be positive");
    if (newton_max_iter < 1 || max_seeds < 1) throw ValidationError("tmin options: iteration limits must be positive");
    switching.validate();
  }
};

namespace detail {

struct ShootingRoot {
  double theta;
  double T;
  double residual;
};

class LinearShooting {
 public:
  LinearShooting(const LinearSystem& sys, const Vec& x0, const Vec& x1, const TminOptions& opt)
      : sys_(sys), x0_(x0), x1_(x1), opt_(opt) {}

  static Vec direction(double theta) { return (Vec(2) << std::cos(theta), std::sin(theta)).finished(); }

  /// X_theta(T) - x1 with the extremal control generated on [0, T].
  Vec residual(double theta, double T) const {
    const AdjointSwitching sw(sys_, T, opt_.switching.steps);
    const auto plan = plan_from_adjoint(sys_, sw, direction(theta), opt_.switching);
    return simulate(sys_, x0_, plan.control, T).back() - x1_;
  }

  std::vector<double> switches(double theta, double T) const {
    const AdjointSwitching sw(sys_, T, opt_.switching.steps);
    return plan_from_adjoint(sys_, sw, direction(theta), opt_.switching).all_switch_times();
  }

  /// A root whose first or last arc is vanishingly short sits next to a
  /// tangency where the residual only decays quadratically. Push that switch
  /// out of [0, T] and re-solve; keep the result when it lands on the same
  /// time with fewer switches.
  ShootingRoot drop_vanishing_arc(const ShootingRoot& root, double T_cap) const {
    const auto sw = switches(root.theta, root.T);
    if (sw.empty()) return root;
    const double eps = 1e-4 * std::max(1.0, root.T);
    const bool head = sw.front() < eps;
    const bool tail = root.T - sw.back() < eps;
    if (!head && !tail) return root;
    constexpr double h = 1e-7;
    const auto plus = switches(root.theta + h, root.T);
    const auto minus = switches(root.theta - h, root.T);
    if (plus.size() != sw.size() || minus.size() != sw.size()) return root;
    const std::size_t idx = head ? 0 : sw.size() - 1;
    const double rate = (plus[idx] - minus[idx]) / (2.0 * h);
    if (!(std::abs(rate) > 0.0)) return root;
    const double shift = 2.0 * (head ? -sw.front() : root.T - sw.back()) / rate;
    // difference step small enough not to bring the switch back
    const double fd = std::clamp(0.1 * std::abs(shift), 1e-9, 1e-6);
    const auto alt = newton(root.theta + shift, root.T, T_cap, fd);
    if (!alt || std::abs(alt->T - root.T) > 1e-4 * std::max(1.0, root.T)) return root;
    if (switches(alt->theta, alt->T).size() >= sw.size() || alt->residual > std::max(root.residual, 1e-12 * (1.0 + x1_.norm())))
      return root;
    return *alt;
  }

  std::optional<ShootingRoot> newton(double theta, double T, double T_cap, double h = 1e-6) const {
    const double scale = 1.0 + x1_.norm();
    Vec r = residual(theta, T);
    for (int it = 0; it < opt_.newton_max_iter; ++it) {
      if (r.norm() <= opt_.newton_tol * scale) break;
      Mat J(2, 2);
      J.col(0) = (residual(theta + h, T) - residual(theta - h, T)) / (2.0 * h);
      J.col(1) = (residual(theta, T + h) - residual(theta, std::max(T - h, 0.5 * T))) /
                 (T + h - std::max(T - h, 0.5 * T));
      Eigen::JacobiSVD<Mat> svd(J, Eigen::ComputeFullU | Eigen::ComputeFullV);
      svd.setThreshold(1e-9);
      const Vec step = -svd.solve(r);
      bool improved = false;
      for (double lambda = 1.0; lambda > 1e-4; lambda *= 0.5) {
        const double th = theta + lambda * step(0);
        const double Tn = T + lambda * step(1);
        if (!(Tn > 0.0) || Tn > T_cap) continue;
        const Vec rn = residual(th, Tn);
        if (rn.norm() < r.norm()) {
          theta = th;
          T = Tn;
          r = rn;
          improved = true;
          break;
        }
      }
      if (!improved) break;
    }
    if (!(r.norm() <= opt_.tolerance * scale)) return std::nullopt;
    theta = std::fmod(theta, 2.0 * std::numbers::pi);
    if (theta < 0.0) theta += 2.0 * std::numbers::pi;
    return ShootingRoot{theta, T, r.norm()};
  }

 private:
  const LinearSystem& sys_;
  Vec x0_;
  Vec x1_;
  const TminOptions& opt_;
};

/// States x_theta(t_k) on a uniform time grid, following the extremal
/// control exactly across its switches.
inline std::vector<Vec> sample_extremal(const LinearSystem& sys, const Vec& x0, const BangBangPlan& plan, double dt,
                                        int samples, const StepMap& full) {
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(samples) + 1);
  out.push_back(x0);
  const auto& u = plan.control;
  Vec x = x0;
  std::size_t iv = 0;
  for (int k = 1; k <= samples; ++k) {
    double t = (k - 1) * dt;
    const double t_end = k * dt;
    while (iv + 1 < u.intervals() && u.breakpoints[iv + 1] <= t) ++iv;
    if (iv + 1 >= u.intervals() || u.breakpoints[iv + 1] >= t_end) {
      x = full.apply(x, u.values[iv]);
    } else {
      while (t < t_end) {
        const double stop = (iv + 1 < u.intervals()) ? std::min(u.breakpoints[iv + 1], t_end) : t_end;
        if (stop > t) x = step_map(sys, stop - t).apply(x, u.values[iv]);
        t = stop;
        if (t < t_end) ++iv;
      }
    }
    out.push_back(x);
  }
  return out;
}

}  // namespace detail

/// Minimum-time transfer x0 -> x1 for a planar system with unit-box controls.
/// Scans eta0 angles and horizons on a grid, refines every promising grid
/// minimum by damped Newton on (theta, T), and keeps the smallest T (then the
/// smallest theta).
inline TminSolution solve_tmin(const LinearSystem& sys, const Vec& x0, const Vec& x1, const TminOptions& opt = {}) {
  using std::numbers::pi;
  sys.validate();
  opt.validate();
  if (sys.n() != 2) throw ValidationError("solve_tmin: only planar systems (n = 2) are supported");
  if (!sys.has_unit_box()) throw ValidationError("solve_tmin: control bounds must be [-1, 1]");
  if (x0.size() != 2 || x1.size() != 2 || !x0.allFinite() || !x1.allFinite())
    throw ValidationError("solve_tmin: x0 and x1 must be finite 2-vectors");
  if (!is_controllable(sys)) throw ValidationError("solve_tmin: (A, B) is not controllable");

  TminSolution sol;
  if ((x0 - x1).norm() == 0.0) {
    sol.eta0 = Vec::Zero(2);
    sol.trajectory.push(0.0, x0);
    return sol;
  }

  const double T_max = opt.T_max > 0.0 ? opt.T_max : 4.0 * pi * (1.0 + x0.norm() + x1.norm());
  const int NA = opt.angle_grid;
  const int NT = opt.time_grid;
  const double dt = T_max / NT;
  const double dtheta = 2.0 * pi / NA;

  // Grid scan: curves[i][k] = x_{theta_i}(k dt).
  SwitchingOptions scan_opt = opt.switching;
  scan_opt.steps = std::max(opt.switching.steps, 4 * NT);
  const detail::AdjointSwitching scan_sw(sys, T_max, scan_opt.steps);
  const StepMap full = step_map(sys, dt);
  std::vector<std::vector<Vec>> curves(static_cast<std::size_t>(NA));
  for (int i = 0; i < NA; ++i) {
    const auto plan = detail::plan_from_adjoint(sys, scan_sw, detail::LinearShooting::direction(i * dtheta), scan_opt);
    curves[static_cast<std::size_t>(i)] = detail::sample_extremal(sys, x0, plan, dt, NT, full);
  }

  struct Seed {
    int i;
    int k;
    double dist;
  };
  std::vector<Seed> seeds;
  double closest = std::numeric_limits<double>::infinity();
  for (int i = 0; i < NA; ++i) {
    for (int k = 1; k <= NT; ++k) {
      const Vec& x = curves[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      const double d = (x - x1).norm();
      closest = std::min(closest, d);
      double spread = 0.0;
      bool is_min = true;
      for (int di = -1; di <= 1 && is_min; ++di) {
        for (int dk = -1; dk <= 1; ++dk) {
          if (di == 0 && dk == 0) continue;
          const int kk = k + dk;
          if (kk < 0 || kk > NT) continue;
          const int ii = (i + di + NA) % NA;
          const Vec& y = curves[static_cast<std::size_t>(ii)][static_cast<std::size_t>(kk)];
          const double dy = (y - x1).norm();
          if (dy < d) {
            is_min = false;
            break;
          }
          spread = std::max(spread, (y - x).norm());
        }
      }
      if (is_min && d <= spread) seeds.push_back({i, k, d});
    }
  }
  // A family of extremals sharing one endpoint shows up as a run of equal
  // minima along theta; keep the first of each run.
  std::vector<Seed> distinct;
  std::vector<const Seed*> last_at_k(static_cast<std::size_t>(NT) + 1, nullptr);
  for (const auto& s : seeds) {
    const Seed*& p = last_at_k[static_cast<std::size_t>(s.k)];
    const bool same_run = p && s.i - p->i == 1 && std::abs(p->dist - s.dist) <= 1e-12 * (1.0 + s.dist);
    p = &s;
    if (!same_run) distinct.push_back(s);
  }
  seeds = std::move(distinct);
  std::stable_sort(seeds.begin(), seeds.end(), [](const Seed& a, const Seed& b) { return a.k < b.k; });

  const detail::LinearShooting shoot(sys, x0, x1, opt);
  std::vector<detail::ShootingRoot> roots;
  int tried = 0;
  for (const auto& s : seeds) {
    if (tried >= opt.max_seeds) break;
    if (!roots.empty()) {
      const double best_T = std::min_element(roots.begin(), roots.end(), [](auto& a, auto& b) { return a.T < b.T; })->T;
      if (s.k * dt > best_T + 2.0 * dt) break;
    }
    ++tried;
    auto root = shoot.newton(s.i * dtheta, s.k * dt, 1.1 * T_max);
    if (!root) {
      // Newton failed: refine the grid around the seed and retry from its best point.
      double best_d = std::numeric_limits<double>::infinity();
      double best_th = s.i * dtheta;
      double best_t = s.k * dt;
      for (int a = -10; a <= 10; ++a)
        for (int b = -10; b <= 10; ++b) {
          const double th = s.i * dtheta + a * dtheta / 10.0;
          const double t = s.k * dt + b * dt / 10.0;
          if (!(t > 0.0)) continue;
          const double d = shoot.residual(th, t).norm();
          if (d < best_d) best_d = d, best_th = th, best_t = t;
        }
      root = shoot.newton(best_th, best_t, 1.1 * T_max);
    }
    if (root) roots.push_back(shoot.drop_vanishing_arc(*root, 1.1 * T_max));
  }
  if (roots.empty())
    throw NumericalError("solve_tmin: target unreachable within horizon T_max = " + std::to_string(T_max) +
                         " (closest grid approach " + std::to_string(closest) + ")");

  std::sort(roots.begin(), roots.end(), [](const auto& a, const auto& b) {
    if (std::abs(a.T - b.T) > 1e-9 * std::max(1.0, a.T)) return a.T < b.T;
    return a.theta < b.theta;
  });
  const auto& best = roots.front();

  sol.T_star = best.T;
  sol.theta = best.theta;
  sol.eta0 = detail::LinearShooting::direction(best.theta);
  const auto ext = bang_bang_from_adjoint(sys, x0, sol.eta0, best.T, opt.switching);
  sol.control = ext.bang_bang;
  sol.trajectory = ext.state;
  sol.endpoint_error = (ext.state.back() - x1).norm();
  return sol;
}

enum class ProbeKind { ShiftSwitch, Truncate, FlipFinalArc };

struct ProbeResult {
  ProbeKind kind;
  int switch_index;  // -1 when not a switch shift
  double delta;
  double miss;  // |X_perturbed(T_end) - x1|
  bool passed;
};

struct ProbeReport {
  std::vector<ProbeResult> probes;
  std::vector<std::size_t> failures;

  bool passed() const { return failures.empty(); }
};

/// Perturbs a minimum-time solution and checks that no perturbation reaches
/// x1 sooner. Probes: each switch time shifted by +/- delta, the horizon
/// truncated by delta, and the sign of the last delta of control flipped.
/// A probe passes when the perturbed endpoint misses x1 by more than `tol`
/// or reaches it no earlier than T_star.
inline ProbeReport local_optimality_probe(const LinearSystem& sys, const TminSolution& sol, const Vec& x1, int n_probes,
                                          double delta = 1e-3, double tol = 1e-6) {
  ProbeReport report;
  if (!(sol.T_star > 0.0) || n_probes <= 0) return report;
  const Vec& x0 = sol.trajectory.states.front();
  const double T = sol.T_star;
  const auto& sw = sol.control.switch_times;

  struct Plan {
    ProbeKind kind;
    int index;
    double sign;
  };
  std::vector<Plan> plans;
  for (std::size_t i = 0; i < sw.size(); ++i) {
    plans.push_back({ProbeKind::ShiftSwitch, static_cast<int>(i), +1.0});
    plans.push_back({ProbeKind::ShiftSwitch, static_cast<int>(i), -1.0});
  }
  plans.push_back({ProbeKind::Truncate, -1, 1.0});
  plans.push_back({ProbeKind::FlipFinalArc, -1, 1.0});

  const ControlSignal base = sol.control.to_signal();
  for (int p = 0; p < n_probes && p < static_cast<int>(plans.size()); ++p) {
    const auto& plan = plans[static_cast<std::size_t>(p)];
    double t_end = T;
    ControlSignal u = base;
    if (plan.kind == ProbeKind::ShiftSwitch) {
      auto& bp = u.breakpoints[static_cast<std::size_t>(plan.index) + 1];
      const double lo = u.breakpoints[static_cast<std::size_t>(plan.index)];
      const double hi = u.breakpoints[static_cast<std::size_t>(plan.index) + 2];
      bp = std::clamp(bp + plan.sign * delta, lo + 0.5 * (bp - lo), hi - 0.5 * (hi - bp));
    } else if (plan.kind == ProbeKind::Truncate) {
      t_end = T - std::min(delta, 0.5 * T);
    } else if (delta > 0.0) {
      const double cut = T - std::min(delta, 0.5 * (T - u.breakpoints[u.breakpoints.size() - 2]));
      u.breakpoints.insert(u.breakpoints.end() - 1, cut);
      u.values.push_back(-u.values.back());
    }
    const auto traj = simulate(sys, x0, u, t_end, T / 400.0);
    const double miss = (traj.back() - x1).norm();
    bool early = false;
    for (std::size_t k = 0; k < traj.size(); ++k)
      if (traj.times[k] < T - 1e-9 * std::max(1.0, T) && (traj.states[k] - x1).norm() <= tol) early = true;
    const bool passed = !early && (miss > tol || t_end >= T);
    report.probes.push_back({plan.kind, plan.index, delta, miss, passed});
    if (!passed) report.failures.push_back(report.probes.size() - 1);
  }
  return report;
}

}  // namespace pmpkit
