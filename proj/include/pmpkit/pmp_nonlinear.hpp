#pragma once

// Nonlinear systems x' = f(x, u) with running cost f0(x, u): Hamiltonian and
// extremal equations, linearization of the input-output map E_T, extremal
// residual checks, and indirect shooting for the cubic spring
//   x'' + x + k2 x^3 = u,  |u| <= 1.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pmpkit/controllability.hpp"
#include "pmpkit/lin_sys.hpp"
#include "pmpkit/linear_tmin.hpp"
#include "pmpkit/ode.hpp"

namespace pmpkit {

enum class ProblemKind { FreeTime, FixedTime };

inline const char* to_string(ProblemKind k) { return k == ProblemKind::FreeTime ? "free-time" : "fixed-time"; }

struct ControlSystem {
  int n = 0;
  int m = 0;
  std::string name;
  std::function<Vec(const Vec&, const Vec&)> f;
  std::function<double(const Vec&, const Vec&)> f0;
  // Optional analytic derivatives; central differences are used when empty.
  std::function<Mat(const Vec&, const Vec&)> df_dx;
  std::function<Mat(const Vec&, const Vec&)> df_du;
  std::function<Vec(const Vec&, const Vec&)> df0_dx;
  std::function<Vec(const Vec&, const Vec&)> df0_du;
  /// Box per channel; nullopt means Omega = R^m.
  std::optional<std::vector<Interval>> omega;

  bool bounded() const { return omega.has_value(); }

  void validate() const {
    if (n < 1 || m < 1) throw ValidationError("control system: n and m must be positive");
    if (!f) throw ValidationError("control system: dynamics f missing");
    if (!f0) throw ValidationError("control system: running cost f0 missing");
    if (omega) {
      if (static_cast<int>(omega->size()) != m) throw ValidationError("control system: omega needs one interval per channel");
      for (const auto& iv : *omega)
        if (!(iv.lo < iv.hi)) throw ValidationError("control system: omega interval must have lo < hi");
    }
  }

  Vec dynamics(const Vec& x, const Vec& u) const {
    Vec out = f(x, u);
    if (out.size() != n) throw ValidationError("control system: f returned wrong dimension");
    if (!out.allFinite()) throw NumericalError("control system: f is not finite");
    return out;
  }

  double cost(const Vec& x, const Vec& u) const { return f0(x, u); }

  Mat jac_x(const Vec& x, const Vec& u) const {
    if (df_dx) return checked(df_dx(x, u), n, n, "df_dx");
    return central_jacobian([&](const Vec& z) { return f(z, u); }, x, n);
  }

  Mat jac_u(const Vec& x, const Vec& u) const {
    if (df_du) return checked(df_du(x, u), n, m, "df_du");
    return central_jacobian([&](const Vec& z) { return f(x, z); }, u, n);
  }

  Vec grad0_x(const Vec& x, const Vec& u) const {
    if (df0_dx) return checked(df0_dx(x, u), n, 1, "df0_dx");
    return central_jacobian([&](const Vec& z) { return Vec::Constant(1, f0(z, u)); }, x, 1).transpose();
  }

  Vec grad0_u(const Vec& x, const Vec& u) const {
    if (df0_du) return checked(df0_du(x, u), m, 1, "df0_du");
    return central_jacobian([&](const Vec& z) { return Vec::Constant(1, f0(x, z)); }, u, 1).transpose();
  }

  /// f = A x + B u, f0 = 1 (time-minimal), Omega from the system bounds.
  static ControlSystem from_linear(const LinearSystem& sys) {
    sys.validate();
    ControlSystem cs;
    cs.n = static_cast<int>(sys.n());
    cs.m = static_cast<int>(sys.m());
    cs.name = "linear";
    const Mat A = sys.A;
    const Mat B = sys.B;
    const auto n = sys.n();
    const auto m = sys.m();
    cs.f = [A, B](const Vec& x, const Vec& u) -> Vec { return A * x + B * u; };
    cs.f0 = [](const Vec&, const Vec&) { return 1.0; };
    cs.df_dx = [A](const Vec&, const Vec&) { return A; };
    cs.df_du = [B](const Vec&, const Vec&) { return B; };
    cs.df0_dx = [n](const Vec&, const Vec&) -> Vec { return Vec::Zero(n); };
    cs.df0_du = [m](const Vec&, const Vec&) -> Vec { return Vec::Zero(m); };
    cs.omega = sys.bounds;
    return cs;
  }

  static ControlSystem linear_oscillator() {
    auto cs = from_linear(LinearSystem::oscillator());
    cs.name = "linear_oscillator";
    return cs;
  }

 private:
  static Mat checked(Mat M, int r, int c, const char* what) {
    if (M.rows() != r || M.cols() != c)
      throw ValidationError(std::string("control system: ") + what + " has wrong dimensions");
    return M;
  }

  template <class F>
  static Mat central_jacobian(F&& g, const Vec& at, int rows) {
    Mat J(rows, at.size());
    Vec z = at;
    for (Eigen::Index j = 0; j < at.size(); ++j) {
      const double h = 1e-6 * (1.0 + std::abs(at(j)));
      z(j) = at(j) + h;
      const Vec gp = g(z);
      z(j) = at(j) - h;
      const Vec gm = g(z);
      z(j) = at(j);
      J.col(j) = (gp - gm) / (2.0 * h);
    }
    return J;
  }
};

/// Mass-spring with cubic stiffness: m x'' + k1 (x - l) + k2 (x - l)^3 = u.
struct SpringParams {
  double m_mass = 1.0;
  double k1 = 1.0;
  double k2 = 2.0;
  double l = 0.0;

  void validate() const {
    if (!(m_mass > 0.0) || !std::isfinite(m_mass)) throw ValidationError("spring: m_mass must be positive");
    if (!std::isfinite(k1) || !std::isfinite(k2) || !std::isfinite(l)) throw ValidationError("spring: parameters must be finite");
  }

  bool normalized() const { return m_mass == 1.0 && k1 == 1.0 && l == 0.0; }
};

/// State (x, y = x'), u in [-1, 1], f0 = 1.
inline ControlSystem spring_system(const SpringParams& prm) {
  prm.validate();
  ControlSystem cs;
  cs.n = 2;
  cs.m = 1;
  cs.name = "nonlinear_spring";
  cs.f = [prm](const Vec& x, const Vec& u) -> Vec {
    const double d = x(0) - prm.l;
    return (Vec(2) << x(1), (-prm.k1 * d - prm.k2 * d * d * d + u(0)) / prm.m_mass).finished();
  };
  cs.f0 = [](const Vec&, const Vec&) { return 1.0; };
  cs.df_dx = [prm](const Vec& x, const Vec&) -> Mat {
    const double d = x(0) - prm.l;
    return (Mat(2, 2) << 0.0, 1.0, (-prm.k1 - 3.0 * prm.k2 * d * d) / prm.m_mass, 0.0).finished();
  };
  cs.df_du = [prm](const Vec&, const Vec&) -> Mat { return (Mat(2, 1) << 0.0, 1.0 / prm.m_mass).finished(); };
  cs.df0_dx = [](const Vec&, const Vec&) -> Vec { return Vec::Zero(2); };
  cs.df0_du = [](const Vec&, const Vec&) -> Vec { return Vec::Zero(1); };
  cs.omega = std::vector<Interval>{Interval{-1.0, 1.0}};
  return cs;
}

inline ControlSystem nonlinear_spring(double k2) { return spring_system(SpringParams{1.0, 1.0, k2, 0.0}); }

/// H(x, p, p0, u) = <p, f(x, u)> + p0 f0(x, u).
inline double hamiltonian(const ControlSystem& sys, const Vec& x, const Vec& p, double p0, const Vec& u) {
  if (x.size() != sys.n || p.size() != sys.n || u.size() != sys.m) throw ValidationError("hamiltonian: dimension mismatch");
  return p.dot(sys.dynamics(x, u)) + p0 * sys.cost(x, u);
}

inline Vec hamiltonian_du(const ControlSystem& sys, const Vec& x, const Vec& p, double p0, const Vec& u) {
  return sys.jac_u(x, u).transpose() * p + p0 * sys.grad0_u(x, u);
}

struct ExtremalRhs {
  Vec xdot;
  Vec pdot;
};

/// x' = dH/dp = f, p' = -dH/dx = -(df/dx)^T p - p0 grad_x f0.
inline ExtremalRhs extremal_rhs(const ControlSystem& sys, const Vec& x, const Vec& p, double p0, const Vec& u) {
  if (x.size() != sys.n || p.size() != sys.n || u.size() != sys.m) throw ValidationError("extremal_rhs: dimension mismatch");
  return {sys.dynamics(x, u), -(sys.jac_x(x, u).transpose() * p) - p0 * sys.grad0_x(x, u)};
}

struct Extremal {
  Trajectory trajectory;  // x
  Trajectory adjoint;     // p, same times
  double p0 = -1.0;
  ControlSignal control;
  ProblemKind kind = ProblemKind::FreeTime;
};

/// Running-cost accumulation x^0' = f0 alongside x.
struct AugmentedState {
  Vec x;
  double x0_cost = 0.0;
};

/// Affine subspace base_point + span(tangent_basis).
struct BoundaryManifold {
  Vec base_point;
  std::vector<Vec> tangent_basis;

  static BoundaryManifold point(const Vec& x) { return {x, {}}; }

  static BoundaryManifold free(const Vec& x) {
    BoundaryManifold b{x, {}};
    for (Eigen::Index i = 0; i < x.size(); ++i) b.tangent_basis.push_back(Vec::Unit(x.size(), i));
    return b;
  }

  Mat basis_matrix() const {
    Mat T(base_point.size(), static_cast<Eigen::Index>(tangent_basis.size()));
    for (std::size_t i = 0; i < tangent_basis.size(); ++i) T.col(static_cast<Eigen::Index>(i)) = tangent_basis[i];
    return T;
  }

  void validate(Eigen::Index n) const {
    if (base_point.size() != n) throw ValidationError("boundary manifold: base point has wrong dimension");
    for (const auto& v : tangent_basis)
      if (v.size() != n) throw ValidationError("boundary manifold: tangent vector has wrong dimension");
    if (!tangent_basis.empty()) {
      Eigen::JacobiSVD<Mat> svd(basis_matrix());
      const auto s = svd.singularValues();
      if (!(s(s.size() - 1) > 1e-12 * s(0))) throw ValidationError("boundary manifold: tangent basis is not independent");
    }
  }

  double distance(const Vec& x) const {
    const Vec d = x - base_point;
    if (tangent_basis.empty()) return d.norm();
    const Mat T = basis_matrix();
    const Vec c = T.colPivHouseholderQr().solve(d);
    return (d - T * c).norm();
  }
};

namespace detail {

/// Sorted nodes covering [0, T]: a uniform grid plus every breakpoint inside.
inline std::vector<double> union_grid(double T, int steps, const std::vector<const ControlSignal*>& signals) {
  std::vector<double> nodes = ode::TimeGrid::uniform(0.0, T, steps).nodes();
  for (const auto* s : signals)
    for (double b : s->breakpoints)
      if (b > 0.0 && b < T) nodes.push_back(b);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return nodes;
}

inline void require_cover(const ControlSignal& u, double T, const char* who) {
  u.validate();
  if (u.t0() > 0.0 || u.t1() < T - 1e-12 * std::max(1.0, T))
    throw ValidationError(std::string(who) + ": control must be defined on [0, T]");
}

inline Vec pack(const Vec& x, const Mat& M) {
  Vec z(x.size() + M.size());
  z.head(x.size()) = x;
  z.tail(M.size()) = Eigen::Map<const Vec>(M.data(), M.size());
  return z;
}

inline Mat unpack_mat(const Vec& z, Eigen::Index n) { return Eigen::Map<const Mat>(z.data() + n, n, n); }

}  // namespace detail

/// Input-output map E_T(u) = x_u(T), RK4 on a uniform grid of `steps`
/// cells refined at the control breakpoints.
inline Vec input_output_map(const ControlSystem& sys, const ControlSignal& u, const Vec& x0, double T,
                            int steps = 2000) {
  sys.validate();
  if (!(T > 0.0) || !std::isfinite(T)) throw ValidationError("input_output_map: horizon must be positive");
  if (x0.size() != sys.n) throw ValidationError("input_output_map: x0 has wrong dimension");
  detail::require_cover(u, T, "input_output_map");
  const auto nodes = detail::union_grid(T, steps, {&u});
  Vec x = x0;
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const Vec& uk = u.value_at(nodes[k]);
    x = ode::rk4_step([&](double, const Vec& z) { return sys.dynamics(z, uk); }, nodes[k], x, nodes[k + 1] - nodes[k]);
  }
  return x;
}

struct LinearizedSystem {
  ControlSystem sys;
  ControlSignal u_ref;
  Vec x0;
  double T = 0.0;
  std::vector<double> times;
  std::vector<Vec> states;  // reference trajectory x_u
  std::vector<Mat> At;      // df/dx along the reference
  std::vector<Mat> Bt;      // df/du along the reference
  std::vector<Mat> M;       // M' = A(t) M, M(0) = I

  Trajectory trajectory() const { return Trajectory{times, states, {}}; }
};

/// Reference trajectory and fundamental matrix, integrated jointly by RK4 on
/// a uniform grid of `steps` cells refined at the control breakpoints.
inline LinearizedSystem linearize(const ControlSystem& sys, const ControlSignal& u_ref, const Vec& x0, double T,
                                  int steps = 2000) {
  sys.validate();
  if (!(T > 0.0) || !std::isfinite(T)) throw ValidationError("linearize: horizon must be positive");
  if (x0.size() != sys.n || !x0.allFinite()) throw ValidationError("linearize: x0 has wrong dimension");
  if (steps < 1) throw ValidationError("linearize: steps must be >= 1");
  detail::require_cover(u_ref, T, "linearize");
  if (u_ref.dim() != sys.m) throw ValidationError("linearize: control dimension mismatch");

  LinearizedSystem lin;
  lin.sys = sys;
  lin.u_ref = u_ref;
  lin.x0 = x0;
  lin.T = T;
  lin.times = detail::union_grid(T, steps, {&u_ref});
  const auto n = static_cast<Eigen::Index>(sys.n);

  Vec z = detail::pack(x0, Mat::Identity(n, n));
  for (std::size_t k = 0; k < lin.times.size(); ++k) {
    const double t = lin.times[k];
    const Vec x = z.head(n);
    const Vec& u = (k + 1 < lin.times.size()) ? u_ref.value_at(t) : u_ref.value_before(t);
    lin.states.push_back(x);
    lin.M.push_back(detail::unpack_mat(z, n));
    lin.At.push_back(sys.jac_x(x, u));
    lin.Bt.push_back(sys.jac_u(x, u));
    if (k + 1 == lin.times.size()) break;
    const Vec& uc = u_ref.value_at(t);
    auto rhs = [&](double, const Vec& w) -> Vec {
      const Vec xw = w.head(n);
      const Mat Mw = detail::unpack_mat(w, n);
      return detail::pack(sys.dynamics(xw, uc), sys.jac_x(xw, uc) * Mw);
    };
    try {
      z = ode::rk4_step(rhs, t, z, lin.times[k + 1] - t);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("linearize: reference trajectory blew up (") + e.what() + ")");
    }
  }
  return lin;
}

namespace detail {

inline std::vector<double> perturbation_grid(const LinearizedSystem& lin, const ControlSignal& v, double T) {
  if (!(T > 0.0) || T > lin.T * (1.0 + 1e-12)) throw ValidationError("io_differential: T must lie in (0, linearization horizon]");
  require_cover(v, T, "io_differential");
  if (v.dim() != lin.sys.m) throw ValidationError("io_differential: perturbation dimension mismatch");
  std::vector<double> nodes;
  for (double t : lin.times)
    if (t < T) nodes.push_back(t);
  nodes.push_back(T);
  for (double b : v.breakpoints)
    if (b > 0.0 && b < T) nodes.push_back(b);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return nodes;
}

/// Integrates (x, M) across one cell in two half steps and returns the
/// samples at the start, midpoint and end.
struct HalfStepSamples {
  Vec x[3];
  Mat M[3];
};

inline HalfStepSamples half_steps(const ControlSystem& sys, const Vec& x, const Mat& M, const Vec& u, double t, double h) {
  const auto n = x.size();
  auto rhs = [&](double, const Vec& w) -> Vec {
    const Vec xw = w.head(n);
    return pack(sys.dynamics(xw, u), sys.jac_x(xw, u) * unpack_mat(w, n));
  };
  HalfStepSamples s;
  s.x[0] = x;
  s.M[0] = M;
  Vec z = pack(x, M);
  for (int i = 1; i <= 2; ++i) {
    z = ode::rk4_step(rhs, t + (i - 1) * 0.5 * h, z, 0.5 * h);
    s.x[i] = z.head(n);
    s.M[i] = unpack_mat(z, n);
  }
  return s;
}

}  // namespace detail

/// dE_T(u) . v = y_v(T) with y' = A(t) y + B(t) v, y(0) = 0, integrated jointly
/// with the reference state.
inline Vec io_differential(const LinearizedSystem& lin, const ControlSignal& v, double T) {
  const auto nodes = detail::perturbation_grid(lin, v, T);
  const auto& sys = lin.sys;
  const auto n = static_cast<Eigen::Index>(sys.n);
  Vec z(2 * n);
  z.head(n) = lin.x0;
  z.tail(n).setZero();
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const Vec& u = lin.u_ref.value_at(nodes[k]);
    const Vec& dv = v.value_at(nodes[k]);
    auto rhs = [&](double, const Vec& w) -> Vec {
      const Vec x = w.head(n);
      Vec out(2 * n);
      out.head(n) = sys.dynamics(x, u);
      out.tail(n) = sys.jac_x(x, u) * w.tail(n) + sys.jac_u(x, u) * dv;
      return out;
    };
    z = ode::rk4_step(rhs, nodes[k], z, nodes[k + 1] - nodes[k]);
  }
  return z.tail(n);
}

/// Same quantity from y_v(T) = M(T) int_0^T M(s)^{-1} B(s) v(s) ds, with
/// Simpson's rule on every cell.
inline Vec io_differential_fundamental(const LinearizedSystem& lin, const ControlSignal& v, double T) {
  const auto nodes = detail::perturbation_grid(lin, v, T);
  const auto& sys = lin.sys;
  const auto n = static_cast<Eigen::Index>(sys.n);
  Vec x = lin.x0;
  Mat M = Mat::Identity(n, n);
  Vec acc = Vec::Zero(n);
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const double h = nodes[k + 1] - nodes[k];
    const Vec& u = lin.u_ref.value_at(nodes[k]);
    const Vec& dv = v.value_at(nodes[k]);
    const auto s = detail::half_steps(sys, x, M, u, nodes[k], h);
    Vec g[3];
    for (int i = 0; i < 3; ++i) g[i] = s.M[i].partialPivLu().solve(sys.jac_u(s.x[i], u) * dv);
    acc += (h / 6.0) * (g[0] + 4.0 * g[1] + g[2]);
    x = s.x[2];
    M = s.M[2];
  }
  return M * acc;
}

struct SingularityReport {
  bool regular = false;
  int rank = 0;
  Vec eigenvalues;  // of the Gramian, non-increasing
  Mat W;
};

/// Linearized Gramian W = int_0^T Phi(T,s) B(s) B(s)^T Phi(T,s)^T ds with
/// Phi(T,s) = M(T) M(s)^{-1}. dE_T(u) is onto iff W is positive definite.
inline SingularityReport singularity_test(const LinearizedSystem& lin, double T, double tol = 1e-10) {
  if (!(T > 0.0) || T > lin.T * (1.0 + 1e-12)) throw ValidationError("singularity_test: T must lie in (0, linearization horizon]");
  if (!(tol >= 0.0)) throw ValidationError("singularity_test: tol must be non-negative");
  std::vector<double> nodes;
  for (double t : lin.times)
    if (t < T) nodes.push_back(t);
  nodes.push_back(T);
  const auto& sys = lin.sys;
  const auto n = static_cast<Eigen::Index>(sys.n);
  Vec x = lin.x0;
  Mat M = Mat::Identity(n, n);
  Mat S = Mat::Zero(n, n);
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const double h = nodes[k + 1] - nodes[k];
    const Vec& u = lin.u_ref.value_at(nodes[k]);
    const auto s = detail::half_steps(sys, x, M, u, nodes[k], h);
    Mat G[3];
    for (int i = 0; i < 3; ++i) {
      const Mat Gi = s.M[i].partialPivLu().solve(sys.jac_u(s.x[i], u));
      G[i] = Gi * Gi.transpose();
    }
    S += (h / 6.0) * (G[0] + 4.0 * G[1] + G[2]);
    x = s.x[2];
    M = s.M[2];
  }
  SingularityReport rep;
  rep.W = M * S * M.transpose();
  rep.W = 0.5 * (rep.W + rep.W.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(rep.W);
  rep.eigenvalues = es.eigenvalues().reverse();
  const double top = rep.eigenvalues.size() ? std::max(rep.eigenvalues(0), 0.0) : 0.0;
  for (Eigen::Index i = 0; i < rep.eigenvalues.size(); ++i)
    if (rep.eigenvalues(i) > tol * top && top > 0.0) ++rep.rank;
  rep.regular = rep.rank == n;
  return rep;
}

/// Kalman test of the linearization at the equilibrium (0, 0).
inline bool local_controllability(const ControlSystem& sys) {
  sys.validate();
  const Vec x = Vec::Zero(sys.n);
  const Vec u = Vec::Zero(sys.m);
  const double residual = sys.dynamics(x, u).norm();
  if (residual > 1e-12)
    throw ValidationError("local_controllability: (0, 0) is not an equilibrium, |f(0, 0)| = " + std::to_string(residual));
  return is_controllable(LinearSystem{sys.jac_x(x, u), sys.jac_u(x, u), std::nullopt});
}

struct ExtremalCheckOptions {
  /// RK4 substeps used to re-integrate each sample interval.
  int substeps = 4;
  /// Subintervals per channel scanned for interior stationary points of H.
  int brackets = 16;
  double nontriviality_floor = 1e-8;

  void validate() const {
    if (substeps < 1 || brackets < 1) throw ValidationError("check_extremal: substeps and brackets must be >= 1");
  }
};

struct ExtremalReport {
  ProblemKind kind = ProblemKind::FreeTime;
  /// (a) max over sample intervals of |re-integrated - sampled| / interval length.
  double ode_state = 0.0;
  double ode_adjoint = 0.0;
  /// (b) max_t [max_v H - H(u(t))]; absent for unbounded Omega.
  std::optional<double> max_condition;
  /// (c) max_t |max_v H| (free time) or max_t |max_v H - median| (fixed time).
  double hamiltonian = 0.0;
  /// (d) max_t |dH/du|; only for unbounded Omega.
  std::optional<double> stationarity;
  /// (e) |<p(0), tangent>| and |<p(T), tangent>|, worst over the basis.
  double transversality_initial = 0.0;
  double transversality_final = 0.0;
  /// Endpoint distances from the boundary manifolds.
  double boundary_initial = 0.0;
  double boundary_final = 0.0;
  /// (f) min_t |(p(t), p0)|.
  double nontriviality_margin = 0.0;
  /// (g)
  bool abnormal = false;
  std::string note;
  double nontriviality_floor = 1e-8;

  double worst_residual() const {
    double w = std::max({ode_state, ode_adjoint, hamiltonian, transversality_initial, transversality_final,
                         boundary_initial, boundary_final});
    if (max_condition) w = std::max(w, *max_condition);
    if (stationarity) w = std::max(w, *stationarity);
    return w;
  }

  bool passed(double tol = 1e-6) const {
    return worst_residual() <= tol && nontriviality_margin >= nontriviality_floor;
  }
};

namespace detail {

inline void box_vertices(const std::vector<Interval>& box, std::vector<Vec>& out) {
  const auto m = box.size();
  if (m > 16) throw ValidationError("check_extremal: too many control channels for vertex enumeration");
  for (std::size_t mask = 0; mask < (std::size_t{1} << m); ++mask) {
    Vec v(static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) v(static_cast<Eigen::Index>(j)) = (mask >> j & 1U) ? box[j].hi : box[j].lo;
    out.push_back(v);
  }
}

/// max over box vertices and over stationary points of H found by scanning
/// each channel (others held at a vertex) for sign changes of dH/du_j.
inline double max_hamiltonian(const ControlSystem& sys, const Vec& x, const Vec& p, double p0, const Vec& u,
                              int brackets) {
  std::vector<Vec> vertices;
  box_vertices(*sys.omega, vertices);
  double best = hamiltonian(sys, x, p, p0, u);
  for (const auto& v : vertices) {
    best = std::max(best, hamiltonian(sys, x, p, p0, v));
    for (int j = 0; j < sys.m; ++j) {
      const auto& iv = (*sys.omega)[static_cast<std::size_t>(j)];
      Vec w = v;
      auto slope = [&](double s) {
        w(j) = s;
        return hamiltonian_du(sys, x, p, p0, w)(j);
      };
      double a = iv.lo;
      double ga = slope(a);
      for (int b = 1; b <= brackets; ++b) {
        const double c = iv.lo + (iv.hi - iv.lo) * b / brackets;
        const double gc = slope(c);
        if (ga > 0.0 && gc < 0.0) {
          double lo = a;
          double hi = c;
          for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            (slope(mid) > 0.0 ? lo : hi) = mid;
          }
          w(j) = 0.5 * (lo + hi);
          best = std::max(best, hamiltonian(sys, x, p, p0, w));
        }
        a = c;
        ga = gc;
      }
    }
  }
  return best;
}

}  // namespace detail

/// Residuals of the maximum principle along a sampled extremal.
inline ExtremalReport check_extremal(const ControlSystem& sys, const Extremal& ext, const BoundaryManifold& m0,
                                     const BoundaryManifold& m1, const ExtremalCheckOptions& opt = {}) {
  sys.validate();
  opt.validate();
  const auto& tr = ext.trajectory;
  const auto& ad = ext.adjoint;
  tr.validate();
  ad.validate();
  if (tr.times != ad.times) throw ValidationError("check_extremal: trajectory and adjoint grids differ");
  if (tr.empty()) throw ValidationError("check_extremal: empty extremal");
  for (std::size_t k = 0; k < tr.size(); ++k)
    if (tr.states[k].size() != sys.n || ad.states[k].size() != sys.n)
      throw ValidationError("check_extremal: sample " + std::to_string(k) + " has wrong dimension");
  const double t_first = tr.times.front();
  const double t_last = tr.times.back();
  if (!ext.control.empty()) {
    ext.control.validate();
    if (ext.control.t0() > t_first || ext.control.t1() < t_last)
      throw ValidationError("check_extremal: control does not cover the trajectory grid");
    if (ext.control.dim() != sys.m) throw ValidationError("check_extremal: control dimension mismatch");
  } else if (tr.size() > 1) {
    throw ValidationError("check_extremal: control missing");
  }
  m0.validate(sys.n);
  m1.validate(sys.n);

  ExtremalReport rep;
  rep.kind = ext.kind;
  rep.nontriviality_floor = opt.nontriviality_floor;
  const double p0 = ext.p0;
  const auto n = static_cast<Eigen::Index>(sys.n);

  // (a)
  const double spacing = tr.size() > 1 ? (t_last - t_first) / static_cast<double>(tr.size() - 1) : 1.0;
  for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
    const double a = tr.times[k];
    const double b = tr.times[k + 1];
    if (!(b > a)) continue;
    std::vector<double> cuts{a};
    for (double c : ext.control.breakpoints)
      if (c > a && c < b) cuts.push_back(c);
    cuts.push_back(b);
    Vec z(2 * n);
    z.head(n) = tr.states[k];
    z.tail(n) = ad.states[k];
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      const Vec& u = ext.control.value_at(cuts[c]);
      auto rhs = [&](double, const Vec& w) -> Vec {
        const auto r = extremal_rhs(sys, w.head(n), w.tail(n), p0, u);
        Vec out(2 * n);
        out << r.xdot, r.pdot;
        return out;
      };
      const double h = (cuts[c + 1] - cuts[c]) / opt.substeps;
      for (int s = 0; s < opt.substeps; ++s) z = ode::rk4_step(rhs, cuts[c] + s * h, z, h);
    }
    const double scale = std::max(b - a, spacing);
    rep.ode_state = std::max(rep.ode_state, (z.head(n) - tr.states[k + 1]).lpNorm<Eigen::Infinity>() / scale);
    rep.ode_adjoint = std::max(rep.ode_adjoint, (z.tail(n) - ad.states[k + 1]).lpNorm<Eigen::Infinity>() / scale);
  }

  // (b), (c), (d), (f)
  std::vector<double> hmax;
  hmax.reserve(tr.size());
  double worst_gap = 0.0;
  double worst_stat = 0.0;
  rep.nontriviality_margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const Vec& x = tr.states[k];
    const Vec& p = ad.states[k];
    rep.nontriviality_margin = std::min(rep.nontriviality_margin, std::sqrt(p.squaredNorm() + p0 * p0));
    if (ext.control.empty()) {
      hmax.push_back(0.0);
      continue;
    }
    const Vec& u = (k + 1 < tr.size() || tr.times[k] < ext.control.t1()) ? ext.control.value_at(tr.times[k])
                                                                         : ext.control.value_before(tr.times[k]);
    const double h_u = hamiltonian(sys, x, p, p0, u);
    if (sys.bounded()) {
      const double best = detail::max_hamiltonian(sys, x, p, p0, u, opt.brackets);
      worst_gap = std::max(worst_gap, best - h_u);
      hmax.push_back(best);
    } else {
      worst_stat = std::max(worst_stat, hamiltonian_du(sys, x, p, p0, u).norm());
      hmax.push_back(h_u);
    }
  }
  if (sys.bounded())
    rep.max_condition = worst_gap;
  else
    rep.stationarity = worst_stat;
  if (ext.kind == ProblemKind::FreeTime) {
    for (double h : hmax) rep.hamiltonian = std::max(rep.hamiltonian, std::abs(h));
  } else {
    std::vector<double> sorted = hmax;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    const double median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    for (double h : hmax) rep.hamiltonian = std::max(rep.hamiltonian, std::abs(h - median));
  }

  // (e)
  for (const auto& v : m0.tangent_basis)
    rep.transversality_initial = std::max(rep.transversality_initial, std::abs(ad.states.front().dot(v.normalized())));
  for (const auto& v : m1.tangent_basis)
    rep.transversality_final = std::max(rep.transversality_final, std::abs(ad.states.back().dot(v.normalized())));
  rep.boundary_initial = m0.distance(tr.states.front());
  rep.boundary_final = m1.distance(tr.states.back());

  // (g)
  rep.abnormal = p0 == 0.0;
  if (rep.abnormal) rep.note = "abnormal extremal (p0 = 0): the cost drops out of the Hamiltonian";
  if (rep.nontriviality_margin < opt.nontriviality_floor) {
    if (!rep.note.empty()) rep.note += "; ";
    rep.note += "trivial multiplier: (p, p0) vanishes";
  }
  return rep;
}

/// Time-optimal extremal of a planar linear system with f0 = 1, built from a
/// minimum-time solution. p(t) = e^{-t A^T} eta0 / h with
/// h = <eta0, A x0 + B u(0)> so that max_v H = 0; h <= 0 gives the abnormal
/// normalisation p0 = 0, p = eta.
inline Extremal linear_tmin_extremal(const LinearSystem& sys, const TminSolution& sol) {
  if (!(sol.T_star > 0.0)) throw ValidationError("linear_tmin_extremal: solution has zero duration");
  Extremal ext;
  ext.kind = ProblemKind::FreeTime;
  ext.trajectory = sol.trajectory;
  ext.control = sol.control.to_signal();
  const Vec& x0 = sol.trajectory.states.front();
  const double h = sol.eta0.dot(sys.A * x0 + sys.B * ext.control.values.front());
  const double scale = h > 0.0 ? 1.0 / h : 1.0;
  ext.p0 = h > 0.0 ? -1.0 : 0.0;
  const Mat At = sys.A.transpose();
  ext.adjoint.times = ext.trajectory.times;
  for (double t : ext.trajectory.times) ext.adjoint.states.push_back(scale * (mat_exp(At, -t) * sol.eta0));
  return ext;
}

struct ShootingOptions {
  int alpha_grid = 720;
  int time_steps = 4000;
  double T_max = 20.0;
  double newton_tol = 1e-10;
  int newton_max_iter = 50;
  /// Accepted state residual relative to (1 + |target|).
  double accept_tol = 1e-8;
  double localization_tolerance = 1e-10;
  std::size_t max_events = 10000;
  int max_seeds = 200;

  void validate() const {
    if (alpha_grid < 8) throw ValidationError("shooting options: alpha_grid must be >= 8");
    if (time_steps < 4) throw ValidationError("shooting options: time_steps must be >= 4");
    if (!(T_max > 0.0) || !std::isfinite(T_max)) throw ValidationError("shooting options: T_max must be positive");
    if (!(newton_tol > 0.0) || !(accept_tol > 0.0)) throw ValidationError("shooting options: tolerances must be positive");
    if (newton_max_iter < 1 || max_seeds < 1) throw ValidationError("shooting options: iteration limits must be positive");
    if (!(localization_tolerance > 0.0 && localization_tolerance < 1.0))
      throw ValidationError("shooting options: localization_tolerance must lie in (0, 1)");
  }
};

struct SpringShootResult {
  double T_star = 0.0;
  double alpha = 0.0;
  std::vector<double> switch_times;  // forward time
  double endpoint_error = 0.0;
  double p0 = -1.0;
  bool abnormal = false;
  Extremal extremal;
  ExtremalReport report;
};

namespace detail {

/// Backward-time extremal flow of the normalized spring. z = (x, y, p_y, p_x)
/// starts at the origin with (p_y, p_x) = (cos alpha, sin alpha) and obeys
///   x' = -y, y' = x + k2 x^3 - sign(p_y), p_y' = p_x, p_x' = -p_y (1 + 3 k2 x^2).
class SpringBackwardFlow {
 public:
  SpringBackwardFlow(double k2, const ShootingOptions& opt) : k2_(k2), opt_(opt), h0_(opt.T_max / opt.time_steps) {}

  Vec rhs(const Vec& z, int mode) const {
    const double x = z(0);
    Vec out(4);
    out << -z(1), x + k2_ * x * x * x - mode, z(3), -z(2) * (1.0 + 3.0 * k2_ * x * x);
    return out;
  }

  ode::EventResult run(double alpha, double s) const {
    const Vec z0 = (Vec(4) << 0.0, 0.0, std::cos(alpha), std::sin(alpha)).finished();
    ode::TimeGrid grid{0.0, s, std::min(h0_, s)};
    ode::EventSpec ev;
    ev.switching_function = [](double, const Vec& z) { return z(2); };
    ev.localization_tolerance = opt_.localization_tolerance;
    ev.max_events = opt_.max_events;
    return ode::integrate_with_events([this](double, const Vec& z, int mode) { return rhs(z, mode); }, grid, z0, ev);
  }

  double step() const { return h0_; }

 private:
  double k2_;
  const ShootingOptions& opt_;
  double h0_;
};

}  // namespace detail

/// Minimum-time steering of x'' + x + k2 x^3 = u, |u| <= 1, from `target`
/// (position, velocity) to rest at the origin. Extremals are generated
/// backward from the origin for every terminal adjoint angle alpha; the
/// first backward time at which one of them meets the target is the minimum
/// time. Grid minima over (alpha, s) are refined by damped Newton.
inline SpringShootResult spring_tmin_shoot(const SpringParams& params, const Vec& target,
                                           const ShootingOptions& opt = {}) {
  using std::numbers::pi;
  params.validate();
  opt.validate();
  if (!params.normalized()) throw ValidationError("spring_tmin_shoot: parameters must be normalized (m = 1, k1 = 1, l = 0)");
  if (!(params.k2 >= 0.0)) throw ValidationError("spring_tmin_shoot: k2 must be non-negative");
  if (target.size() != 2 || !target.allFinite()) throw ValidationError("spring_tmin_shoot: target must be a finite 2-vector");

  const ControlSystem sys = spring_system(params);
  SpringShootResult res;
  if (target.norm() == 0.0) {
    res.extremal.trajectory.push(0.0, target);
    res.extremal.adjoint.push(0.0, Vec::Zero(2));
    return res;
  }

  const detail::SpringBackwardFlow flow(params.k2, opt);
  const int NA = opt.alpha_grid;
  const int NT = opt.time_steps;
  const double dalpha = 2.0 * pi / NA;
  const double dt = flow.step();
  const auto nodes = ode::TimeGrid::uniform(0.0, opt.T_max, NT).nodes();

  // Scan: positions on the uniform grid, flat storage [i][k][2].
  std::vector<double> pos(static_cast<std::size_t>(NA) * (NT + 1) * 2);
  auto at = [&](int i, int k) { return &pos[(static_cast<std::size_t>(i) * (NT + 1) + k) * 2]; };
  for (int i = 0; i < NA; ++i) {
    const auto run = flow.run(i * dalpha, opt.T_max);
    int k = 0;
    for (std::size_t s = 0; s < run.trajectory.size() && k <= NT; ++s) {
      if (run.trajectory.times[s] != nodes[static_cast<std::size_t>(k)]) continue;
      at(i, k)[0] = run.trajectory.states[s](0);
      at(i, k)[1] = run.trajectory.states[s](1);
      ++k;
    }
  }

  struct Seed {
    int i;
    int k;
    double dist;
  };
  std::vector<Seed> seeds;
  double closest = std::numeric_limits<double>::infinity();
  double closest_alpha = 0.0;
  double closest_s = 0.0;
  auto dist_to = [&](int i, int k) { return std::hypot(at(i, k)[0] - target(0), at(i, k)[1] - target(1)); };
  for (int i = 0; i < NA; ++i) {
    for (int k = 1; k <= NT; ++k) {
      const double d = dist_to(i, k);
      if (d < closest) closest = d, closest_alpha = i * dalpha, closest_s = k * dt;
      double spread = 0.0;
      bool is_min = true;
      for (int di = -1; di <= 1 && is_min; ++di) {
        for (int dk = -1; dk <= 1; ++dk) {
          if (di == 0 && dk == 0) continue;
          const int kk = k + dk;
          if (kk < 0 || kk > NT) continue;
          const int ii = (i + di + NA) % NA;
          if (dist_to(ii, kk) < d) {
            is_min = false;
            break;
          }
          spread = std::max(spread, std::hypot(at(ii, kk)[0] - at(i, k)[0], at(ii, kk)[1] - at(i, k)[1]));
        }
      }
      if (is_min && d <= spread) seeds.push_back({i, k, d});
    }
  }
  std::vector<Seed> distinct;
  std::vector<const Seed*> last_at_k(static_cast<std::size_t>(NT) + 1, nullptr);
  for (const auto& s : seeds) {
    const Seed*& p = last_at_k[static_cast<std::size_t>(s.k)];
    const bool same_run = p && s.i - p->i == 1 && std::abs(p->dist - s.dist) <= 1e-12 * (1.0 + s.dist);
    p = &s;
    if (!same_run) distinct.push_back(s);
  }
  std::stable_sort(distinct.begin(), distinct.end(), [](const Seed& a, const Seed& b) { return a.k < b.k; });

  const double scale = 1.0 + target.norm();
  auto residual = [&](double alpha, double s, Vec* velocity) -> Vec {
    const auto run = flow.run(alpha, s);
    const Vec& z = run.trajectory.back();
    if (velocity) *velocity = flow.rhs(z, run.modes.back()).head(2);
    return z.head(2) - target;
  };
  struct Root {
    double alpha;
    double s;
    double r;
  };
  auto newton = [&](double alpha, double s) -> std::optional<Root> {
    Vec vel;
    Vec r = residual(alpha, s, &vel);
    for (int it = 0; it < opt.newton_max_iter && r.norm() > opt.newton_tol * scale; ++it) {
      constexpr double h = 1e-7;
      Mat J(2, 2);
      J.col(0) = (residual(alpha + h, s, nullptr) - residual(alpha - h, s, nullptr)) / (2.0 * h);
      J.col(1) = vel;
      Eigen::JacobiSVD<Mat> svd(J, Eigen::ComputeFullU | Eigen::ComputeFullV);
      svd.setThreshold(1e-9);
      const Vec step = -svd.solve(r);
      bool improved = false;
      for (double lambda = 1.0; lambda > 1e-4; lambda *= 0.5) {
        const double a = alpha + lambda * step(0);
        const double sn = s + lambda * step(1);
        if (!(sn > 0.0) || sn > 1.1 * opt.T_max) continue;
        Vec vn;
        const Vec rn = residual(a, sn, &vn);
        if (rn.norm() < r.norm()) {
          alpha = a;
          s = sn;
          r = rn;
          vel = vn;
          improved = true;
          break;
        }
      }
      if (!improved) break;
    }
    if (!(r.norm() <= opt.accept_tol * scale)) return std::nullopt;
    alpha = std::fmod(alpha, 2.0 * pi);
    if (alpha < 0.0) alpha += 2.0 * pi;
    return Root{alpha, s, r.norm()};
  };

  std::vector<Root> roots;
  int tried = 0;
  for (const auto& sd : distinct) {
    if (tried >= opt.max_seeds) break;
    if (!roots.empty()) {
      double best = roots.front().s;
      for (const auto& r : roots) best = std::min(best, r.s);
      if (sd.k * dt > best + 2.0 * dt) break;
    }
    ++tried;
    auto root = newton(sd.i * dalpha, sd.k * dt);
    if (!root) {
      double best_d = std::numeric_limits<double>::infinity();
      double ba = sd.i * dalpha;
      double bs = sd.k * dt;
      for (int a = -10; a <= 10; ++a)
        for (int b = -10; b <= 10; ++b) {
          const double al = sd.i * dalpha + a * dalpha / 10.0;
          const double s = sd.k * dt + b * dt / 10.0;
          if (!(s > 0.0)) continue;
          const double d = residual(al, s, nullptr).norm();
          if (d < best_d) best_d = d, ba = al, bs = s;
        }
      root = newton(ba, bs);
    }
    if (root) roots.push_back(*root);
  }
  if (roots.empty())
    throw NumericalError("spring_tmin_shoot: target not reached within horizon T_max = " + std::to_string(opt.T_max) +
                         " (closest approach " + std::to_string(closest) + " at alpha = " + std::to_string(closest_alpha) +
                         ", t = " + std::to_string(closest_s) + ")");
  std::sort(roots.begin(), roots.end(), [](const Root& a, const Root& b) {
    if (std::abs(a.s - b.s) > 1e-9 * std::max(1.0, a.s)) return a.s < b.s;
    return a.alpha < b.alpha;
  });
  const Root best = roots.front();

  // Forward-time extremal: t = T - s.
  const auto run = flow.run(best.alpha, best.s);
  const double T = best.s;
  res.T_star = T;
  res.alpha = best.alpha;
  res.endpoint_error = (run.trajectory.back().head(2) - target).norm();
  const double c = std::abs(std::cos(best.alpha));
  res.abnormal = !(c > 0.0);
  res.p0 = res.abnormal ? 0.0 : -1.0;
  const double pscale = res.abnormal ? 1.0 : 1.0 / c;

  auto& ext = res.extremal;
  ext.kind = ProblemKind::FreeTime;
  ext.p0 = res.p0;
  const auto N = run.trajectory.size();
  for (std::size_t j = 0; j < N; ++j) {
    const std::size_t k = N - 1 - j;
    const Vec& z = run.trajectory.states[k];
    const double t = (k == N - 1) ? 0.0 : T - run.trajectory.times[k];
    ext.trajectory.push(t, z.head(2));
    ext.adjoint.push(t, (Vec(2) << z(3), z(2)).finished() * pscale);
  }
  std::vector<double> events;
  for (double e : run.event_times)
    if (e > 0.0 && e < T) events.push_back(e);
  ext.control.breakpoints.push_back(0.0);
  for (auto it = events.rbegin(); it != events.rend(); ++it) {
    ext.control.breakpoints.push_back(T - *it);
    res.switch_times.push_back(T - *it);
  }
  ext.control.breakpoints.push_back(T);
  for (std::size_t j = 0; j + 1 < ext.control.breakpoints.size(); ++j)
    ext.control.values.push_back(Vec::Constant(1, static_cast<double>(run.modes[events.size() - j])));

  res.report = check_extremal(sys, ext, BoundaryManifold::point(target), BoundaryManifold::point(Vec::Zero(2)));
  return res;
}

}  // namespace pmpkit
