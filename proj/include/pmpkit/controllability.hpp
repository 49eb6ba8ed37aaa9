#pragma once

// Kalman rank test and support-function description of the reachable set
// A(x0, T) of x' = A x + B u with u in [-1, 1]^m.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "pmpkit/detail/bang_bang.hpp"
#include "pmpkit/lin_sys.hpp"

namespace pmpkit {

struct KalmanMatrix {
  Mat C;  // (B | AB | ... | A^{n-1} B)
  int rank = 0;
  Vec singular_values;  // non-increasing
};

inline KalmanMatrix kalman_matrix(const LinearSystem& sys) {
  sys.validate();
  const auto n = sys.n();
  const auto m = sys.m();
  KalmanMatrix km;
  km.C.resize(n, n * m);
  km.C.leftCols(m) = sys.B;
  for (Eigen::Index k = 1; k < n; ++k) km.C.middleCols(k * m, m) = sys.A * km.C.middleCols((k - 1) * m, m);
  Eigen::JacobiSVD<Mat> svd(km.C);
  km.singular_values = svd.singularValues();
  const double sigma_max = km.singular_values.size() > 0 ? km.singular_values(0) : 0.0;
  const double tol = static_cast<double>(n) * sigma_max * 1e-12;
  for (Eigen::Index i = 0; i < km.singular_values.size(); ++i)
    if (km.singular_values(i) > tol) ++km.rank;
  return km;
}

inline bool is_controllable(const LinearSystem& sys) { return kalman_matrix(sys).rank == sys.n(); }

struct SupportResult {
  Vec point;     // X(T) under the extremal control
  double value;  // <eta_T, X(T)>
  ControlSignal control;
  std::vector<int> singular_channels;  // channels where <eta(t), b_j> vanished identically
};

/// Support point of A(x0, T) in direction eta_T. The adjoint runs backward
/// from eta(T) = eta_T, eta(t)^T = eta_T^T e^{(T-t)A}, and each channel
/// takes u_j(t) = sign <eta(t), b_j>. A channel whose switching function is
/// identically zero is reported and held at 0.
inline SupportResult reach_support(const LinearSystem& sys, const Vec& x0, double T, const Vec& eta_T,
                                   const SwitchingOptions& opt = {}) {
  sys.validate();
  if (!sys.has_unit_box()) throw ValidationError("reach_support: control bounds must be [-1, 1] on every channel");
  if (x0.size() != sys.n() || eta_T.size() != sys.n()) throw ValidationError("reach_support: dimension mismatch");
  if (!(T > 0.0)) throw ValidationError("reach_support: horizon must be positive");
  const double norm = eta_T.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw ValidationError("reach_support: direction must be non-zero");
  const Vec eta = eta_T / norm;

  const Mat At = sys.A.transpose();
  const Mat Bt = sys.B.transpose();
  auto sigma = [&](double t) -> Vec { return Bt * (mat_exp(At, T - t) * eta); };
  Vec reference(sys.m());
  for (Eigen::Index j = 0; j < sys.m(); ++j) reference(j) = sys.B.col(j).norm() * std::max(1.0, mat_exp(At, T).norm());

  auto plan = detail::synthesize_bang_bang(sigma, reference, T, opt);
  SupportResult res;
  res.control = std::move(plan.control);
  res.singular_channels = plan.singular_channels();
  res.point = simulate(sys, x0, res.control, T).back();
  res.value = eta.dot(res.point);
  return res;
}

struct ReachHull {
  double horizon = 0.0;
  std::vector<Vec> directions;
  std::vector<Vec> support_points;
  std::vector<double> support_values;
  /// Directions (by index) in which some channel was singular.
  std::vector<int> degenerate_directions;

  std::size_t size() const { return directions.size(); }

  /// max_{i,j} <d_i, p_j> - v_i; non-positive (up to rounding) for a valid
  /// outer description.
  double certificate_violation() const {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < directions.size(); ++i)
      for (const auto& p : support_points) worst = std::max(worst, directions[i].dot(p) - support_values[i]);
    return worst;
  }

  /// Largest support-inequality violation of x (<= 0 when x is inside).
  double excess(const Vec& x) const {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < directions.size(); ++i) worst = std::max(worst, directions[i].dot(x) - support_values[i]);
    return worst;
  }

  bool contains(const Vec& x, double tol) const { return excess(x) <= tol; }
};

inline ReachHull reach_hull(const LinearSystem& sys, const Vec& x0, double T, const std::vector<Vec>& directions,
                            const SwitchingOptions& opt = {}) {
  if (directions.size() < 3) throw ValidationError("reach_hull: K >= 3 required");
  ReachHull hull;
  hull.horizon = T;
  for (std::size_t i = 0; i < directions.size(); ++i) {
    const auto& d = directions[i];
    if (d.size() != sys.n()) throw ValidationError("reach_hull: direction " + std::to_string(i) + " has wrong dimension");
    const double norm = d.norm();
    if (!(norm > 0.0)) throw ValidationError("reach_hull: direction " + std::to_string(i) + " is zero");
    const auto s = reach_support(sys, x0, T, d, opt);
    hull.directions.push_back(d / norm);
    hull.support_points.push_back(s.point);
    hull.support_values.push_back(s.value);
    if (!s.singular_channels.empty()) hull.degenerate_directions.push_back(static_cast<int>(i));
  }
  return hull;
}

/// Planar systems: K directions at uniform angles 2 pi k / K.
inline ReachHull reach_hull(const LinearSystem& sys, const Vec& x0, double T, int K, const SwitchingOptions& opt = {}) {
  if (K < 3) throw ValidationError("reach_hull: K >= 3 required");
  if (sys.n() != 2) throw ValidationError("reach_hull: uniform angular sampling needs n = 2; pass explicit directions");
  std::vector<Vec> dirs;
  dirs.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const double a = 2.0 * std::numbers::pi * k / K;
    dirs.push_back((Vec(2) << std::cos(a), std::sin(a)).finished());
  }
  return reach_hull(sys, x0, T, dirs, opt);
}

}  // namespace pmpkit
