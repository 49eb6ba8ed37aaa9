#pragma once

// Scenario runner behind the pmpkit command-line tool. A scenario is one JSON
// object with a "command" field; results go to <out>/<output_path>.json plus
// a CSV where the command produces sampled data.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pmpkit/controllability.hpp"
#include "pmpkit/io.hpp"
#include "pmpkit/lin_sys.hpp"
#include "pmpkit/linear_tmin.hpp"
#include "pmpkit/pmp_nonlinear.hpp"

namespace pmpkit::cli {

using io::Config;
using io::ConfigError;
using io::json;

enum ExitCode : int { kOk = 0, kInternal = 1, kValidation = 2, kNumerical = 3 };

struct RunOptions {
  std::filesystem::path out_dir = ".";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

struct Outcome {
  std::string summary;
  std::vector<std::filesystem::path> files;
};

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names = {"kalman",     "simulate",       "reach",    "tmin-linear",
                                                 "tmin-spring", "check-extremal", "linearize"};
  return names;
}

/// Column layout of each CSV, shown in --help.
inline std::string csv_columns_help() {
  return "CSV outputs (after two '#' header lines with version and resolved config):\n"
         "  simulate        <stem>_trajectory.csv  t,x1,...,xn\n"
         "  reach           <stem>_hull.csv        k,d1,...,dn,p1,...,pn,value\n"
         "  tmin-linear     <stem>_trajectory.csv  t,x1,x2,u\n"
         "  tmin-spring     <stem>_extremal.csv    t,x,y,p_x,p_y,u\n"
         "  check-extremal  <stem>_extremal.csv    t,x1,...,xn,p1,...,pn,u1,...,um\n"
         "  linearize       <stem>_linearized.csv  t,x1,...,xn,M11,M12,...,Mnn\n"
         "kalman writes JSON only.\n";
}

namespace detail {

inline LinearSystem read_linear(const Config& c) {
  if (c.has("name")) {
    const auto name = c.string("name");
    if (name == "linear_oscillator") return LinearSystem::oscillator();
    c.fail("name", "'" + name + "' is not a linear system (expected linear_oscillator or inline A, B)");
  }
  LinearSystem sys;
  sys.A = c.matrix("A");
  sys.B = c.matrix("B");
  if (sys.A.rows() != sys.A.cols()) c.fail("A", "must be square");
  if (sys.B.rows() != sys.A.rows()) c.fail("B", "must have as many rows as A");
  if (c.has("bounds")) {
    const auto& b = c.raw("bounds");
    if (!b.is_array()) c.fail("bounds", "expected an array of [lo, hi] pairs or null");
    std::vector<Interval> iv;
    for (std::size_t j = 0; j < b.size(); ++j) {
      const std::string at = c.at("bounds") + "/" + std::to_string(j);
      const Vec p = Config::to_vector(b[j], at, 2);
      if (!(p(0) < p(1))) throw ConfigError(at, "requires lo < hi");
      iv.push_back({p(0), p(1)});
    }
    if (static_cast<Eigen::Index>(iv.size()) != sys.B.cols()) c.fail("bounds", "need one interval per column of B");
    sys.bounds = iv;
  }
  try {
    sys.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(c.where(), e.what());
  }
  return sys;
}

inline SpringParams read_spring(const Config& c) {
  SpringParams p;
  p.m_mass = c.number("m_mass", 1.0);
  p.k1 = c.number("k1", 1.0);
  p.k2 = c.number("k2", 2.0);
  p.l = c.number("l", 0.0);
  if (!(p.m_mass > 0.0)) c.fail("m_mass", "must be positive");
  return p;
}

inline bool names_spring(const Config& c) { return c.has("name") && c.string("name") == "nonlinear_spring"; }

inline ControlSystem read_control_system(const Config& c) {
  if (names_spring(c)) return spring_system(read_spring(c));
  if (c.has("name") && c.string("name") != "linear_oscillator")
    c.fail("name", "unknown system '" + c.string("name") + "' (expected linear_oscillator or nonlinear_spring)");
  auto cs = ControlSystem::from_linear(read_linear(c));
  if (c.has("name")) cs.name = "linear_oscillator";
  return cs;
}

inline BoundaryManifold read_manifold(const Config& c, Eigen::Index n) {
  BoundaryManifold m;
  m.base_point = c.vector("base_point", n);
  if (c.has("tangent_basis")) {
    const auto& b = c.raw("tangent_basis");
    if (!b.is_array()) c.fail("tangent_basis", "expected an array of vectors");
    for (std::size_t i = 0; i < b.size(); ++i)
      m.tangent_basis.push_back(Config::to_vector(b[i], c.at("tangent_basis") + "/" + std::to_string(i), n));
  }
  try {
    m.validate(n);
  } catch (const ValidationError& e) {
    throw ConfigError(c.at("tangent_basis"), e.what());
  }
  return m;
}

inline int positive_int(const Config& c, const std::string& key, long long fallback) {
  const long long v = c.integer(key, fallback);
  if (v < 1 || v > 100000000) c.fail(key, "must be a positive integer");
  return static_cast<int>(v);
}

inline double positive(const Config& c, const std::string& key) {
  const double v = c.number(key);
  if (!(v > 0.0)) c.fail(key, "must be positive");
  return v;
}

inline double positive(const Config& c, const std::string& key, double fallback) {
  const double v = c.number(key, fallback);
  if (!(v > 0.0)) c.fail(key, "must be positive");
  return v;
}

inline std::string list(const Vec& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + io::fmt(v(i));
  return s;
}

/// Collects the files of one command; written only after the command succeeds
/// so that the resolved config in every header is complete.
struct Writer {
  std::filesystem::path dir;
  std::string stem;
  std::vector<std::pair<std::filesystem::path, std::string>> pending;

  void add(const std::string& suffix, std::string content) { pending.emplace_back(dir / (stem + suffix), std::move(content)); }

  std::vector<std::filesystem::path> flush() {
    std::vector<std::filesystem::path> out;
    for (auto& [path, text] : pending) {
      io::write_atomic(path, text);
      out.push_back(path);
    }
    return out;
  }
};

struct Context {
  const Config& cfg;
  json& meta;  // meta.config is the resolved config
  Writer& files;
  std::uint64_t seed;
};

inline std::string cmd_kalman(Context& ctx) {
  const auto sys = read_linear(ctx.cfg.child("system"));
  const auto km = kalman_matrix(sys);
  const bool ok = km.rank == sys.n();
  json result = {{"rank", km.rank},
                 {"n", sys.n()},
                 {"controllable", ok},
                 {"singular_values", io::to_json(km.singular_values)},
                 {"kalman_matrix", io::to_json(km.C)}};
  ctx.files.add(".json", io::json_document(ctx.meta, result));
  return "rank=" + std::to_string(km.rank) + " controllable=" + (ok ? "true" : "false");
}

inline std::string cmd_simulate(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto sys = read_linear(c.child("system"));
  const double T = positive(c, "T");
  const Vec x0 = c.vector("x0", sys.n());
  const auto u = io::read_control(c.child("control"), sys.m(), T);
  const double dt = positive(c, "sample_dt", T / 2000.0);
  Trajectory tr;
  try {
    tr = simulate(sys, x0, u, T, dt);
  } catch (const ValidationError& e) {
    throw ConfigError(c.at("control"), e.what());
  }
  std::vector<std::string> cols{"t"};
  for (auto& s : io::indexed("x", sys.n())) cols.push_back(s);
  io::CsvWriter csv(ctx.meta, cols);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    std::vector<double> row{tr.times[i]};
    for (Eigen::Index k = 0; k < sys.n(); ++k) row.push_back(tr.states[i](k));
    csv.row(row);
  }
  json result = {{"T", T}, {"x_T", io::to_json(tr.back())}, {"samples", tr.size()}};
  ctx.files.add(".json", io::json_document(ctx.meta, result));
  ctx.files.add("_trajectory.csv", csv.str());
  return "x_T=" + list(tr.back()) + " samples=" + std::to_string(tr.size());
}

/// Random admissible bang-bang control on [0, T]: up to max_intervals pieces,
/// each channel at -1 or +1.
inline ControlSignal random_bang_bang(std::mt19937_64& rng, Eigen::Index m, double T, int max_intervals) {
  std::uniform_int_distribution<int> count(1, max_intervals);
  std::uniform_real_distribution<double> when(0.0, T);
  std::bernoulli_distribution coin(0.5);
  const int k = count(rng);
  std::vector<double> cuts;
  for (int i = 1; i < k; ++i) cuts.push_back(when(rng));
  std::sort(cuts.begin(), cuts.end());
  ControlSignal u;
  u.breakpoints.push_back(0.0);
  for (double t : cuts)
    if (t > u.breakpoints.back() && t < T) u.breakpoints.push_back(t);
  u.breakpoints.push_back(T);
  for (std::size_t i = 0; i + 1 < u.breakpoints.size(); ++i) {
    Vec v(m);
    for (Eigen::Index j = 0; j < m; ++j) v(j) = coin(rng) ? 1.0 : -1.0;
    u.values.push_back(v);
  }
  return u;
}

inline std::string cmd_reach(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto sys = read_linear(c.child("system"));
  const auto n = sys.n();
  if (!sys.has_unit_box()) c.fail("system", "reachable hulls need bounds [-1, 1] on every channel");
  const double T = positive(c, "T");
  const Vec x0 = c.has("x0") ? c.vector("x0", n) : Vec::Zero(n);
  if (!c.has("x0")) ctx.meta["config"]["x0"] = io::to_json(x0);
  ReachHull hull;
  if (c.has("directions")) {
    const auto& d = c.raw("directions");
    if (!d.is_array() || d.size() < 3) c.fail("directions", "K >= 3 required");
    std::vector<Vec> dirs;
    for (std::size_t i = 0; i < d.size(); ++i) {
      Vec v = Config::to_vector(d[i], c.at("directions") + "/" + std::to_string(i), n);
      if (!(v.norm() > 0.0)) throw ConfigError(c.at("directions") + "/" + std::to_string(i), "direction must be non-zero");
      dirs.push_back(v.normalized());
    }
    hull = reach_hull(sys, x0, T, dirs);
  } else {
    const long long K = c.integer("K");
    if (K < 3) c.fail("K", "K >= 3 required");
    if (K > 100000) c.fail("K", "at most 100000 directions");
    if (n != 2) c.fail("K", "uniform directions need n = 2; give explicit directions otherwise");
    hull = reach_hull(sys, x0, T, static_cast<int>(K));
  }

  const int samples = static_cast<int>(c.integer("monte_carlo", 0));
  if (samples < 0) c.fail("monte_carlo", "must be non-negative");
  const int max_intervals = positive_int(c, "mc_intervals", 8);
  const double tol = positive(c, "tolerance", 1e-6);

  json mc = json::object();
  bool ok = hull.certificate_violation() <= 1e-8;
  if (samples > 0) {
    std::mt19937_64 rng(ctx.seed);
    double worst = -std::numeric_limits<double>::infinity();
    double worst_dominance = -std::numeric_limits<double>::infinity();
    double mean_excess = 0.0;
    for (int s = 0; s < samples; ++s) {
      const auto u = random_bang_bang(rng, sys.m(), T, max_intervals);
      const Vec x = simulate(sys, x0, u, T).back();
      const double e = hull.excess(x);
      worst = std::max(worst, e);
      mean_excess += e / samples;
      for (std::size_t i = 0; i < hull.size(); ++i)
        worst_dominance = std::max(worst_dominance, hull.directions[i].dot(x - hull.support_points[i]));
    }
    mc = {{"samples", samples}, {"seed", ctx.seed}, {"max_excess", worst}, {"mean_excess", mean_excess}, {"max_dominance_gap", worst_dominance}};
    ok = ok && worst <= tol && worst_dominance <= tol;
  }

  std::vector<std::string> cols{"k"};
  for (auto& s : io::indexed("d", n)) cols.push_back(s);
  for (auto& s : io::indexed("p", n)) cols.push_back(s);
  cols.push_back("value");
  io::CsvWriter csv(ctx.meta, cols);
  json dirs = json::array(), pts = json::array();
  for (std::size_t i = 0; i < hull.size(); ++i) {
    std::vector<double> row{static_cast<double>(i)};
    for (Eigen::Index k = 0; k < n; ++k) row.push_back(hull.directions[i](k));
    for (Eigen::Index k = 0; k < n; ++k) row.push_back(hull.support_points[i](k));
    row.push_back(hull.support_values[i]);
    csv.row(row);
    dirs.push_back(io::to_json(hull.directions[i]));
    pts.push_back(io::to_json(hull.support_points[i]));
  }
  json result = {{"T", T},
                 {"directions", dirs},
                 {"points", pts},
                 {"values", hull.support_values},
                 {"certificate_violation", hull.certificate_violation()},
                 {"degenerate_directions", hull.degenerate_directions},
                 {"monte_carlo", mc},
                 {"passed", ok}};
  ctx.files.add(".json", io::json_document(ctx.meta, result));
  ctx.files.add("_hull.csv", csv.str());
  std::string s = "K=" + std::to_string(hull.size()) + " certificate=" + io::fmt(hull.certificate_violation());
  if (samples > 0) s += " mc_max_excess=" + io::fmt(mc["max_excess"].get<double>());
  return s + " passed=" + (ok ? "true" : "false");
}

inline TminOptions read_tmin_options(const Config& c) {
  TminOptions o;
  o.angle_grid = positive_int(c, "angle_grid", o.angle_grid);
  o.time_grid = positive_int(c, "time_grid", o.time_grid);
  o.T_max = c.number("T_max", o.T_max);
  if (o.T_max < 0.0) c.fail("T_max", "must be non-negative (0 selects the automatic horizon)");
  o.tolerance = positive(c, "tolerance", o.tolerance);
  o.newton_max_iter = positive_int(c, "newton_max_iter", o.newton_max_iter);
  o.max_seeds = positive_int(c, "max_seeds", o.max_seeds);
  o.switching.localization_tolerance = positive(c, "localization_tolerance", o.switching.localization_tolerance);
  return o;
}

inline double control_at(const ControlSignal& u, double t, Eigen::Index j) {
  if (u.empty()) return 0.0;
  return (t >= u.t1() ? u.value_before(t) : u.value_at(t))(j);
}

inline std::string cmd_tmin_linear(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto sys = read_linear(c.child("system"));
  const Vec x0 = c.vector("x0", sys.n());
  const Vec x1 = c.vector("x1", sys.n());
  const auto opt = read_tmin_options(c);
  const int probes = static_cast<int>(c.integer("probes", 0));
  if (probes < 0) c.fail("probes", "must be non-negative");
  const auto sol = solve_tmin(sys, x0, x1, opt);
  const auto u = sol.control.to_signal();

  io::CsvWriter csv(ctx.meta, {"t", "x1", "x2", "u"});
  for (std::size_t i = 0; i < sol.trajectory.size(); ++i) {
    const double t = sol.trajectory.times[i];
    csv.row({t, sol.trajectory.states[i](0), sol.trajectory.states[i](1), control_at(u, t, 0)});
  }
  json result = {{"T", sol.T_star},
                 {"theta", sol.theta},
                 {"switch_times", sol.control.switch_times},
                 {"endpoint_error", sol.endpoint_error},
                 {"eta0", io::to_json(sol.eta0)},
                 {"initial_sign", sol.control.initial_sign_per_channel}};
  if (probes > 0 && sol.T_star > 0.0) {
    const auto rep = local_optimality_probe(sys, sol, x1, probes);
    result["probe"] = {{"count", rep.probes.size()}, {"failures", rep.failures}, {"passed", rep.passed()}};
  }
  ctx.files.add(".json", io::json_document(ctx.meta, result));
  ctx.files.add("_trajectory.csv", csv.str());
  return "T_star=" + io::fmt(sol.T_star) + " switches=" + std::to_string(sol.control.switch_times.size()) +
         " endpoint_error=" + io::fmt(sol.endpoint_error);
}

inline ShootingOptions read_shooting_options(const Config& c) {
  ShootingOptions o;
  o.alpha_grid = positive_int(c, "alpha_grid", o.alpha_grid);
  o.time_steps = positive_int(c, "time_steps", o.time_steps);
  o.T_max = positive(c, "T_max", o.T_max);
  o.newton_tol = positive(c, "newton_tol", o.newton_tol);
  o.newton_max_iter = positive_int(c, "newton_max_iter", o.newton_max_iter);
  o.accept_tol = positive(c, "accept_tol", o.accept_tol);
  o.localization_tolerance = positive(c, "localization_tolerance", o.localization_tolerance);
  o.max_events = positive_int(c, "max_events", o.max_events);
  o.max_seeds = positive_int(c, "max_seeds", o.max_seeds);
  try {
    o.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(c.where(), e.what());
  }
  return o;
}

inline json report_json(const ExtremalReport& r) {
  json j = {{"kind", to_string(r.kind)},
            {"ode_state", r.ode_state},
            {"ode_adjoint", r.ode_adjoint},
            {"max_condition", r.max_condition ? json(*r.max_condition) : json(nullptr)},
            {"hamiltonian", r.hamiltonian},
            {"stationarity", r.stationarity ? json(*r.stationarity) : json(nullptr)},
            {"transversality_initial", r.transversality_initial},
            {"transversality_final", r.transversality_final},
            {"boundary_initial", r.boundary_initial},
            {"boundary_final", r.boundary_final},
            {"nontriviality_margin", r.nontriviality_margin},
            {"abnormal", r.abnormal},
            {"note", r.note},
            {"worst_residual", r.worst_residual()},
            {"passed", r.passed()}};
  return j;
}

inline std::string extremal_csv(const json& meta, const Extremal& e, const std::vector<std::string>& cols) {
  io::CsvWriter csv(meta, cols);
  const auto& tr = e.trajectory;
  const Eigen::Index m = e.control.empty() ? 1 : e.control.dim();
  for (std::size_t i = 0; i < tr.size(); ++i) {
    std::vector<double> row{tr.times[i]};
    for (Eigen::Index k = 0; k < tr.states[i].size(); ++k) row.push_back(tr.states[i](k));
    for (Eigen::Index k = 0; k < e.adjoint.states[i].size(); ++k) row.push_back(e.adjoint.states[i](k));
    for (Eigen::Index j = 0; j < m; ++j) row.push_back(control_at(e.control, tr.times[i], j));
    csv.row(row);
  }
  return csv.str();
}

inline std::vector<std::string> extremal_columns(Eigen::Index n, Eigen::Index m) {
  std::vector<std::string> cols{"t"};
  for (auto& s : io::indexed("x", n)) cols.push_back(s);
  for (auto& s : io::indexed("p", n)) cols.push_back(s);
  for (auto& s : io::indexed("u", m)) cols.push_back(s);
  return cols;
}

inline std::string cmd_tmin_spring(Context& ctx) {
  const auto& c = ctx.cfg;
  SpringParams prm;
  if (c.has("system")) {
    const auto s = c.child("system");
    if (!names_spring(s)) s.fail("name", "tmin-spring needs the nonlinear_spring system");
    prm = read_spring(s);
  } else {
    prm.k2 = c.number("k2", 2.0);
  }
  if (!prm.normalized()) c.fail("system", "spring shooting needs m_mass = 1, k1 = 1, l = 0");
  if (!(prm.k2 >= 0.0)) c.fail("system", "k2 must be non-negative");
  const Vec target = c.vector("target", 2);
  const auto opt = read_shooting_options(c);
  const auto res = spring_tmin_shoot(prm, target, opt);

  json result = {{"T", res.T_star},
                 {"alpha", res.alpha},
                 {"switch_times", res.switch_times},
                 {"endpoint_error", res.endpoint_error},
                 {"p0", res.p0},
                 {"abnormal", res.abnormal}};
  std::string summary = "T_star=" + io::fmt(res.T_star) + " switches=" + std::to_string(res.switch_times.size());
  if (res.T_star > 0.0) {
    result["report"] = report_json(res.report);
    summary += " max_residual=" + io::fmt(res.report.worst_residual()) + " passed=" + (res.report.passed() ? "true" : "false");
  }
  ctx.files.add(".json", io::json_document(ctx.meta, result));
  ctx.files.add("_extremal.csv", extremal_csv(ctx.meta, res.extremal, {"t", "x", "y", "p_x", "p_y", "u"}));
  return summary;
}

inline Extremal read_inline_extremal(const Config& c, const ControlSystem& sys) {
  Extremal e;
  const Vec t = c.vector("times");
  const auto& xs = c.raw("states");
  const auto& ps = c.raw("adjoints");
  if (!xs.is_array() || xs.size() != static_cast<std::size_t>(t.size())) c.fail("states", "need one state per time");
  if (!ps.is_array() || ps.size() != static_cast<std::size_t>(t.size())) c.fail("adjoints", "need one adjoint per time");
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    e.trajectory.push(t(i), Config::to_vector(xs[k], c.at("states") + "/" + std::to_string(k), sys.n));
    e.adjoint.push(t(i), Config::to_vector(ps[k], c.at("adjoints") + "/" + std::to_string(k), sys.n));
  }
  e.p0 = c.number("p0", -1.0);
  if (e.p0 > 0.0) c.fail("p0", "must be <= 0");
  const auto kind = c.string("kind", "free-time");
  if (kind == "free-time") {
    e.kind = ProblemKind::FreeTime;
  } else if (kind == "fixed-time") {
    e.kind = ProblemKind::FixedTime;
  } else {
    c.fail("kind", "expected free-time or fixed-time");
  }
  e.control = io::read_control(c.child("control"), sys.m, t.size() ? t(t.size() - 1) : 0.0);
  return e;
}

inline std::string cmd_check_extremal(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto source = c.string("source", "inline");
  ControlSystem sys;
  Extremal ext;
  if (source == "tmin-linear") {
    const auto lin = read_linear(c.child("system"));
    const Vec x0 = c.vector("x0", lin.n());
    const Vec x1 = c.vector("x1", lin.n());
    const auto sol = solve_tmin(lin, x0, x1, read_tmin_options(c));
    if (sol.T_star == 0.0) c.fail("x1", "target equals the initial state; there is no extremal to check");
    sys = ControlSystem::from_linear(lin);
    ext = linear_tmin_extremal(lin, sol);
  } else if (source == "tmin-spring") {
    const auto s = c.child("system");
    if (!names_spring(s)) s.fail("name", "source tmin-spring needs the nonlinear_spring system");
    const auto prm = read_spring(s);
    const auto res = spring_tmin_shoot(prm, c.vector("target", 2), read_shooting_options(c));
    if (res.T_star == 0.0) c.fail("target", "target is the origin; there is no extremal to check");
    sys = spring_system(prm);
    ext = res.extremal;
  } else if (source == "inline") {
    sys = read_control_system(c.child("system"));
    ext = read_inline_extremal(c.child("extremal"), sys);
  } else {
    c.fail("source", "expected inline, tmin-linear or tmin-spring");
  }

  const long long flip = c.integer("flip_interval", -1);
  if (flip >= 0) {
    if (flip >= static_cast<long long>(ext.control.values.size()))
      c.fail("flip_interval", "control has only " + std::to_string(ext.control.values.size()) + " intervals");
    ext.control.values[static_cast<std::size_t>(flip)] *= -1.0;
  }

  const Eigen::Index n = sys.n;
  const auto m0 = c.has("m0") ? read_manifold(c.child("m0"), n) : BoundaryManifold::point(ext.trajectory.states.front());
  const auto m1 = c.has("m1") ? read_manifold(c.child("m1"), n) : BoundaryManifold::point(ext.trajectory.back());
  ExtremalCheckOptions opt;
  opt.substeps = positive_int(c, "substeps", opt.substeps);
  opt.brackets = positive_int(c, "brackets", opt.brackets);
  opt.nontriviality_floor = positive(c, "nontriviality_floor", opt.nontriviality_floor);
  const double tol = positive(c, "tolerance", 1e-6);
  ExtremalReport rep;
  try {
    rep = check_extremal(sys, ext, m0, m1, opt);
  } catch (const ValidationError& e) {
    throw ConfigError(c.at("extremal"), e.what());
  }

  json result = report_json(rep);
  result["passed"] = rep.passed(tol);
  result["system"] = sys.name;
  result["p0"] = ext.p0;
  result["T"] = ext.trajectory.times.back();
  ctx.files.add(".json", io::json_document(ctx.meta, result));
  ctx.files.add("_extremal.csv", extremal_csv(ctx.meta, ext, extremal_columns(n, sys.m)));
  return std::string("passed=") + (rep.passed(tol) ? "true" : "false") + " max_residual=" + io::fmt(rep.worst_residual()) +
         (rep.max_condition ? " max_condition=" + io::fmt(*rep.max_condition) : std::string()) +
         " abnormal=" + (rep.abnormal ? "true" : "false");
}

inline std::string cmd_linearize(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto sys = read_control_system(c.child("system"));
  const auto n = static_cast<Eigen::Index>(sys.n);
  const double T = positive(c, "T");
  const Vec x0 = c.vector("x0", n);
  const int steps = positive_int(c, "steps", 2000);
  const double tol = positive(c, "tol", 1e-10);
  const ControlSignal u = c.has("u_ref") ? io::read_control(c.child("u_ref"), sys.m, T)
                                         : ControlSignal::constant(Vec::Zero(sys.m), 0.0, T);
  if (!c.has("u_ref")) ctx.meta["config"]["u_ref"] = io::to_json(u);
  LinearizedSystem lin;
  try {
    lin = linearize(sys, u, x0, T, steps);
  } catch (const ValidationError& e) {
    throw ConfigError(c.at("u_ref"), e.what());
  }
  const auto rep = singularity_test(lin, T, tol);

  json result = {{"T", T},
                 {"x_T", io::to_json(lin.states.back())},
                 {"M_T", io::to_json(lin.M.back())},
                 {"regular", rep.regular},
                 {"rank", rep.rank},
                 {"gramian_eigenvalues", io::to_json(rep.eigenvalues)},
                 {"gramian", io::to_json(rep.W)}};
  if (c.has("v")) {
    const auto v = io::read_control(c.child("v"), sys.m, T);
    Vec direct, fundamental;
    try {
      direct = io_differential(lin, v, T);
      fundamental = io_differential_fundamental(lin, v, T);
    } catch (const ValidationError& e) {
      throw ConfigError(c.at("v"), e.what());
    }
    result["y_v"] = io::to_json(direct);
    result["y_v_fundamental"] = io::to_json(fundamental);
    result["path_gap"] = (direct - fundamental).norm();
  }

  std::vector<std::string> cols{"t"};
  for (auto& s : io::indexed("x", n)) cols.push_back(s);
  for (Eigen::Index i = 1; i <= n; ++i)
    for (Eigen::Index j = 1; j <= n; ++j) cols.push_back("M" + std::to_string(i) + std::to_string(j));
  io::CsvWriter csv(ctx.meta, cols);
  for (std::size_t k = 0; k < lin.times.size(); ++k) {
    std::vector<double> row{lin.times[k]};
    for (Eigen::Index i = 0; i < n; ++i) row.push_back(lin.states[k](i));
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) row.push_back(lin.M[k](i, j));
    csv.row(row);
  }
  ctx.files.add(".json", io::json_document(ctx.meta, result));
  ctx.files.add("_linearized.csv", csv.str());
  const double lmin = rep.eigenvalues.size() ? rep.eigenvalues(rep.eigenvalues.size() - 1) : 0.0;
  return std::string("regular=") + (rep.regular ? "true" : "false") + " rank=" + std::to_string(rep.rank) +
         " lambda_min=" + io::fmt(lmin);
}

}  // namespace detail

/// Runs one scenario; throws ValidationError / NumericalError on failure.
inline Outcome execute(const json& config, const RunOptions& opt = {}) {
  if (!config.is_object()) throw ConfigError("", "top level must be a JSON object");
  json meta = {{"tool", "pmpkit"}, {"version", kVersion}, {"config", config}};
  json& resolved = meta["config"];
  Config c(config, resolved, "");

  const auto command = c.string("command");
  const auto& names = commands();
  if (std::find(names.begin(), names.end(), command) == names.end())
    c.fail("command", "unknown command '" + command + "'");
  std::uint64_t seed = 0;
  if (opt.seed) {
    seed = *opt.seed;
    resolved["seed"] = seed;
  } else {
    const long long s = c.integer("seed", 0);
    if (s < 0) c.fail("seed", "must be non-negative");
    seed = static_cast<std::uint64_t>(s);
  }
  const auto stem = c.string("output_path", command);
  if (stem.empty() || std::filesystem::path(stem).is_absolute()) c.fail("output_path", "must be a non-empty relative path");

  detail::Writer writer{opt.out_dir, stem, {}};
  detail::Context ctx{c, meta, writer, seed};
  std::string summary;
  if (command == "kalman") summary = detail::cmd_kalman(ctx);
  else if (command == "simulate") summary = detail::cmd_simulate(ctx);
  else if (command == "reach") summary = detail::cmd_reach(ctx);
  else if (command == "tmin-linear") summary = detail::cmd_tmin_linear(ctx);
  else if (command == "tmin-spring") summary = detail::cmd_tmin_spring(ctx);
  else if (command == "check-extremal") summary = detail::cmd_check_extremal(ctx);
  else summary = detail::cmd_linearize(ctx);
  return {summary, writer.flush()};
}

inline json load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("malformed JSON: ") + e.what());
  }
}

/// Maps failures to exit codes: 2 for invalid input, 3 for numerical failure,
/// 1 for anything else (I/O).
inline int run(const std::filesystem::path& config_path, const RunOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    const auto outcome = execute(load_config(config_path), opt);
    if (!opt.quiet) out << outcome.summary << "\n";
    return kOk;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace pmpkit::cli
