#include "pmpkit/lin_sys.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace pmpkit {
namespace {

using std::numbers::pi;

Vec vec2(double a, double b) { return (Vec(2) << a, b).finished(); }
Vec scalar(double a) { return Vec::Constant(1, a); }

double rel_err(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

Mat random_matrix(std::mt19937& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
  return m;
}

ControlSignal random_control(std::mt19937& rng, Eigen::Index m, double T, int pieces, double amp) {
  std::uniform_real_distribution<double> t(0.0, T);
  std::uniform_real_distribution<double> v(-amp, amp);
  ControlSignal u;
  u.breakpoints = {0.0, T};
  for (int i = 1; i < pieces; ++i) u.breakpoints.push_back(t(rng));
  std::sort(u.breakpoints.begin(), u.breakpoints.end());
  for (int i = 0; i < pieces; ++i) {
    Vec val(m);
    for (Eigen::Index j = 0; j < m; ++j) val(j) = v(rng);
    u.values.push_back(val);
  }
  return u;
}

TEST(MatExp, ZeroIsIdentity) {
  for (double t : {0.0, 1.0, -3.0, 100.0}) EXPECT_EQ(mat_exp(Mat::Zero(3, 3), t), Mat::Identity(3, 3));
}

TEST(MatExp, RotationGenerator) {
  const Mat A = oracle::rotation_generator();
  for (double t : {0.1, 1.0, pi, 7.5, -2.0}) {
    Mat R(2, 2);
    R << std::cos(t), std::sin(t), -std::sin(t), std::cos(t);
    EXPECT_LT(rel_err(mat_exp(A, t), R), 1e-13) << "t = " << t;
  }
}

TEST(MatExp, Diagonal) {
  Mat A = Mat::Zero(2, 2);
  A(0, 0) = 0.7;
  A(1, 1) = -2.3;
  const Mat E = mat_exp(A, 1.9);
  EXPECT_NEAR(E(0, 0), std::exp(0.7 * 1.9), 1e-13 * std::exp(0.7 * 1.9));
  EXPECT_NEAR(E(1, 1), std::exp(-2.3 * 1.9), 1e-16);
  EXPECT_EQ(E(0, 1), 0.0);
  EXPECT_EQ(E(1, 0), 0.0);
}

TEST(MatExp, RejectsNonFinite) {
  Mat A = Mat::Zero(2, 2);
  A(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(mat_exp(A, 1.0), ValidationError);
  EXPECT_THROW(mat_exp(Mat::Zero(2, 3), 1.0), ValidationError);
}

TEST(MatExp, AgreesWithTaylorOracleUpToNormTen) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 1 + trial % 6;
    Mat A = random_matrix(rng, n, n);
    const double target = 10.0 * (trial + 1) / 200.0;
    const double t = target / A.norm();
    EXPECT_LT(rel_err(mat_exp(A, t), oracle::taylor_exp(A, t)), 1e-12) << "trial " << trial;
  }
}

TEST(MatExp, Semigroup) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat A = random_matrix(rng, 4, 4);
    const double total = 10.0 / A.norm();
    std::uniform_real_distribution<double> frac(0.0, 1.0);
    const double s = frac(rng) * total;
    const double t = total - s;
    EXPECT_LT(rel_err(mat_exp(A, s + t), mat_exp(A, s) * mat_exp(A, t)), 1e-11);
  }
}

TEST(MatExp, LargeNormUsesExtraSquarings) {
  Mat A(2, 2);
  A << -50.0, 0.0, 0.0, -60.0;
  const Mat E = mat_exp(A, 1.0);
  EXPECT_NEAR(E(0, 0) / std::exp(-50.0), 1.0, 1e-11);
  EXPECT_NEAR(E(1, 1) / std::exp(-60.0), 1.0, 1e-11);
}

TEST(ControlSignal, LookupIsRightContinuous) {
  const ControlSignal u{{0.0, 1.0, 2.0}, {scalar(-1.0), scalar(1.0)}};
  EXPECT_EQ(u.value_at(0.5)(0), -1.0);
  EXPECT_EQ(u.value_at(1.0)(0), 1.0);
  EXPECT_EQ(u.value_before(1.0)(0), -1.0);
  EXPECT_EQ(u.value_at(2.0)(0), 1.0);
}

TEST(ControlSignal, ValidateCatchesBadShapes) {
  EXPECT_THROW((ControlSignal{{0.0, 1.0}, {}}.validate()), ValidationError);
  EXPECT_THROW((ControlSignal{{0.0, 0.0}, {scalar(1)}}.validate()), ValidationError);
  EXPECT_THROW((ControlSignal{{0.0, 1.0, 2.0}, {scalar(1), vec2(1, 1)}}.validate()), ValidationError);
}

TEST(Simulate, PureIntegrator) {
  LinearSystem sys{Mat::Zero(2, 2), Mat::Identity(2, 2), std::nullopt};
  const Vec c = vec2(0.3, -1.2);
  const auto traj = simulate(sys, Vec::Zero(2), ControlSignal::constant(c, 0.0, 4.0), 4.0);
  EXPECT_LT((traj.back() - 4.0 * c).norm(), 1e-14);
}

TEST(Simulate, OscillatorCircleArc) {
  const auto sys = LinearSystem::oscillator();
  const auto traj = simulate(sys, Vec::Zero(2), ControlSignal::constant(scalar(-1.0), 0.0, 2.0 * pi), 2.0 * pi, 0.05);
  ASSERT_GT(traj.size(), 100u);
  for (const auto& x : traj.states) EXPECT_NEAR(std::pow(x(0) + 1.0, 2) + x(1) * x(1), 1.0, 1e-10);
}

TEST(Simulate, HomogeneousSolution) {
  std::mt19937 rng(3);
  LinearSystem sys{random_matrix(rng, 3, 3), random_matrix(rng, 3, 2), std::nullopt};
  const Vec x0 = random_matrix(rng, 3, 1);
  const auto traj = simulate(sys, x0, ControlSignal::constant(Vec::Zero(2), 0.0, 2.5), 2.5);
  EXPECT_LT((traj.back() - oracle::taylor_exp(sys.A, 2.5) * x0).norm(), 1e-12);
}

TEST(Simulate, MatchesQuadratureOracle) {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    LinearSystem sys{random_matrix(rng, 3, 3), random_matrix(rng, 3, 2), std::nullopt};
    const Vec x0 = random_matrix(rng, 3, 1);
    const auto u = random_control(rng, 2, 2.0, 5, 1.0);
    const Vec got = simulate(sys, x0, u, 2.0).back();
    const Vec want = oracle::voc_quadrature(sys.A, sys.B, x0, u.breakpoints, u.values, 2.0);
    EXPECT_LT((got - want).norm(), 1e-10 * std::max(1.0, want.norm()));
  }
}

TEST(Simulate, FlowComposition) {
  std::mt19937 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    LinearSystem sys{random_matrix(rng, 3, 3), random_matrix(rng, 3, 1), std::nullopt};
    const Vec x0 = random_matrix(rng, 3, 1);
    const double T = 3.0;
    const auto u = random_control(rng, 1, T, 6, 1.0);
    const double tau = u.breakpoints[3];
    const Vec direct = simulate(sys, x0, u, T).back();
    const Vec mid = simulate(sys, x0, u.restricted(0.0, tau), tau).back();
    const Vec split = simulate(sys, mid, u.restricted(tau, T), T).back();
    EXPECT_LT((direct - split).norm(), 1e-11 * std::max(1.0, direct.norm()));
  }
}

TEST(Simulate, RejectsOutOfBoundsWithIntervalIndex) {
  const auto sys = LinearSystem::oscillator();
  const ControlSignal u{{0.0, 1.0, 2.0, 3.0}, {scalar(0.5), scalar(1.5), scalar(0.0)}};
  try {
    simulate(sys, Vec::Zero(2), u, 3.0);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("interval 1"), std::string::npos) << e.what();
  }
}

TEST(Simulate, SamplesEveryBreakpoint) {
  const auto sys = LinearSystem::oscillator();
  const ControlSignal u{{0.0, 0.5, 1.7, 3.0}, {scalar(1.0), scalar(-1.0), scalar(1.0)}};
  const auto traj = simulate(sys, Vec::Zero(2), u, 3.0);
  EXPECT_EQ(traj.times, (std::vector<double>{0.0, 0.5, 1.7, 3.0}));
}

TEST(LinearityCheck, SameSignal) {
  LinearSystem sys{oracle::rotation_generator(), (Mat(2, 1) << 0, 1).finished(), std::nullopt};
  std::mt19937 rng(1);
  const auto u = random_control(rng, 1, 3.0, 4, 2.0);
  EXPECT_EQ(linearity_check(sys, u, u, 1.0, 0.0, 3.0), 0.0);
  EXPECT_LE(linearity_check(sys, u, u, 1.0, 1.0, 3.0), 1e-9);
}

TEST(LinearityCheck, RandomOscillatorControls) {
  LinearSystem sys{oracle::rotation_generator(), (Mat(2, 1) << 0, 1).finished(), std::nullopt};
  std::mt19937 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto u1 = random_control(rng, 1, 5.0, 7, 3.0);
    const auto u2 = random_control(rng, 1, 5.0, 5, 3.0);
    EXPECT_LE(linearity_check(sys, u1, u2, 2.5, -1.0, 5.0), 1e-9);
    // Cross-check the combined endpoint against quadrature.
    const auto uc = linear_combination(2.5, u1, -1.0, u2);
    const Vec want = oracle::voc_quadrature(sys.A, sys.B, Vec::Zero(2), uc.breakpoints, uc.values, 5.0);
    EXPECT_LT((simulate(sys, Vec::Zero(2), uc, 5.0).back() - want).norm(), 1e-9);
  }
}

TEST(LinearityCheck, RejectsBoundedControls) {
  const auto sys = LinearSystem::oscillator();
  const auto u = ControlSignal::constant(scalar(0.5), 0.0, 1.0);
  EXPECT_THROW(linearity_check(sys, u, u, 1.0, 1.0, 1.0), ValidationError);
}

TEST(ReachableSubspace, ZeroPaddingKeepsEndpointInSubspace) {
  // With unconstrained controls the reachable set from 0 is the range of the
  // Gramian; endpoints reached in T1 stay in the range for T2 > T1.
  std::mt19937 rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    Mat A = random_matrix(rng, 4, 4);
    Mat B = Mat::Zero(4, 1);
    B(0, 0) = 1.0;
    if (trial % 2 == 0) {
      // Uncontrollable mode: x4 is decoupled from the input, so rank W < 4.
      A.row(3).setZero();
      A(3, 3) = 0.5;
    }
    LinearSystem sys{A, B, std::nullopt};
    const double T1 = 1.0;
    const double T2 = 1.7;
    const auto u = random_control(rng, 1, T1, 4, 1.0);
    ControlSignal padded;
    padded.breakpoints = {0.0};
    padded.values = {scalar(0.0)};
    for (double t : u.breakpoints) padded.breakpoints.push_back(t + (T2 - T1));
    for (const auto& v : u.values) padded.values.push_back(v);
    const Vec end = simulate(sys, Vec::Zero(4), padded, T2).back();

    // Range of the Gramian equals the Krylov span of B; take it from the
    // singular vectors of [B, AB, A^2 B, A^3 B].
    Mat krylov(4, 4);
    krylov.col(0) = B;
    for (int k = 1; k < 4; ++k) krylov.col(k) = A * krylov.col(k - 1);
    Eigen::JacobiSVD<Mat> svd(krylov, Eigen::ComputeFullU);
    const Vec sv = svd.singularValues();
    Eigen::Index r = 0;
    while (r < sv.size() && sv(r) > 1e-10 * sv(0)) ++r;
    EXPECT_EQ(r, trial % 2 == 0 ? 3 : 4);
    const Mat basis = svd.matrixU().leftCols(r);
    const Vec residual = end - basis * (basis.transpose() * end);
    EXPECT_LT(residual.norm(), 1e-8 * std::max(1.0, end.norm())) << "trial " << trial << " rank " << r;
  }
}

}  // namespace
}  // namespace pmpkit
