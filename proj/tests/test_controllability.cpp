#include "pmpkit/controllability.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace pmpkit {
namespace {

using std::numbers::pi;

Vec vec2(double a, double b) { return (Vec(2) << a, b).finished(); }

Mat random_matrix(std::mt19937& rng, Eigen::Index r, Eigen::Index c) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
  return m;
}

LinearSystem unit_box(Mat A, Mat B) {
  const auto m = static_cast<std::size_t>(B.cols());
  return LinearSystem{std::move(A), std::move(B), std::vector<Interval>(m, Interval{-1.0, 1.0})};
}

TEST(Kalman, Oscillator) {
  const auto km = kalman_matrix(LinearSystem::oscillator());
  EXPECT_EQ(km.C, (Mat(2, 2) << 0.0, 1.0, 1.0, 0.0).finished());
  EXPECT_EQ(km.rank, 2);
  EXPECT_TRUE(is_controllable(LinearSystem::oscillator()));
}

TEST(Kalman, ZeroInputMatrix) {
  std::mt19937 rng(1);
  const auto km = kalman_matrix(LinearSystem{random_matrix(rng, 3, 3), Mat::Zero(3, 2), std::nullopt});
  EXPECT_EQ(km.rank, 0);
  EXPECT_EQ(km.C.cols(), 6);
}

TEST(Kalman, DiagonalTwoModes) {
  const LinearSystem sys{(Mat(2, 2) << 1, 0, 0, 2).finished(), (Mat(2, 1) << 1, 1).finished(), std::nullopt};
  const auto km = kalman_matrix(sys);
  EXPECT_EQ(km.C, (Mat(2, 2) << 1, 1, 1, 2).finished());
  EXPECT_EQ(km.rank, 2);
}

TEST(Kalman, RepeatedEigenvalueSingleInput) {
  const LinearSystem sys{Mat::Identity(2, 2), (Mat(2, 1) << 1, 0).finished(), std::nullopt};
  EXPECT_EQ(kalman_matrix(sys).rank, 1);
  EXPECT_FALSE(is_controllable(sys));
  EXPECT_EQ(oracle::psd_rank(oracle::gramian(sys.A, sys.B, 1.0)), 1);
}

TEST(Kalman, ScalarSystem) {
  EXPECT_TRUE(is_controllable(LinearSystem{Mat::Constant(1, 1, -0.4), Mat::Constant(1, 1, 2.0), std::nullopt}));
  EXPECT_TRUE(is_controllable(LinearSystem{Mat::Zero(1, 1), Mat::Constant(1, 1, 1.0), std::nullopt}));
}

TEST(Kalman, SingularValuesNonIncreasing) {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto km = kalman_matrix(LinearSystem{random_matrix(rng, 4, 4), random_matrix(rng, 4, 2), std::nullopt});
    EXPECT_LE(km.rank, 4);
    for (Eigen::Index i = 1; i < km.singular_values.size(); ++i) {
      EXPECT_GE(km.singular_values(i - 1), km.singular_values(i));
      EXPECT_GE(km.singular_values(i), 0.0);
    }
  }
}

TEST(Kalman, AgreesWithGramianOracle) {
  std::mt19937 rng(2024);
  std::uniform_int_distribution<int> dim_n(1, 5);
  std::uniform_int_distribution<int> dim_m(1, 2);
  for (int trial = 0; trial < 80; ++trial) {
    const int n = dim_n(rng);
    const int m = dim_m(rng);
    Mat A = random_matrix(rng, n, n);
    Mat B = random_matrix(rng, n, m);
    if (trial % 4 == 0 && n > 1) {
      // The last coordinate is invisible to u; hide the structure behind a
      // random change of basis.
      A.row(n - 1).head(n - 1).setZero();
      B.row(n - 1).setZero();
      const Mat S = random_matrix(rng, n, n) + 2.0 * Mat::Identity(n, n);
      A = S * A * S.inverse();
      B = S * B;
    }
    EXPECT_EQ(is_controllable(LinearSystem{A, B, std::nullopt}), oracle::gramian_controllable(A, B))
        << "trial " << trial;
  }
}

TEST(ReachSupport, ScalarIntegrator) {
  const auto sys = unit_box(Mat::Zero(1, 1), Mat::Ones(1, 1));
  const auto s = reach_support(sys, Vec::Zero(1), 2.5, Vec::Ones(1));
  EXPECT_DOUBLE_EQ(s.point(0), 2.5);
  EXPECT_DOUBLE_EQ(s.value, 2.5);
  EXPECT_TRUE(s.singular_channels.empty());
}

TEST(ReachSupport, OscillatorHalfPeriodDirectionE1) {
  // x(pi) = int_0^pi sin(pi - s) u(s) ds is maximised by u = 1, giving 2.
  const auto sys = LinearSystem::oscillator();
  const auto s = reach_support(sys, Vec::Zero(2), pi, vec2(1.0, 0.0));
  EXPECT_NEAR(s.value, 2.0, 1e-12);

  // Brute force over bang-bang controls with up to 3 switches on a grid.
  const int N = 60;
  double best = -1e300;
  for (int a = 0; a <= N; ++a)
    for (int b = a; b <= N; ++b)
      for (int c = b; c <= N; ++c)
        for (double first : {-1.0, 1.0}) {
          const std::vector<double> br = {0.0, a * pi / N, b * pi / N, c * pi / N, pi};
          const std::vector<double> vals = {first, -first, first, -first};
          best = std::max(best, oracle::oscillator_flow(Vec::Zero(2), br, vals, pi)(0));
        }
  EXPECT_LE(best, s.value + 1e-12);
  EXPECT_NEAR(best, s.value, 1e-12);
}

TEST(ReachSupport, OscillatorMatchesBruteForceGenericDirection) {
  const auto sys = LinearSystem::oscillator();
  const Vec d = vec2(std::cos(1.1), std::sin(1.1));
  const auto s = reach_support(sys, vec2(0.3, -0.2), 2.0, d);
  const int N = 80;
  double best = -1e300;
  for (int a = 0; a <= N; ++a)
    for (int b = a; b <= N; ++b)
      for (double first : {-1.0, 1.0}) {
        const std::vector<double> br = {0.0, a * 2.0 / N, b * 2.0 / N, 2.0};
        const std::vector<double> vals = {first, -first, first};
        best = std::max(best, d.dot(oracle::oscillator_flow(vec2(0.3, -0.2), br, vals, 2.0)));
      }
  EXPECT_LE(best, s.value + 1e-12);
  EXPECT_LT(s.value - best, 2e-3);  // grid resolution 2/80
}

TEST(ReachSupport, CentralSymmetryOfDrivenPart) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sys = unit_box(random_matrix(rng, 3, 3), random_matrix(rng, 3, 2));
    const Vec x0 = random_matrix(rng, 3, 1);
    const Vec d = random_matrix(rng, 3, 1);
    const double T = 1.5;
    const Vec drift = mat_exp(sys.A, T) * x0;
    const Vec plus = reach_support(sys, x0, T, d).point - drift;
    const Vec minus = reach_support(sys, x0, T, -d).point - drift;
    EXPECT_LT((plus + minus).norm(), 1e-8);
  }
}

TEST(ReachSupport, SingularChannelReportedAndZeroed) {
  const auto sys = unit_box(Mat::Zero(2, 2), (Mat(2, 1) << 1, 0).finished());
  const auto s = reach_support(sys, Vec::Zero(2), 1.0, vec2(0.0, 1.0));
  EXPECT_EQ(s.singular_channels, std::vector<int>{0});
  EXPECT_EQ(s.control.values.front()(0), 0.0);
  EXPECT_EQ(s.value, 0.0);
}

TEST(ReachSupport, Preconditions) {
  const auto osc = LinearSystem::oscillator();
  EXPECT_THROW(reach_support(osc, Vec::Zero(2), 1.0, Vec::Zero(2)), ValidationError);
  EXPECT_THROW(reach_support(osc, Vec::Zero(2), 0.0, vec2(1, 0)), ValidationError);
  auto wide = osc;
  wide.bounds = std::vector<Interval>{{-2.0, 2.0}};
  EXPECT_THROW(reach_support(wide, Vec::Zero(2), 1.0, vec2(1, 0)), ValidationError);
}

TEST(ReachHull, EmbeddedScalarIntegratorDegenerates) {
  const auto sys = unit_box(Mat::Zero(2, 2), (Mat(2, 1) << 1, 0).finished());
  const auto hull = reach_hull(sys, Vec::Zero(2), 1.5, 8);
  for (const auto& p : hull.support_points) {
    EXPECT_EQ(p(1), 0.0);
    EXPECT_LE(std::abs(p(0)), 1.5 + 1e-15);
  }
  EXPECT_NEAR(hull.support_values[0], 1.5, 1e-15);  // direction e1
  EXPECT_EQ(hull.support_values[2], 0.0);           // direction e2
  EXPECT_LE(hull.certificate_violation(), 1e-8);
}

TEST(ReachHull, OscillatorFullPeriodIsDiskOfRadiusFour) {
  // From 0 over [0, 2 pi], <d, x(T)> = int |sin(.)| = 4 in every direction.
  const auto hull = reach_hull(LinearSystem::oscillator(), Vec::Zero(2), 2.0 * pi, 64);
  ASSERT_EQ(hull.size(), 64u);
  for (std::size_t i = 0; i < hull.size(); ++i) {
    EXPECT_NEAR(hull.directions[i].norm(), 1.0, 1e-12);
    EXPECT_LE(hull.support_points[i].norm(), 4.0 + 1e-9);
    EXPECT_NEAR(hull.support_values[i], 4.0, 1e-9);
  }
  EXPECT_LE(hull.certificate_violation(), 1e-8);

  std::mt19937 rng(99);
  for (int k = 0; k < 2000; ++k) {
    const auto u = oracle::random_bang_bang(rng, 2.0 * pi, 6);
    EXPECT_TRUE(hull.contains(oracle::oscillator_flow(Vec::Zero(2), u.breaks, u.values, 2.0 * pi), 1e-6));
  }
}

TEST(ReachHull, FourDirections) {
  std::mt19937 rng(8);
  const auto sys = unit_box(random_matrix(rng, 2, 2), random_matrix(rng, 2, 1));
  const auto hull = reach_hull(sys, vec2(0.5, 0.1), 1.0, 4);
  EXPECT_EQ(hull.size(), 4u);
  EXPECT_LE(hull.certificate_violation(), 1e-8);
}

TEST(ReachHull, RejectsTooFewDirections) {
  EXPECT_THROW(reach_hull(LinearSystem::oscillator(), Vec::Zero(2), 1.0, 2), ValidationError);
}

TEST(ReachHull, ExplicitDirectionsInHigherDimension) {
  std::mt19937 rng(12);
  const auto sys = unit_box(random_matrix(rng, 3, 3), random_matrix(rng, 3, 1));
  std::vector<Vec> dirs;
  for (int i = 0; i < 12; ++i) dirs.push_back(random_matrix(rng, 3, 1));
  const auto hull = reach_hull(sys, Vec::Zero(3), 2.0, dirs);
  EXPECT_LE(hull.certificate_violation(), 1e-8);
  EXPECT_THROW(reach_hull(sys, Vec::Zero(3), 2.0, 8), ValidationError);
}

TEST(ReachHull, DrivenSupportGrowsWithHorizon) {
  // From x0 = 0 the driven part is the whole endpoint.
  std::mt19937 rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const auto sys = unit_box(random_matrix(rng, 2, 2), random_matrix(rng, 2, 1));
    double prev_T = 0.0;
    std::vector<double> prev;
    for (double T : {0.5, 1.0, 2.0, 3.0}) {
      const auto hull = reach_hull(sys, Vec::Zero(2), T, 16);
      if (!prev.empty()) {
        for (std::size_t i = 0; i < hull.size(); ++i)
          EXPECT_GE(hull.support_values[i], prev[i] - 1e-10) << "T " << prev_T << " -> " << T;
      }
      prev = hull.support_values;
      prev_T = T;
    }
  }
}

TEST(ReachHullProperty, MonteCarloContainmentAndExtremality) {
  std::mt19937 rng(77);
  const auto sys = LinearSystem::oscillator();
  const Vec x0 = vec2(0.4, -0.7);
  const double T = 3.0;
  const auto hull = reach_hull(sys, x0, T, 32);
  std::vector<double> best(hull.size(), -1e300);
  for (int k = 0; k < 3000; ++k) {
    const auto u = oracle::random_bang_bang(rng, T, 5);
    const Vec e = oracle::oscillator_flow(x0, u.breaks, u.values, T);
    EXPECT_LE(hull.excess(e), 1e-6);
    for (std::size_t i = 0; i < hull.size(); ++i) best[i] = std::max(best[i], hull.directions[i].dot(e));
  }
  for (std::size_t i = 0; i < hull.size(); ++i) EXPECT_GE(hull.support_values[i], best[i] - 1e-6);
}

}  // namespace
}  // namespace pmpkit
