#include <cmath>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "gtest/gtest.h"
#include "rfphi4/potential.hpp"

using namespace rfphi4;

namespace {

ModelParams wells(double ms, double a, double b) {
  ModelParams p;
  p.m_star = ms;
  p.a = a;
  p.b = b;
  p.q = 0.01;
  return p;
}

// Adaptive Gauss-Kronrod on each piece of [lo, hi] cut at the window edges.
double gk_oracle(const std::function<double(double)>& f, double lo, double hi, std::vector<double> cuts) {
  cuts.push_back(lo);
  cuts.push_back(hi);
  std::sort(cuts.begin(), cuts.end());
  double s = 0;
  for (size_t i = 0; i + 1 < cuts.size(); ++i) {
    double l = std::max(lo, cuts[i]), h = std::min(hi, cuts[i + 1]);
    if (h > l) s += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, l, h, 20, 1e-13);
  }
  return s;
}

}  // namespace

TEST(Potential, DoubleWellValues) {
  ModelParams p = wells(2.0, 1.0, 0.0);
  EXPECT_EQ(potential_V(2.0, p), 0.0);
  EXPECT_EQ(potential_V(-2.0, p), 0.0);
  EXPECT_DOUBLE_EQ(potential_V(0.0, p), 0.5);
}

TEST(Potential, FactorizationIdentity) {
  ModelParams p = wells(2.0, 1.03, 0.05);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  double worst = 0;
  for (int k = 0; k < 1000000; ++k) {
    double m = u(rng);
    for (int s : {-1, 1}) {
      auto v = evaluate(m, s, p);
      double lhs = std::exp(-v.V) * kernel_T(s, m, p);
      double rhs = std::exp(-v.Q) * (1 + v.w);
      worst = std::max(worst, std::abs(lhs - rhs) / lhs);
    }
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Potential, Symmetries) {
  ModelParams p = wells(3.0, 1.05, 0.02);
  for (double m = -10; m <= 10; m += 0.37) {
    EXPECT_DOUBLE_EQ(potential_V(-m, p), potential_V(m, p));
    EXPECT_NEAR(kernel_T(1, m, p), kernel_T(-1, -m, p), 1e-15);
    EXPECT_NEAR(remainder_w(-m, p), remainder_w(m, p), 1e-12 * (1 + std::abs(remainder_w(m, p))));
    EXPECT_GE(remainder_w(m, p), -1.0);
  }
}

TEST(Kernel, TanhAndRatioForms) {
  ModelParams p = wells(2.0, 1.0, 0.0);
  EXPECT_EQ(kernel_T(1, 0.0, p), 0.5);
  EXPECT_EQ(kernel_T(-1, 0.0, p), 0.5);
  EXPECT_NEAR(kernel_T(1, 1.0, p), 0.5 * (1 + std::tanh(2.0)), 1e-15);
  EXPECT_NEAR(kernel_T(1, 1.0, p), 0.98201, 1e-5);
  EXPECT_EQ(kernel_T(1, 100.0, p), 1.0);
  for (double m = -5; m <= 5; m += 0.01) {
    EXPECT_NEAR(kernel_T(1, m, p) + kernel_T(-1, m, p), 1.0, 1e-15);
    for (int s : {-1, 1}) EXPECT_NEAR(kernel_T(s, m, p), kernel_T_ratio(s, m, p), 1e-12);
  }
}

TEST(GaussMass, MatchesOracle) {
  ModelParams p = wells(5.0, 1.0, 0.0);
  p.A2 = 1.5;
  for (double mu : {-6.0, 0.3, 4.2, 5.0, 7.7}) {
    auto f = [&](double m) { return std::exp(-0.7 * (m - mu) * (m - mu)); };
    double in = gk_oracle(f, -30, 30, {-6.5, -3.5, 3.5, 6.5});
    double all = std::sqrt(std::numbers::pi / 0.7);
    EXPECT_NEAR(gauss_mass_U(1.4, mu, p), in - gk_oracle([&](double m) { return std::abs(m) < 3.5 || std::abs(m) > 6.5 ? f(m) : 0.0; }, -30, 30, {-6.5, -3.5, 3.5, 6.5}), 1e-12);
    EXPECT_NEAR(gauss_mass_U(1.4, mu, p) + gauss_mass_Uc(1.4, mu, p), all, 1e-13);
  }
}

TEST(SelectParameters, ClosedForms) {
  ParameterCertificate c = select_parameters(0.1, 100, 3);
  EXPECT_NEAR(c.a, 1.02167, 1e-5);
  EXPECT_NEAR(c.q0, 1.817e-4, 1e-7);
  EXPECT_NEAR(c.delta0, 0.11006, 1e-5);
  EXPECT_NEAR(c.eps1 * c.m_star, std::cbrt(0.1 * 100), 1e-12);
  EXPECT_NEAR(c.U_hi - c.U_lo, 2 * std::cbrt(10.0), 1e-12);
  EXPECT_GT(c.b, 0.0);
  EXPECT_GT(c.b_doubled, c.b);
  EXPECT_TRUE(c.all_checks_pass());
}

TEST(SelectParameters, BDecreasesWithMStar) {
  double prev = std::numeric_limits<double>::infinity();
  for (double ms : {50.0, 100.0, 200.0}) {
    ParameterCertificate c = select_parameters(0.1, ms, 3, {512, false});
    EXPECT_LT(c.b, prev);
    prev = c.b;
  }
}

TEST(SelectParameters, Errors) {
  EXPECT_THROW(select_parameters(0.0, 100, 3), std::domain_error);
  EXPECT_THROW(select_parameters(0.1, 0.1, 3), std::domain_error);
}

TEST(SelectParameters, PointwiseWellBounds) {
  ParameterCertificate c = select_parameters(0.1, 100, 3, {512, false});
  ModelParams p = c.params();
  double floor = c.b - std::log1p(std::exp(-c.kappa * c.m_star * c.m_star));
  for (int k = 0; k <= 10000; ++k) {
    double m = c.U_lo + (c.U_hi - c.U_lo) * k / 10000.0;
    double u = m - c.m_star;
    EXPECT_GE(log1p_w(m, p), floor - 1e-12);
    EXPECT_LE(-potential_V(m, p) + 0.5 * c.a * u * u, c.eps1 * u * u + 1e-12);
    EXPECT_GE(remainder_w(m, p), 0.0);
  }
}

TEST(RangeCheck, Thresholds) {
  ParameterCertificate c = select_parameters(0.1, 100, 3, {512, false});
  ModelParams p = c.params();
  RangeReport r = range_check(p, c.A1, c.A2, 100);
  EXPECT_TRUE(r.conditions_ok);
  EXPECT_LE(r.observed_max, r.bound * (1 + 1e-12));
  // at the largest admissible q the eta = 0 worst case is exactly A1
  EXPECT_NEAR(r.single_site_gap, c.A1, 1e-9);
  p.q = 1.01 * r.q_limit;
  EXPECT_FALSE(range_check(p, c.A1, c.A2, 1).conditions_ok);
  p = c.params();
  p.delta = 1.01 * r.delta_limit;
  EXPECT_FALSE(range_check(p, c.A1, c.A2, 1).conditions_ok);
}

TEST(RangeCheck, SingleSiteSaturates) {
  ParameterCertificate c = select_parameters(0.1, 100, 3, {512, false});
  ModelParams p = c.params();
  RangeReport r = range_check(p, c.A1, c.A2, 0);
  LatticeVolume one = LatticeVolume::cube(3, 1);
  Field z = Field::Zero(1);
  double gap = minimizer_gap(one, {0}, p, {-1}, z, BoundaryField::constant(c.m_star + c.A2), z);
  EXPECT_NEAR(gap, r.single_site_gap, 1e-9);
  EXPECT_NEAR(r.observed_max, r.single_site_gap, 1e-9);
}

TEST(RangeCheck, PureWellHasNoGap) {
  ModelParams p = wells(4.0, 1.0, 0.0);
  p.d = 2;
  LatticeVolume vol({3, 3});
  Field zero = Field::Zero(9), ext = Field::Constant(9, 4.0);
  EXPECT_NEAR(minimizer_gap(vol, {4, 5}, p, constant_spins(vol, 1), zero, BoundaryField::constant(4.0), ext), 0.0,
              1e-12);
}

TEST(SiteCriteria, QuadratureMatchesOracle) {
  ParameterCertificate c = select_parameters(0.1, 100, 3, {512, false});
  ModelParams p = c.params();
  std::vector<double> cuts{-c.U_hi, -c.U_lo, c.U_lo, c.U_hi};
  for (double mh : {c.m_star - c.A1, c.m_star, c.m_star + 0.7 * c.A1}) {
    auto f = [&](double m) {
      double g = std::exp(-0.5 * p.a * (m - mh) * (m - mh));
      return p.in_U(m) ? g * remainder_w(m, p) : g * (1 + remainder_w(m, p));
    };
    EXPECT_NEAR(peierls_integral(mh, p), gk_oracle(f, mh - 40, mh + 40, cuts), 1e-12);
    double s2 = p.a + 4 * p.d * p.q;
    auto h = [&](double m) { return p.in_U(m) ? std::exp(-0.5 * s2 * (m - mh) * (m - mh)) * remainder_w(m, p) : 0.0; };
    EXPECT_NEAR(positivity_integral(mh, p), gk_oracle(h, mh - 40, mh + 40, cuts), 1e-12);
  }
}

TEST(SiteCriteria, CertificatePositivityAndBound) {
  ParameterCertificate c = select_parameters(0.1, 100, 3);
  SiteCriteria sc = site_criteria_check(c.params(), c);
  EXPECT_TRUE(sc.positivity_ok);
  EXPECT_GT(sc.positivity_margin, 0.0);
  EXPECT_GT(sc.epsilon, 0.0);
  EXPECT_LE(sc.epsilon, c.epsilon_peierls);
  EXPECT_LT(sc.quad_error, 1e-10);
  // doubling the fraction in b still leaves positivity
  EXPECT_TRUE(site_criteria_check(c.params(c.q0, c.delta0, true), c).positivity_ok);
}

TEST(SiteCriteria, GaussianWellsReduceToTailMass) {
  ParameterCertificate c = select_parameters(0.1, 100, 3, {512, false});
  ModelParams p = c.params();
  SiteCriteria sc = site_criteria_check(p, c, Potential::gaussian_wells());
  double tail = scan_sup([&](double mh) { return gauss_mass_Uc(p.a, mh, p); }, c.m_star - c.A1, c.m_star + c.A1, 65).value;
  EXPECT_NEAR(sc.epsilon, tail, 1e-12);
  EXPECT_FALSE(sc.positivity_ok);
}

TEST(SiteCriteria, EpsilonFallsWithMStar) {
  ThresholdScan t = peierls_threshold_scan(0.1, 3, {100, 400, 1300, 3000});
  for (size_t i = 1; i < t.epsilon_by_m_star.size(); ++i)
    EXPECT_LT(t.epsilon_by_m_star[i].second, t.epsilon_by_m_star[i - 1].second);
  EXPECT_FALSE(std::isnan(t.m_star0));
  EXPECT_GT(t.m_star0, 100.0);
}
