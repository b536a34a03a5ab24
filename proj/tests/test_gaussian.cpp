#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "gtest/gtest.h"
#include "rfphi4/gaussian.hpp"

using namespace rfphi4;

namespace {

SiteSet random_nonempty_subset(const LatticeVolume& vol, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution keep(p);
  SiteSet s;
  while (s.empty())
    for (int x = 0; x < vol.size(); ++x)
      if (keep(rng)) s.push_back(x);
  return s;
}

Field random_eta(int n, double delta, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-delta, delta);
  Field e(n);
  for (int i = 0; i < n; ++i) e[i] = u(rng);
  return e;
}

Spins random_spins(int n, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  Spins s(n);
  for (auto& v : s) v = coin(rng) ? 1 : -1;
  return s;
}

ModelParams params(double q, double ms, double a, int d) {
  ModelParams p;
  p.q = q;
  p.m_star = ms;
  p.a = a;
  p.d = d;
  return p;
}

}  // namespace

TEST(Resolvent, SingleSite) {
  LatticeVolume vol = LatticeVolume::cube(3, 3);
  MatrixXd R = resolvent_direct(vol, {13}, 100.0);
  EXPECT_NEAR(R(0, 0), 1.0 / 106.0, 1e-15);
  EXPECT_NEAR(R(0, 0), 9.43396e-3, 1e-8);
}

TEST(Resolvent, TwoSiteChain) {
  LatticeVolume vol({2});
  MatrixXd R = resolvent_direct(vol, {0, 1}, 100.0);
  EXPECT_NEAR(R(0, 1), 1.0 / (102.0 * 102.0 - 1.0), 1e-16);
}

TEST(Resolvent, RowSumIdentityAndPositivity) {
  std::mt19937_64 rng(1);
  for (int d = 1; d <= 3; ++d) {
    LatticeVolume vol = LatticeVolume::cube(d, 4);
    for (int k = 0; k < 10; ++k) {
      SiteSet V = random_nonempty_subset(vol, rng, 0.5);
      double c = 0.5 + 10.0 * k;
      MatrixXd R = resolvent_direct(vol, V, c);
      // R_V (c 1_V + d_{V,dV} 1_{dV}) = 1_V, where the boundary source counts all outside neighbours.
      VectorXd ones = VectorXd::Ones(vol.size());
      VectorXd src = VectorXd::Constant(V.size(), c) + neighbor_source(vol, V, &ones, BoundaryField::constant(1.0));
      EXPECT_LT((R * src - VectorXd::Ones(V.size())).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_GE(R.minCoeff(), 0.0);
    }
  }
}

TEST(Resolvent, DiagonalMonotoneInVolume) {
  LatticeVolume vol = LatticeVolume::cube(2, 5);
  std::mt19937_64 rng(5);
  int x = vol.index({2, 2});
  for (int k = 0; k < 20; ++k) {
    SiteSet small{x};
    SiteSet big = set_union(small, random_nonempty_subset(vol, rng, 0.4));
    SiteSet bigger = set_union(big, random_nonempty_subset(vol, rng, 0.4));
    double c = 1.0;
    auto diag = [&](const SiteSet& V) {
      MatrixXd R = resolvent_direct(vol, V, c);
      auto it = std::find(V.begin(), V.end(), x);
      return R(it - V.begin(), it - V.begin());
    };
    EXPECT_LE(diag(small), diag(big) + 1e-15);
    EXPECT_LE(diag(big), diag(bigger) + 1e-15);
  }
}

TEST(Minimizer, ConstantPlusIsMStar) {
  LatticeVolume vol({3, 3});
  ModelParams p = params(0.3, 2.5, 1.2, 2);
  VectorXd m = minimizer(vol, vol.all_sites(), p, constant_spins(vol, 1), Field::Zero(vol.size()),
                         BoundaryField::constant(p.m_star));
  EXPECT_LT((m.array() - p.m_star).abs().maxCoeff(), 1e-12);
}

TEST(Minimizer, SingleSiteWorstCase) {
  LatticeVolume vol = LatticeVolume::cube(3, 3);
  ModelParams p = params(0.01, 10.0, 1.0, 3);
  double A2 = 1.5;
  int x = 13;
  Field ext = Field::Constant(vol.size(), p.m_star + A2);
  Spins s = constant_spins(vol, 1);
  s[x] = -1;
  VectorXd m = minimizer(vol, {x}, p, s, Field::Zero(vol.size()), BoundaryField::constant(p.m_star + A2), &ext);
  double c = p.c();
  EXPECT_NEAR(m[0], -p.m_star + (2 * p.m_star + A2) * 6.0 / (c + 6.0), 1e-12);
}

TEST(Minimizer, FieldShiftBounded) {
  LatticeVolume vol = LatticeVolume::cube(2, 4);
  ModelParams p = params(0.2, 3.0, 1.1, 2);
  p.delta = 0.3;
  std::mt19937_64 rng(9);
  for (int k = 0; k < 10; ++k) {
    Spins s = random_spins(vol.size(), rng);
    Field eta = random_eta(vol.size(), p.delta, rng);
    BoundaryField bc = BoundaryField::constant(p.m_star);
    VectorXd m1 = minimizer(vol, vol.all_sites(), p, s, eta, bc);
    VectorXd m0 = minimizer(vol, vol.all_sites(), p, s, Field::Zero(vol.size()), bc);
    EXPECT_LE((m1 - m0).cwiseAbs().maxCoeff(), p.delta / p.a + 1e-12);
  }
}

TEST(Minimizer, ConditionalNeedsBoundary) {
  LatticeVolume vol({3});
  ModelParams p = params(0.2, 1.0, 1.0, 1);
  EXPECT_THROW(minimizer(vol, {0}, p, constant_spins(vol, 1), Field::Zero(3), BoundaryField::constant(1)),
               std::domain_error);
}

TEST(MinEnergy, ClosedFormMatchesDirect) {
  std::mt19937_64 rng(2);
  for (auto ext : {std::vector<int>{3}, std::vector<int>{3, 3}, std::vector<int>{2, 3, 2}}) {
    LatticeVolume vol(ext);
    ModelParams p = params(0.15, 4.0, 1.3, vol.dim());
    for (int k = 0; k < 10; ++k) {
      Spins s = random_spins(vol.size(), rng);
      Field eta = random_eta(vol.size(), 0.4, rng);
      BoundaryField bc = BoundaryField::constant(k % 2 ? p.m_star : -p.m_star);
      bc.overrides[{-1, 0, 0}] = 1.7;
      double a = min_energy(vol, p, s, eta, bc), b = min_energy_direct(vol, p, s, eta, bc);
      EXPECT_NEAR(a, b, 1e-9 * (1 + std::abs(b)));
      // direct minimization is a genuine minimum
      QuadraticModel qm = quadratic_model(vol, p, s, eta, bc);
      VectorXd m = qm.argmin();
      EXPECT_NEAR(hamiltonian(vol, p, s, eta, bc, m), b, 1e-9 * (1 + std::abs(b)));
    }
  }
}

TEST(MinEnergy, PlusStateIsZero) {
  LatticeVolume vol({3, 3});
  ModelParams p = params(0.4, 2.0, 1.0, 2);
  EXPECT_NEAR(min_energy(vol, p, constant_spins(vol, 1), Field::Zero(9), BoundaryField::constant(2.0)), 0.0, 1e-12);
}

TEST(MinEnergy, JointFlip) {
  LatticeVolume vol({4});
  ModelParams p = params(0.3, 2.0, 1.0, 1);
  std::mt19937_64 rng(4);
  Spins s = random_spins(4, rng), ms(4);
  for (int i = 0; i < 4; ++i) ms[i] = -s[i];
  Field eta = random_eta(4, 0.5, rng);
  BoundaryField bc = BoundaryField::constant(1.3);
  EXPECT_NEAR(min_energy(vol, p, s, eta, bc), min_energy(vol, p, ms, -eta, bc.negated()), 1e-11);
}

TEST(QuadraticForm, Sandwich) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  LatticeVolume vol = LatticeVolume::cube(3, 3);
  ModelParams p = params(0.07, 1.0, 1.1, 3);
  for (int k = 0; k < 50; ++k) {
    SiteSet G = random_nonempty_subset(vol, rng, 0.5);
    MatrixXd Q = precision(vol, G, p);
    VectorXd v(G.size());
    for (auto& e : v) e = g(rng);
    double f = v.dot(Q * v);
    EXPECT_GE(f, p.a * v.squaredNorm() - 1e-12);
    EXPECT_LE(f, (p.a + 4 * 3 * p.q) * v.squaredNorm() + 1e-12);
  }
}

TEST(EnergySplit, ExactDecomposition) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  LatticeVolume vol({2, 2});
  ModelParams p = params(0.3, 2.0, 1.05, 2);
  for (int k = 0; k < 50; ++k) {
    SiteSet G = random_nonempty_subset(vol, rng, 0.4);
    Spins s = random_spins(4, rng);
    Field eta = random_eta(4, 0.3, rng);
    BoundaryField bc = BoundaryField::constant(p.m_star + g(rng));
    EnergySplit es = energy_split(vol, G, p, s, eta, bc);
    VectorXd m(4);
    for (auto& e : m) e = 3 * g(rng);
    double H = hamiltonian(vol, p, s, eta, bc, m);
    EXPECT_NEAR(es.evaluate(m).total(), H, 1e-9 * (1 + std::abs(H)));
  }
}

TEST(EnergySplit, VanishesAtMinimizer) {
  LatticeVolume vol({3, 2});
  ModelParams p = params(0.2, 1.5, 1.0, 2);
  Spins s{1, -1, 1, 1, -1, -1};
  Field eta = Field::LinSpaced(6, -0.2, 0.2);
  BoundaryField bc = BoundaryField::constant(1.5);
  EnergySplit es = energy_split(vol, {0}, p, s, eta, bc);
  auto parts = es.evaluate(quadratic_model(vol, p, s, eta, bc).argmin());
  EXPECT_NEAR(parts.outer, 0, 1e-12);
  EXPECT_NEAR(parts.inner, 0, 1e-12);
}

TEST(EnergySplit, EmptyGIsSingleForm) {
  LatticeVolume vol({3});
  ModelParams p = params(0.2, 1.5, 1.0, 1);
  Spins s{1, -1, 1};
  EnergySplit es = energy_split(vol, {}, p, s, Field::Zero(3), BoundaryField::constant(1.5));
  EXPECT_TRUE(es.boundary.empty());
  EXPECT_EQ(es.interior.size(), 3u);
  EXPECT_LT((es.inner_matrix - precision(vol, vol.all_sites(), p)).norm(), 1e-15);
}

TEST(EnergySplit, InnerMatrixBlockDiagonalOverComponents) {
  LatticeVolume vol({5});
  ModelParams p = params(0.2, 1.5, 1.0, 1);
  EnergySplit es = energy_split(vol, {2}, p, constant_spins(vol, 1), Field::Zero(5), BoundaryField::constant(1));
  EXPECT_EQ(es.boundary, (SiteSet{1, 3}));
  // interior {0,2,4}: three separate components
  MatrixXd M = es.inner_matrix;
  EXPECT_EQ(M(0, 1), 0.0);
  EXPECT_EQ(M(1, 2), 0.0);
}

TEST(DetSplit, Identities) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  MatrixXd A(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) A(i, j) = g(rng);
  MatrixXd Q = A * A.transpose() + MatrixXd::Identity(6, 6);
  double det = Q.determinant();
  DetSplit ds = det_split(Q, {1, 4});
  EXPECT_NEAR(ds.projected * ds.complement, det, 1e-9 * det);
  DetSplit all = det_split(Q, {0, 1, 2, 3, 4, 5});
  EXPECT_NEAR(all.projected, det, 1e-9 * det);
  EXPECT_DOUBLE_EQ(all.complement, 1.0);
  MatrixXd one(1, 1);
  one << 3.5;
  EXPECT_NEAR(det_split(one, {0}).projected, 3.5, 1e-14);
}

TEST(GaussianPartition, SingleSiteQuadrature) {
  LatticeVolume vol({1});
  ModelParams p = params(0.3, 2.0, 1.2, 1);
  Spins s{-1};
  Field eta = Field::Constant(1, 0.1);
  BoundaryField bc = BoundaryField::constant(2.0);
  auto f = [&](double m) {
    VectorXd v(1);
    v << m;
    return std::exp(-hamiltonian(vol, p, s, eta, bc, v));
  };
  double ref = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -30.0, 30.0, 15, 1e-14);
  EXPECT_NEAR(gaussian_partition(vol, p, s, eta, bc), ref, 1e-8 * ref);
}

TEST(GaussianPartition, TwoSiteQuadrature) {
  LatticeVolume vol({2});
  ModelParams p = params(0.3, 1.5, 1.0, 1);
  Spins s{1, -1};
  Field eta(2);
  eta << 0.2, -0.1;
  BoundaryField bc = BoundaryField::constant(1.5);
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  auto outer = [&](double x) {
    auto inner = [&](double y) {
      VectorXd v(2);
      v << x, y;
      return std::exp(-hamiltonian(vol, p, s, eta, bc, v));
    };
    return GK::integrate(inner, -25.0, 25.0, 15, 1e-14);
  };
  double ref = GK::integrate(outer, -25.0, 25.0, 15, 1e-13);
  EXPECT_NEAR(gaussian_partition(vol, p, s, eta, bc), ref, 1e-8 * ref);
}

TEST(GaussianPartition, RatioDependsOnlyOnMinEnergy) {
  LatticeVolume vol({3});
  ModelParams p = params(0.3, 1.5, 1.0, 1);
  Spins s1{1, -1, 1}, s2{-1, -1, 1};
  Field eta = Field::Zero(3);
  BoundaryField bc = BoundaryField::constant(1.5);
  double lr = log_gaussian_partition(vol, p, s1, eta, bc) - log_gaussian_partition(vol, p, s2, eta, bc);
  EXPECT_NEAR(lr, min_energy(vol, p, s2, eta, bc) - min_energy(vol, p, s1, eta, bc), 1e-12);
}
