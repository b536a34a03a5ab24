#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "rfphi4/ising_image.hpp"

using namespace rfphi4;

namespace {

ModelParams gauss_params(double a, double q, double ms, int d, double b = 0.0) {
  ModelParams p;
  p.a = a;
  p.q = q;
  p.m_star = ms;
  p.d = d;
  p.b = b;
  return p;
}

ModelParams certified(double ms, int d) {
  static std::map<std::pair<double, int>, ParameterCertificate> cache;
  auto key = std::make_pair(ms, d);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, select_parameters(0.1, ms, d)).first;
  return it->second.params();
}

Field random_eta(int n, std::mt19937_64& rng, double delta) {
  std::uniform_real_distribution<double> u(-delta, delta);
  Field e(n);
  for (int i = 0; i < n; ++i) e[i] = u(rng);
  return e;
}

}  // namespace

TEST(BruteForce, KernelMarginalIsPartitionFunction) {
  ModelParams p = certified(20, 1);
  auto vol = LatticeVolume::cube(1, 2);
  std::mt19937_64 rng(1);
  Field eta = random_eta(2, rng, p.delta);
  BoundaryField bc = BoundaryField::constant(p.m_star);
  IsingWeightTable t = brute_force_image(vol, eta, bc, p);
  EXPECT_NEAR(t.log_Z, log_partition(vol, eta, bc, p), 1e-10 * std::abs(t.log_Z));
  for (double lw : t.log_weight) EXPECT_TRUE(std::isfinite(lw));
  double s = 0;
  for (std::uint32_t m = 0; m < 4; ++m) s += t.probability(m);
  EXPECT_NEAR(s, 1.0, 1e-14);
}

TEST(BruteForce, PlusBoundaryFavoursPlus) {
  ModelParams p = certified(20, 1);
  auto vol = LatticeVolume::cube(1, 2);
  IsingWeightTable t = brute_force_image(vol, Field::Zero(2), BoundaryField::constant(p.m_star), p);
  EXPECT_GT(t.prob_plus(0), 0.5);
  EXPECT_GT(t.prob_plus(1), 0.5);
}

TEST(BruteForce, JointNegationMapsWeights) {
  ModelParams p = certified(20, 1);
  auto vol = LatticeVolume::cube(1, 3);
  std::mt19937_64 rng(2);
  Field eta = random_eta(3, rng, p.delta);
  BoundaryField bc = BoundaryField::constant(p.m_star);
  bc.overrides[{-1, 0, 0}] = p.m_star - 0.5;
  IsingWeightTable t = brute_force_image(vol, eta, bc, p);
  IsingWeightTable f = brute_force_image(vol, Field(-eta), bc.negated(), p);
  for (std::uint32_t m = 0; m < 8; ++m) EXPECT_NEAR(t.log_weight[m], f.log_weight[7u ^ m], 1e-9);
}

TEST(BruteForce, GaussianWellsMatchClosedForm) {
  std::mt19937_64 rng(3);
  for (int n : {1, 2, 3}) {
    ModelParams p = gauss_params(1.05, 0.3, 4.0, 1, 0.02);
    auto vol = LatticeVolume::cube(1, n);
    Field eta = random_eta(n, rng, 0.3);
    BoundaryField bc = BoundaryField::constant(p.m_star);
    IsingWeightTable t = brute_force_image(vol, eta, bc, p, Potential::gaussian_wells());
    for (std::uint32_t m = 0; m < (1u << n); ++m) {
      double ref = log_gaussian_partition(vol, p, spins_from_mask(n, m), eta, bc) - n * p.b;
      EXPECT_NEAR(t.log_weight[m], ref, 1e-7 * std::abs(ref) + 1e-12);
    }
  }
}

TEST(BruteForce, SizeCap) {
  ModelParams p = gauss_params(1.0, 0.3, 3.0, 1);
  auto vol = LatticeVolume::cube(1, 5);
  EXPECT_THROW(brute_force_image(vol, Field::Zero(5), BoundaryField::constant(3.0), p), std::domain_error);
}

TEST(PairHamiltonian, RowSumIsInverseMass) {
  ModelParams p = gauss_params(1.2, 0.05, 10.0, 2);
  const int pad = pad_for(p, 2, 1e-13);
  const int rad = walk_length_for(p.c(), 2, 1e-13 * p.q);
  auto win = LatticeVolume::cube(2, 2 * rad + 1);
  PairCouplings pc = pair_hamiltonian(p, win, pad, 1e-12);
  const int o = win.index({rad, rad, 0});
  EXPECT_NEAR(pc.G.row(o).sum(), 1.0 / p.a, 1e-10);
  EXPECT_NEAR(pc.J(o, o), 0.5 * p.a * p.a * p.m_star * p.m_star * pc.G(o, o), 1e-12);
}

TEST(PairHamiltonian, CouplingsDecay) {
  for (int d : {1, 2, 3}) {
    ModelParams p = gauss_params(1.0, 0.02, 5.0, d);
    auto win = LatticeVolume::cube(d, d == 3 ? 5 : 7);
    PairCouplings pc = pair_hamiltonian(p, win, pad_for(p, d, 1e-10), 1e-9);
    const double rho = walk_decay(p.c(), d);
    for (int x = 0; x < win.size(); ++x)
      for (int y = 0; y < win.size(); ++y) EXPECT_LE(pc.J(x, y), pc.J(x, x) * std::pow(rho, win.distance(x, y)) + 1e-12);
  }
}

TEST(PairHamiltonian, WeakCouplingLimit) {
  ModelParams p = gauss_params(1.3, 1e-9, 7.0, 3);
  auto win = LatticeVolume::cube(3, 3);
  PairCouplings pc = pair_hamiltonian(p, win, 2, 1e-6);
  for (int x = 0; x < win.size(); ++x)
    for (int y = 0; y < win.size(); ++y) {
      if (x == y) {
        EXPECT_NEAR(pc.J(x, x), p.a * p.m_star * p.m_star / 2, 1e-6);
      } else {
        EXPECT_LT(std::abs(pc.J(x, y)), 1e-6);
      }
    }
}

TEST(PairHamiltonian, ThrowsOnSmallPadding) {
  ModelParams p = gauss_params(1.0, 0.5, 5.0, 1);
  EXPECT_THROW(pair_hamiltonian(p, LatticeVolume::cube(1, 3), 1, 1e-12), std::runtime_error);
}

TEST(ManyBody, GaussianWellsArePairwise) {
  ModelParams p = gauss_params(1.0, 0.3, 3.0, 1, 0.01);
  auto vol = LatticeVolume::cube(1, 3);
  ManyBody mb = many_body_extract(vol, Field::Zero(3), BoundaryField::constant(p.m_star), p,
                                  Potential::gaussian_wells());
  for (const auto& [C, v] : mb.coeff)
    if (C.size() >= 2) {
      EXPECT_LT(std::abs(v), 1e-8);
    }
  EXPECT_LT(mb.symmetry_error, 1e-8);
}

TEST(ManyBody, Phi4PairPotentialShrinksTowardsCertifiedRegime) {
  auto vol = LatticeVolume::cube(1, 2);
  double prev = std::numeric_limits<double>::infinity();
  for (double ms : {10.0, 20.0, 40.0}) {
    ModelParams p = certified(ms, 1);
    ManyBody mb = many_body_extract(vol, Field::Zero(2), BoundaryField::constant(p.m_star), p);
    double v = std::abs(mb.coeff.at({0, 1}));
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_LT(v, prev) << "m*=" << ms;
    EXPECT_LT(mb.symmetry_error, 1e-8);
    prev = v;
  }
}

TEST(ManyBody, JointFlipSymmetryThreeSites) {
  ModelParams p = certified(20, 1);
  auto vol = LatticeVolume::cube(1, 3);
  std::mt19937_64 rng(4);
  ManyBody mb = many_body_extract(vol, random_eta(3, rng, p.delta), BoundaryField::constant(p.m_star), p);
  EXPECT_LT(mb.symmetry_error, 1e-8);
  EXPECT_EQ(mb.max_by_size.size(), 3u);
  EXPECT_TRUE(std::isfinite(mb.gamma_fit));
}

TEST(GibbsRatio, GaussianModeWithinEnvelope) {
  ModelParams p = gauss_params(1.0, 0.5, 1.0, 1);
  p.delta = 0.2;
  auto vol = LatticeVolume::cube(1, 6);
  std::mt19937_64 rng(5);
  Field eta = random_eta(6, rng, p.delta);
  GibbsRatioResult r = gibbs_ratio_check(vol, {1, 2, 3, 4}, {2, 3}, constant_spins(vol, 1), eta, p);
  EXPECT_TRUE(r.within) << r.gap << " vs " << r.envelope;
  double s = 0;
  for (double v : r.lhs) s += v;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(GibbsRatio, GaussianGapShrinksGeometrically) {
  ModelParams p = gauss_params(1.0, 0.5, 1.0, 1);
  p.delta = 0.2;
  std::vector<double> gaps;
  std::mt19937_64 rng(6);
  std::vector<double> base(20);
  for (auto& v : base) v = std::uniform_real_distribution<double>(-p.delta, p.delta)(rng);
  for (int n : {4, 6, 8, 10}) {
    auto vol = LatticeVolume::cube(1, n);
    const int mid = n / 2;
    Field eta(n);
    for (int x = 0; x < n; ++x) eta[x] = base[10 + x - mid];
    SiteSet L2;
    for (int x = 1; x < n - 1; ++x) L2.push_back(x);
    GibbsRatioResult r = gibbs_ratio_check(vol, L2, {mid - 1, mid}, constant_spins(vol, 1), eta, p);
    EXPECT_TRUE(r.within) << "n=" << n;
    gaps.push_back(r.gap);
  }
  for (size_t i = 1; i < gaps.size(); ++i) EXPECT_LT(gaps[i], 0.5 * gaps[i - 1]);
}

TEST(GibbsRatio, Phi4FullOrderIsExact) {
  ModelParams p = certified(20, 1);
  auto vol = LatticeVolume::cube(1, 3);
  std::mt19937_64 rng(7);
  Field eta = random_eta(3, rng, p.delta);
  GibbsRatioOptions o;
  o.mode = ImageMode::phi4;
  std::vector<double> gaps;
  for (int k = 0; k <= 3; ++k) {
    o.phi_order = k;
    gaps.push_back(gibbs_ratio_check(vol, {0, 1, 2}, {0, 1, 2}, constant_spins(vol, 1), eta, p, o).gap);
  }
  EXPECT_LT(gaps[3], 1e-9);
  EXPECT_LT(gaps[3], gaps[0]);
  EXPECT_LE(gaps[2], gaps[0]);
}

TEST(FreeEnergy, WeakCouplingLimit) {
  ModelParams p = gauss_params(1.1, 1e-7, 10.0, 3, 0.03);
  const double e2 = 0.01;
  FreeEnergyConstant fe = free_energy_constant(p, e2, 6);
  double ref = -e2 / (2 * p.a) - 0.5 * std::log(p.a) - p.b + 0.5 * std::log(2 * std::numbers::pi);
  EXPECT_NEAR(fe.value, ref, 1e-6);
}

TEST(FreeEnergy, OneDimensionalClosedForms) {
  ModelParams p = gauss_params(1.0, 0.2, 3.0, 1);
  FreeEnergyConstant fe = free_energy_constant(p, 0.0, 60);
  const double s = p.a + 2 * p.q;
  EXPECT_NEAR(fe.g00, 1.0 / std::sqrt(s * s - 4 * p.q * p.q), 1e-12 + fe.tail_g00);
  EXPECT_NEAR(fe.log_diag, std::log((s + std::sqrt(s * s - 4 * p.q * p.q)) / 2), 1e-12 + fe.tail_log);
}

TEST(FreeEnergy, MatchesFiniteVolumeExtrapolation) {
  ModelParams p = gauss_params(1.0, 0.2, 3.0, 1);
  FreeEnergyConstant fe = free_energy_constant(p, 0.0, 60);
  std::vector<double> xs, ys;
  for (int N : {100, 200, 400}) {
    auto vol = LatticeVolume::cube(1, N);
    double ld = spd_log_det(precision(vol, vol.all_sites(), p));
    xs.push_back(1.0 / N);
    ys.push_back(-0.5 * ld / N + 0.5 * std::log(2 * std::numbers::pi));
  }
  // linear extrapolation in 1/N through the two largest volumes
  double slope = (ys[2] - ys[1]) / (xs[2] - xs[1]);
  double lim = ys[2] - slope * xs[2];
  EXPECT_NEAR(lim, fe.value, 1e-8);
}

TEST(FreeEnergy, LinearInFieldVariance) {
  ModelParams p = gauss_params(1.0, 0.05, 3.0, 3, 0.01);
  FreeEnergyConstant f0 = free_energy_constant(p, 0.0, 20);
  FreeEnergyConstant f1 = free_energy_constant(p, 0.04, 20);
  EXPECT_NEAR((f1.value - f0.value) / 0.04, -0.5 * f0.g00, 1e-12);
  EXPECT_LT(f1.value, f0.value);
  EXPECT_THROW(free_energy_constant(gauss_params(1.0, 0.5, 3.0, 3), 0.0, 10), std::domain_error);
}
