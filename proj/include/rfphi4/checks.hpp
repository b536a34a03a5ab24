#ifndef RFPHI4_CHECKS_HPP
#define RFPHI4_CHECKS_HPP

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "anharmonic.hpp"
#include "contour.hpp"
#include "gaussian.hpp"
#include "ising_image.hpp"
#include "lattice.hpp"
#include "potential.hpp"
#include "random_walk.hpp"
#include "simulation.hpp"

namespace rfphi4 {

/** \brief Outcome of one acceptance check. */
struct CheckResult {
  int id = 0;
  std::string name;
  bool numeric_ok = false;
  bool runtime_ok = false;
  double seconds = 0;
  double time_limit = 0;
  std::map<std::string, double> measured;
  std::string note;

  bool passed() const { return numeric_ok && runtime_ok; }
};

/// Named tolerance overrides; unknown names fall back to the stated defaults.
using Tolerances = std::map<std::string, double>;

inline double tol_or(const Tolerances& t, const std::string& k, double def) {
  auto it = t.find(k);
  return it == t.end() ? def : it->second;
}

namespace detail {

inline SiteSet random_subset(const LatticeVolume& vol, std::mt19937_64& rng, double keep) {
  std::bernoulli_distribution b(keep);
  SiteSet s;
  while (s.empty())
    for (int x = 0; x < vol.size(); ++x)
      if (b(rng)) s.push_back(x);
  return s;
}

inline Spins random_signs(int n, std::mt19937_64& rng, double pminus = 0.5) {
  std::bernoulli_distribution b(pminus);
  Spins s(n);
  for (auto& v : s) v = b(rng) ? -1 : 1;
  return s;
}

inline Field uniform_field(int n, double delta, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-delta, delta);
  Field e(n);
  for (int i = 0; i < n; ++i) e[i] = u(rng);
  return e;
}

inline ModelParams plain_params(double a, double q, double ms, int d) {
  ModelParams p;
  p.a = a;
  p.q = q;
  p.m_star = ms;
  p.d = d;
  return p;
}

template <class F>
CheckResult timed(int id, std::string name, double limit, F&& body) {
  CheckResult r;
  r.id = id;
  r.name = std::move(name);
  r.time_limit = limit;
  auto t0 = std::chrono::steady_clock::now();
  body(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.runtime_ok = r.seconds <= limit;
  return r;
}

}  // namespace detail

inline CheckResult check_resolvent_identity(const Tolerances& t = {}) {
  return detail::timed(1, "resolvent-identity", 10, [&](CheckResult& r) {
    const double tol = tol_or(t, "resolvent_residual", 1e-10);
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> cu(0.1, 100);
    double worst = 0;
    for (int k = 0; k < 50; ++k) {
      const int d = 1 + k % 3;
      auto vol = LatticeVolume::cube(d, 4);
      SiteSet V = detail::random_subset(vol, rng, 0.5);
      const double c = cu(rng);
      MatrixXd R = resolvent_direct(vol, V, c);
      VectorXd ones = VectorXd::Ones(vol.size());
      VectorXd src = VectorXd::Constant(V.size(), c) + neighbor_source(vol, V, &ones, BoundaryField::constant(1.0));
      worst = std::max(worst, (R * src - VectorXd::Ones(V.size())).cwiseAbs().maxCoeff());
    }
    r.measured["max_residual"] = worst;
    r.numeric_ok = worst <= tol;
  });
}

inline CheckResult check_walk_completeness(const Tolerances& t = {}) {
  return detail::timed(2, "walk-kernel-completeness", 60, [&](CheckResult& r) {
    const double slack_rel = tol_or(t, "walk_slack", 1e-14);
    double worst_ratio = 0;
    bool ok = true;
    for (auto ext : {std::vector<int>{3, 3}, std::vector<int>{5}}) {
      LatticeVolume vol(ext);
      for (double c : {1.0, 10.0}) {
        WalkKernelTable tab = walk_kernels(vol, vol.all_sites(), c, 20);
        MatrixXd R = resolvent_direct(vol, vol.all_sites(), c);
        MatrixXd diff = tab.sum() - R;
        const double slack = slack_rel * R.cwiseAbs().maxCoeff();
        const double err = diff.cwiseAbs().maxCoeff();
        ok = ok && err <= tab.truncation + slack && diff.maxCoeff() <= slack;
        worst_ratio = std::max(worst_ratio, err / (tab.truncation + slack));
      }
    }
    r.measured["max_error_over_tail"] = worst_ratio;
    r.numeric_ok = ok;
  });
}

inline CheckResult check_energy_split(const Tolerances& t = {}) {
  return detail::timed(3, "energy-split", 30, [&](CheckResult& r) {
    const double tol = tol_or(t, "split_relative", 1e-9);
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> u(0, 1);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> side(1, 3);
    double worst = 0;
    for (int k = 0; k < 100; ++k) {
      const int d = side(rng);
      std::vector<int> ext(d);
      for (int& e : ext) e = side(rng);
      LatticeVolume vol(ext);
      ModelParams p = detail::plain_params(1 + 0.5 * u(rng), 0.05 + u(rng), 1 + 4 * u(rng), d);
      SiteSet G = detail::random_subset(vol, rng, 0.4);
      Spins s = detail::random_signs(vol.size(), rng);
      Field eta = detail::uniform_field(vol.size(), 0.5, rng);
      BoundaryField bc = BoundaryField::constant(p.m_star + g(rng));
      for (int x = 0; x < vol.size(); ++x)
        for (const Coord& c : vol.outside_neighbors(x))
          if (u(rng) < 0.3) bc.overrides[c] = -p.m_star + g(rng);
      VectorXd m(vol.size());
      for (auto& e : m) e = p.m_star * g(rng);
      EnergySplit es = energy_split(vol, G, p, s, eta, bc);
      double H = hamiltonian(vol, p, s, eta, bc, m);
      worst = std::max(worst, std::abs(es.evaluate(m).total() - H) / (1 + std::abs(H)));
    }
    r.measured["max_scaled_error"] = worst;
    r.numeric_ok = worst <= tol;
  });
}

inline CheckResult check_det_ratio(const Tolerances& t = {}) {
  return detail::timed(4, "determinant-ratio-series", 60, [&](CheckResult& r) {
    const double slack = tol_or(t, "det_slack", 1e-13);
    double worst = 0;
    bool ok = true;
    std::vector<std::pair<std::vector<int>, SiteSet>> cases;
    for (int n = 2; n <= 6; ++n) {
      cases.push_back({{n}, {0}});
      cases.push_back({{n}, {n / 2}});
    }
    cases.push_back({{3, 3}, {0}});
    cases.push_back({{3, 3}, {4}});
    for (const auto& [ext, G] : cases) {
      LatticeVolume vol(ext);
      for (double c : {50.0, 100.0}) {
        DetRatioSeries s = det_ratio_series(vol, G, 1, c, vol.dim() == 1 ? 12 : 10);
        double direct = det_ratio_direct(vol, G, 1, c);
        double err = std::abs(s.log_ratio - direct);
        ok = ok && err <= s.error_bound + slack;
        worst = std::max(worst, err / (s.error_bound + slack));
      }
    }
    r.measured["max_error_over_tail"] = worst;
    r.numeric_ok = ok;
  });
}

inline CheckResult check_product_identity(const Tolerances& t = {}) {
  return detail::timed(5, "product-expansion-identity", 5, [&](CheckResult& r) {
    const double tol = tol_or(t, "product_relative", 1e-12);
    std::mt19937_64 rng(505);
    std::uniform_real_distribution<double> wd(-0.9, 2.0), u(0, 1);
    LatticeVolume box({4, 4});
    double worst = 0;
    for (int k = 0; k < 200; ++k) {
      SiteSet L;
      for (int x = 0; x < box.size(); ++x)
        if (u(rng) < 0.6 && L.size() < 10) L.push_back(x);
      if (L.empty()) L.push_back(0);
      std::vector<char> in(box.size());
      std::vector<double> w(box.size());
      for (int x = 0; x < box.size(); ++x) {
        in[x] = u(rng) < 0.5;
        w[x] = wd(rng);
      }
      double ref = 1, sum = 1;
      for (int x : L) ref *= 1 + w[x];
      for (const auto& [G, v] : expand_product_identity(box, L, in, w)) sum += v;
      worst = std::max(worst, std::abs(sum - ref) / std::max(1.0, std::abs(ref)));
    }
    r.measured["max_relative_error"] = worst;
    r.numeric_ok = worst <= tol;
  });
}

inline CheckResult check_certificate(const Tolerances& t = {}) {
  return detail::timed(6, "certificate-eps0-0.1-mstar-100", 120, [&](CheckResult& r) {
    const double target = tol_or(t, "peierls_target", 0.01);
    ParameterCertificate c = select_parameters(0.1, 100, 3);
    ModelParams p = c.params();
    const double eps = c.epsilon_measured;
    r.measured["a"] = c.a;
    r.measured["b"] = c.b;
    r.measured["q0"] = c.q0;
    r.measured["delta0"] = c.delta0;
    r.measured["positivity_margin"] = c.positivity_margin;
    r.measured["epsilon_measured"] = eps;
    r.measured["epsilon_target"] = target;
    // two-site activities on random contexts against eps^2
    LatticeVolume vol = LatticeVolume::cube(3, 3);
    std::mt19937_64 rng(606);
    std::uniform_real_distribution<double> u(0, 1);
    double worst_ratio = 0, min_value = 1e300;
    bool pair_ok = true;
    for (int k = 0; k < 20; ++k) {
      auto in_U = [&]() { return (u(rng) < 0.5 ? -1 : 1) * (p.m_star - p.A2 + 2 * p.A2 * u(rng)); };
      Field ext(vol.size()), eta(vol.size());
      Spins s(vol.size());
      BoundaryField bc = BoundaryField::constant(p.m_star);
      for (int x = 0; x < vol.size(); ++x) {
        ext[x] = in_U();
        eta[x] = p.delta * (2 * u(rng) - 1);
        s[x] = u(rng) < 0.5 ? -1 : 1;
        for (const Coord& y : vol.outside_neighbors(x)) bc.overrides[y] = in_U();
      }
      AnharmonicTerm a = anharmonic_weight(vol, {13, 14}, ext, eta, s, bc, p);
      min_value = std::min(min_value, a.value);
      worst_ratio = std::max(worst_ratio, a.value / (eps * eps));
      pair_ok = pair_ok && a.value >= -1e-12 && a.value <= target * target;
    }
    r.measured["pair_min_value"] = min_value;
    r.measured["pair_max_over_eps2"] = worst_ratio;
    const bool pos = c.checks.count("positivity") && c.checks.at("positivity");
    r.numeric_ok = pos && eps <= target && pair_ok;
    std::ostringstream o;
    o << "positivity " << (pos ? "holds" : "fails") << "; measured one-site eps " << eps << " vs " << target;
    r.note = o.str();
  });
}

inline CheckResult check_master_equivalence(const Tolerances& t = {}) {
  return detail::timed(7, "master-equivalence", 600, [&](CheckResult& r) {
    const double tol = tol_or(t, "master_relative", 1e-5);
    ModelParams p = select_parameters(0.1, 100, 1).params();
    std::mt19937_64 rng(707);
    std::uniform_real_distribution<double> u(-1, 1);
    double worst = 0;
    int count = 0;
    for (int n : {2, 3}) {
      LatticeVolume vol({n});
      Field eta(n);
      for (auto& e : eta) e = p.delta * u(rng);
      BoundaryField bc = BoundaryField::constant(p.m_star);
      bc.overrides[{-1, 0, 0}] = -p.m_star + 0.5 * p.A2 * u(rng);
      for (int mask = 0; mask < (1 << n); ++mask) {
        Spins s(n);
        for (int x = 0; x < n; ++x) s[x] = (mask >> x) & 1 ? 1 : -1;
        double lw = assemble_weight(vol, s, eta, bc, p).log_weight;
        double d = direct_log_weight(vol, s, eta, bc, p);
        worst = std::max(worst, std::abs(std::expm1(lw - d)));
        ++count;
      }
    }
    r.measured["max_relative_error"] = worst;
    r.measured["configurations"] = count;
    r.numeric_ok = worst <= tol;
  });
}

inline CheckResult check_contour_constants(const Tolerances& t = {}) {
  return detail::timed(8, "gaussian-contour-constants", 60, [&](CheckResult& r) {
    const double tol = tol_or(t, "beta_abs", 1e-3);
    ModelParams p = detail::plain_params(1.0, 0.01, 40.0, 3);
    const double beta = peierls_beta(p);
    r.measured["beta"] = beta;
    auto vol = LatticeVolume::cube(3, 4);
    const int rr = interaction_range(p);
    RangeKernel K = range_kernel(vol, p.c(), rr, std::max(rr, walk_length_for(p.c(), 3, 1e-16)));
    std::mt19937_64 rng(808);
    std::uniform_real_distribution<double> u(0, 1);
    bool ok = true;
    double worst = -1e300;
    for (int k = 0; k < 100; ++k) {
      Spins s = detail::random_signs(vol.size(), rng, u(rng));
      LtActivity a = lt_activity(vol, s, BoundaryField::constant(p.m_star), p, rr, K);
      ok = ok && a.bound_ok;
      if (a.energy > 0) worst = std::max(worst, a.log_value - a.log_bound);
    }
    r.measured["range"] = rr;
    r.measured["max_log_value_minus_bound"] = worst;
    r.numeric_ok = std::abs(beta - 7.1206) <= tol && ok;
  });
}

inline CheckResult check_gibbs_ratio(const Tolerances& t = {}) {
  return detail::timed(9, "gibbs-ratio-gaussian", 30, [&](CheckResult& r) {
    const double max_ratio = tol_or(t, "gibbs_step_ratio", 0.5);
    ModelParams p = detail::plain_params(1.0, 0.5, 1.0, 1);
    p.delta = 0.2;
    std::mt19937_64 rng(909);
    std::vector<double> base(20);
    std::uniform_real_distribution<double> u(-p.delta, p.delta);
    for (auto& v : base) v = u(rng);
    std::vector<double> gaps;
    bool within = true;
    for (int n : {4, 6, 8, 10}) {
      auto vol = LatticeVolume::cube(1, n);
      const int mid = n / 2;
      Field eta(n);
      for (int x = 0; x < n; ++x) eta[x] = base[10 + x - mid];
      SiteSet L2;
      for (int x = 1; x < n - 1; ++x) L2.push_back(x);
      GibbsRatioResult g = gibbs_ratio_check(vol, L2, {mid - 1, mid}, constant_spins(vol, 1), eta, p);
      within = within && g.within;
      gaps.push_back(g.gap);
      r.measured["gap_n" + std::to_string(n)] = g.gap;
      r.measured["envelope_n" + std::to_string(n)] = g.envelope;
    }
    bool geometric = true;
    double worst = 0;
    for (size_t i = 1; i < gaps.size(); ++i) {
      double q = gaps[i] / gaps[i - 1];
      worst = std::max(worst, q);
      geometric = geometric && q <= max_ratio;
    }
    r.measured["max_step_ratio"] = worst;
    r.numeric_ok = within && geometric;
  });
}

inline CheckResult check_prop52(const Tolerances& t = {}) {
  return detail::timed(10, "coarse-graining-inequality", 300, [&](CheckResult& r) {
    (void)t;
    ModelParams p = select_parameters(0.1, 100, 1, {512, false}).params();
    std::mt19937_64 rng(1010);
    bool ok = true;
    double min_margin = 1e300, max_residual = -1e300;
    for (int k = 0; k < 20; ++k) {
      const int n = 1 + k % 3;
      auto vol = LatticeVolume::cube(1, n);
      Field eta = detail::uniform_field(n, p.delta, rng);
      if (k % 5 == 4) eta = Field::Constant(n, -p.delta);
      Prop52Result pr = prop52_check(vol, eta, BoundaryField::constant(p.m_star), p, n / 2);
      ok = ok && pr.holds;
      min_margin = std::min(min_margin, pr.margin);
      max_residual = std::max(max_residual, pr.residual);
    }
    r.measured["min_margin"] = min_margin;
    r.measured["max_residual"] = max_residual;
    r.numeric_ok = ok;
  });
}

/// q with the d = 1 single-bond Peierls constant equal to `beta` (bisection).
inline double matched_q_1d(const ModelParams& p3, double beta) {
  ModelParams p = p3;
  p.d = 1;
  double lo = 0, hi = 1;
  for (int i = 0; i < 200; ++i) {
    p.q = 0.5 * (lo + hi);
    (peierls_beta(p) < beta ? lo : hi) = p.q;
  }
  return 0.5 * (lo + hi);
}

struct OrderingProbeOptions {
  int realizations = 10;
  long sweeps = 4000;
  long burn_in = 1000;
  double m_star = 1300;
  int box = 8;
  int chain = 512;
};

inline CheckResult check_ordering_probe(const Tolerances& t = {}, OrderingProbeOptions o = {}) {
  return detail::timed(11, "ordering-probe", 1800, [&](CheckResult& r) {
    const double hi3 = tol_or(t, "order_3d_max", 0.1);
    const double lo1 = tol_or(t, "order_1d_min", 0.3);
    ParameterCertificate cert = select_parameters(0.1, o.m_star, 3, {512, false});
    ModelParams p3 = cert.params(cert.q0, cert.delta0 / 10);
    const double beta = peierls_beta(p3);
    r.measured["q_mstar2"] = p3.q * p3.m_star * p3.m_star;
    r.measured["delta"] = p3.delta;
    r.measured["beta"] = beta;

    EnsembleConfig e3;
    e3.extents = {o.box, o.box, o.box};
    e3.params = p3;
    e3.disorder = {p3.delta, p3.delta * p3.delta, 1111, DisorderLaw::truncated_gaussian};
    e3.boundary = p3.m_star;
    e3.realizations = o.realizations;
    e3.order.sweeps = o.sweeps;
    e3.order.burn_in = o.burn_in;
    e3.order.seed = 1112;
    e3.order.chain.algorithm = Algorithm::metropolis;
    int ordered = 0;
    double mean3 = 0;
    for (const auto& rr : run_ensemble(e3)) {
      ordered += rr.estimate.mean + 3 * rr.estimate.stderr_ < hi3;
      mean3 += rr.estimate.mean / o.realizations;
    }

    ModelParams p1 = p3;
    p1.d = 1;
    p1.q = matched_q_1d(p3, beta);
    EnsembleConfig e1 = e3;
    e1.extents = {o.chain};
    e1.params = p1;
    e1.disorder.seed = 1113;
    int disordered = 0;
    double mean1 = 0, exact1 = 0;
    int exact_disordered = 0;
    LatticeVolume chain({o.chain});
    for (const auto& rr : run_ensemble(e1)) {
      disordered += rr.estimate.mean - 3 * rr.estimate.stderr_ > lo1;
      mean1 += rr.estimate.mean / o.realizations;
      DisorderSpec ds = e1.disorder;
      ds.seed = rr.disorder_seed;
      Field eta = sample_disorder(chain, ds);
      double ex = chain_order_probability_exact(o.chain, eta, p1.m_star, p1.m_star, p1, centre_site(chain));
      exact1 += ex / o.realizations;
      exact_disordered += ex > lo1;
    }
    const int need = (8 * o.realizations + 9) / 10;
    r.measured["q_1d"] = p1.q;
    r.measured["ordered_3d"] = ordered;
    r.measured["mean_3d"] = mean3;
    r.measured["disordered_1d"] = disordered;
    r.measured["mean_1d"] = mean1;
    r.measured["exact_mean_1d"] = exact1;
    r.measured["exact_disordered_1d"] = exact_disordered;
    r.numeric_ok = ordered >= need && disordered >= need;
    std::ostringstream os;
    os << "3d ordered " << ordered << "/" << o.realizations << ", 1d disordered " << disordered << "/"
       << o.realizations << " (transfer operator: " << exact_disordered << "/" << o.realizations << ")";
    r.note = os.str();
  });
}

/** \brief A named check for the runner. */
struct CheckEntry {
  int id;
  std::string name;
  std::function<CheckResult(const Tolerances&)> run;
};

inline std::vector<CheckEntry> acceptance_checks() {
  return {
      {1, "resolvent-identity", check_resolvent_identity},
      {2, "walk-kernel-completeness", check_walk_completeness},
      {3, "energy-split", check_energy_split},
      {4, "determinant-ratio-series", check_det_ratio},
      {5, "product-expansion-identity", check_product_identity},
      {6, "certificate-eps0-0.1-mstar-100", check_certificate},
      {7, "master-equivalence", check_master_equivalence},
      {8, "gaussian-contour-constants", check_contour_constants},
      {9, "gibbs-ratio-gaussian", check_gibbs_ratio},
      {10, "coarse-graining-inequality", check_prop52},
      {11, "ordering-probe", [](const Tolerances& t) { return check_ordering_probe(t); }},
  };
}

inline std::string summary_line(const CheckResult& r) {
  std::ostringstream o;
  o << (r.passed() ? "PASS" : "FAIL") << " " << r.id << " " << r.name;
  for (const auto& [k, v] : r.measured) o << " " << k << "=" << v;
  o << " time=" << r.seconds << "s/" << r.time_limit << "s";
  if (!r.runtime_ok) o << " (over time limit)";
  if (!r.note.empty()) o << " [" << r.note << "]";
  return o.str();
}

}  // namespace rfphi4

#endif
