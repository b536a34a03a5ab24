#ifndef RFPHI4_POTENTIAL_HPP
#define RFPHI4_POTENTIAL_HPP

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaussian.hpp"
#include "quadrature.hpp"

namespace rfphi4 {

/**
 * \brief Single-site potential behind one evaluation interface.
 *
 * `phi4` is the double well (m^2 - m*^2)^2 / (8 m*^2). `gaussian_wells` is the
 * hypothetical potential whose Boltzmann factor is exactly the sum of the two
 * quadratic wells, so that the remainder w vanishes identically.
 */
struct Potential {
  enum class Kind { phi4, gaussian_wells } kind = Kind::phi4;

  static Potential phi4() { return {Kind::phi4}; }
  static Potential gaussian_wells() { return {Kind::gaussian_wells}; }
};

namespace detail {

inline double log_wells(double m, const ModelParams& p) {
  double up = -0.5 * p.a * (m - p.m_star) * (m - p.m_star);
  double dn = -0.5 * p.a * (m + p.m_star) * (m + p.m_star);
  return log_add_exp(up, dn);
}

}  // namespace detail

inline double potential_V(double m, const ModelParams& p, Potential pot = {}) {
  if (pot.kind == Potential::Kind::gaussian_wells) return p.b - detail::log_wells(m, p);
  double t = m * m - p.m_star * p.m_star;
  return t * t / (8.0 * p.m_star * p.m_star);
}

/// Quadratic well a/2 (m - sigma m*)^2 + b.
inline double well_Q(double m, int sigma, const ModelParams& p) {
  double u = m - sigma * p.m_star;
  return 0.5 * p.a * u * u + p.b;
}

/// log(1 + w(m)) where 1 + w = e^{-V + b} / (e^{-a/2 (m-m*)^2} + e^{-a/2 (m+m*)^2}).
inline double log1p_w(double m, const ModelParams& p, Potential pot = {}) {
  if (pot.kind == Potential::Kind::gaussian_wells) return 0.0;
  return -potential_V(m, p, pot) + p.b - detail::log_wells(m, p);
}

inline double remainder_w(double m, const ModelParams& p, Potential pot = {}) { return std::expm1(log1p_w(m, p, pot)); }

struct PotentialValues {
  double V, Q, w;
};

inline PotentialValues evaluate(double m, int sigma, const ModelParams& p, Potential pot = {}) {
  return {potential_V(m, p, pot), well_Q(m, sigma, p), remainder_w(m, p, pot)};
}

/// T(sigma | m) = (1 + sigma tanh(a m* m)) / 2; the lower branch avoids cancellation.
inline double kernel_T(int sigma, double m, const ModelParams& p) {
  const double t = sigma * p.a * p.m_star * m;
  if (t >= 0) return 0.5 * (1.0 + std::tanh(t));
  const double e = std::exp(2 * t);
  return e / (1.0 + e);
}

/// Same kernel written as e^{-Q^sigma} / (e^{-Q^+} + e^{-Q^-}).
inline double kernel_T_ratio(int sigma, double m, const ModelParams& p) {
  return 1.0 / (1.0 + std::exp(well_Q(m, sigma, p) - well_Q(m, -sigma, p)));
}

/// Upper tail P[G >= x] of a standard normal.
inline double normal_tail(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

/// int_lo^hi e^{-s/2 (m - mu)^2} dm, accurate in the tails.
inline double gauss_mass(double s, double mu, double lo, double hi) {
  if (!(hi > lo)) return 0.0;
  const double r = std::sqrt(s), pre = std::sqrt(2 * std::numbers::pi / s);
  double x = (lo - mu) * r, y = (hi - mu) * r;
  double pr;
  if (x >= 0)
    pr = normal_tail(x) - normal_tail(y);
  else if (y <= 0)
    pr = normal_tail(-y) - normal_tail(-x);
  else
    pr = 1.0 - normal_tail(-x) - normal_tail(y);
  return pre * pr;
}

/// Mass of e^{-s/2 (m - mu)^2} over U = U+ and -U+.
inline double gauss_mass_U(double s, double mu, const ModelParams& p) {
  return gauss_mass(s, mu, p.m_star - p.A2, p.m_star + p.A2) + gauss_mass(s, mu, -p.m_star - p.A2, -p.m_star + p.A2);
}

inline double gauss_mass_Uc(double s, double mu, const ModelParams& p) {
  const double lo = p.m_star - p.A2, hi = p.m_star + p.A2;
  return gauss_mass(s, mu, -std::numeric_limits<double>::infinity(), -hi) + gauss_mass(s, mu, -lo, lo) +
         gauss_mass(s, mu, hi, std::numeric_limits<double>::infinity());
}

struct ScanResult {
  double x = 0, value = -std::numeric_limits<double>::infinity();
};

/// Maximum of f on [lo, hi] from n equispaced samples, refined by golden section around the best one.
inline ScanResult scan_sup(const std::function<double(double)>& f, double lo, double hi, int n) {
  ScanResult best;
  if (n < 2 || !(hi > lo)) {
    best.x = lo;
    best.value = f(lo);
    return best;
  }
  int k_best = 0;
  const double step = (hi - lo) / (n - 1);
  for (int k = 0; k < n; ++k) {
    double x = lo + step * k, v = f(x);
    if (v > best.value) {
      best = {x, v};
      k_best = k;
    }
  }
  double l = lo + step * std::max(0, k_best - 1), r = lo + step * std::min(n - 1, k_best + 1);
  const double g = 0.5 * (std::sqrt(5.0) - 1);
  double x1 = r - g * (r - l), x2 = l + g * (r - l), f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 60 && r - l > 1e-12 * (1 + std::abs(l)); ++it) {
    if (f1 > f2) {
      r = x2;
      x2 = x1;
      f2 = f1;
      x1 = r - g * (r - l);
      f1 = f(x1);
    } else {
      l = x1;
      x1 = x2;
      f1 = f2;
      x2 = l + g * (r - l);
      f2 = f(x2);
    }
  }
  if (f1 > best.value) best = {x1, f1};
  if (f2 > best.value) best = {x2, f2};
  return best;
}

/**
 * \brief The parameter choice for the phi^4 double well together with its numerical checks.
 *
 * U+ = [m* - A2, m* + A2] with A2 = eps1 m*, A1 = A2 / 10 bounds the
 * distance of conditional minimizers from the wells.
 */
struct ParameterCertificate {
  double eps0 = 0, m_star = 0;
  int d = 1;
  double eps1 = 0, a = 0, b = 0, b_doubled = 0;
  double A1 = 0, A2 = 0, U_lo = 0, U_hi = 0;
  double q0 = 0, delta0 = 0, kappa = 0;
  /// Half-width of the centering range used in the supremum defining b.
  double m_hat_max = 0;
  /// Upper bound on the one-site Peierls constant from the closed-form estimate.
  double epsilon_peierls = 0;
  /// Direct quadrature value of the one-site Peierls constant (NaN if not measured).
  double epsilon_measured = std::numeric_limits<double>::quiet_NaN();
  double positivity_margin = std::numeric_limits<double>::quiet_NaN();
  std::map<std::string, bool> checks;

  ModelParams params(double q, double delta, bool doubled = false) const {
    ModelParams p;
    p.q = q;
    p.m_star = m_star;
    p.a = a;
    p.b = doubled ? b_doubled : b;
    p.delta = delta;
    p.A2 = A2;
    p.d = d;
    return p;
  }
  ModelParams params() const { return params(q0, delta0); }
  bool all_checks_pass() const {
    for (const auto& [k, v] : checks)
      if (!v) return false;
    return true;
  }
};

struct SiteCriteria {
  bool positivity_ok = false;
  double positivity_margin = 0;  ///< min over centerings of LHS - RHS of the positivity criterion
  double epsilon = 0;            ///< sup over centerings of the one-site Peierls integral
  double eps_center = 0, pos_center = 0;
  double quad_error = 0;
};

/// One-site Peierls integral int e^{-a/2 (m - mhat)^2} (w 1_U + (1 + w) 1_{U^c}) dm.
inline double peierls_integral(double mhat, const ModelParams& p, Potential pot = {}, double h = 0.5) {
  const double s = 1.0 / std::sqrt(p.a);
  const double R = std::max(p.m_star + p.A2, std::abs(mhat)) + 40 * s;
  const double lo = p.m_star - p.A2, hi = p.m_star + p.A2;
  auto lg = [&](double m) { return -0.5 * p.a * (m - mhat) * (m - mhat); };
  auto env = [&](double m) { return lg(m) + std::max(0.0, log1p_w(m, p, pot)); };
  Grid g = make_grid(env, -R, R, h * s, {-hi, -lo, 0.0, lo, hi, mhat});
  double sum = 0;
  for (int i = 0; i < g.size(); ++i) {
    double m = g.x[i], l = log1p_w(m, p, pot);
    double f = p.in_U(m) ? std::exp(lg(m)) * std::expm1(l) : std::exp(lg(m) + l);
    sum += g.w[i] * f;
  }
  return sum;
}

/// int e^{-(a + 4dq)/2 (m - mhat)^2} w 1_U dm.
inline double positivity_integral(double mhat, const ModelParams& p, Potential pot = {}, double h = 0.5) {
  const double s2 = p.a + 4 * p.d * p.q, s = 1.0 / std::sqrt(s2);
  const double lo = p.m_star - p.A2, hi = p.m_star + p.A2;
  double sum = 0;
  for (double sign : {1.0, -1.0}) {
    double L = sign > 0 ? lo : -hi, H = sign > 0 ? hi : -lo;
    auto lg = [&](double m) { return -0.5 * s2 * (m - mhat) * (m - mhat); };
    auto env = [&](double m) { return lg(m) + std::max(0.0, log1p_w(m, p, pot)); };
    std::vector<double> br;
    if (mhat > L && mhat < H) br.push_back(mhat);
    Grid g = make_grid(env, L, H, h * s, br);
    for (int i = 0; i < g.size(); ++i) sum += g.w[i] * std::exp(lg(g.x[i])) * remainder_w(g.x[i], p, pot);
  }
  return sum;
}

/**
 * \brief One-site positivity and Peierls criteria over centerings |mhat - m*| <= radius.
 *
 * Throws std::runtime_error when halving the panel width changes either
 * integral at the extremal centering by more than 1e-10 relative.
 */
inline SiteCriteria site_criteria_check(const ModelParams& p, double radius, Potential pot = {}, int samples = 65) {
  SiteCriteria out;
  auto pos = [&](double mh) { return positivity_integral(mh, p, pot) - gauss_mass_Uc(p.a, mh, p); };
  auto eps = [&](double mh) { return peierls_integral(mh, p, pot); };
  const double lo = p.m_star - radius, hi = p.m_star + radius;
  ScanResult e = scan_sup(eps, lo, hi, samples);
  ScanResult n = scan_sup([&](double mh) { return -pos(mh); }, lo, hi, samples);
  out.epsilon = e.value;
  out.eps_center = e.x;
  out.positivity_margin = -n.value;
  out.pos_center = n.x;
  out.positivity_ok = out.positivity_margin >= 0;
  double e2 = peierls_integral(e.x, p, pot, 0.25);
  double p2 = positivity_integral(n.x, p, pot, 0.25);
  double p1 = positivity_integral(n.x, p, pot);
  out.quad_error = std::max(std::abs(e2 - e.value), std::abs(p2 - p1));
  if (std::abs(e2 - e.value) > 1e-10 * std::abs(e.value) + 1e-300 ||
      std::abs(p2 - p1) > 1e-10 * std::abs(p1) + 1e-300)
    throw std::runtime_error("site_criteria_check: quadrature did not converge");
  return out;
}

inline SiteCriteria site_criteria_check(const ModelParams& p, const ParameterCertificate& cert, Potential pot = {}) {
  return site_criteria_check(p, cert.A1, pot);
}

/// Closed-form upper bound on the one-site Peierls constant at the certificate's (a, b, eps1, m*).
inline double peierls_bound(double a, double b, double eps1, double ms) {
  const double tp = 2 * std::numbers::pi;
  double t1 = std::sqrt(tp / (a - 2 * eps1)) * std::exp(a * eps1 * eps1 * eps1 * ms * ms / (100 * (a - 2 * eps1)));
  double t2 = std::sqrt(tp / a);
  double t3 = ms * std::exp(-(0.125 - a / 10) * (eps1 * ms) * (eps1 * ms));
  double t4 = 3 * std::sqrt(tp / a) * normal_tail(std::sqrt(a) * 0.9 * eps1 * ms);
  return 2 * std::exp(b) * (t1 - t2 + t3 + t4);
}

struct SelectOptions {
  int b_scan = 512;
  /// Run the quadrature site criteria and record them in `checks`.
  bool measure = true;
};

inline ParameterCertificate select_parameters(double eps0, double ms, int d, SelectOptions opt = {}) {
  if (!(eps0 > 0) || !(ms > 0)) throw std::domain_error("select_parameters: need eps0 > 0 and m* > 0");
  if (d < 1 || d > kMaxDim) throw std::domain_error("select_parameters: bad dimension");
  ParameterCertificate c;
  c.eps0 = eps0;
  c.m_star = ms;
  c.d = d;
  c.eps1 = std::cbrt(eps0) * std::pow(ms, -2.0 / 3.0);
  c.a = (2 + c.eps1) * (2 + c.eps1) / 4;
  if (!(c.a < 2)) throw std::domain_error("select_parameters: m* too small (a >= 2)");
  c.A2 = c.eps1 * ms;
  c.A1 = c.A2 / 10;
  if (!(c.A1 < c.A2)) throw std::domain_error("select_parameters: infeasible window");
  c.U_lo = ms - c.A2;
  c.U_hi = ms + c.A2;
  c.q0 = c.a / (2 * d) / (20 / c.eps1 + 9);
  c.delta0 = c.a * c.eps1 * ms / 20;
  const double e = c.eps1;
  c.kappa = ((2 + e) * (2 + e) * (2 - e) * (2 - e) + 1 - (1 + e) * (1 + e)) / 8;
  c.m_hat_max = c.A1;

  ModelParams p = c.params();
  p.b = 0;
  auto ratio = [&](double mh) { return gauss_mass_Uc(p.a, mh, p) / gauss_mass_U(p.a + 4 * d * p.q, mh, p); };
  double sup = scan_sup(ratio, ms - c.m_hat_max, ms + c.m_hat_max, opt.b_scan).value;
  double pre = std::log1p(std::exp(-c.kappa * ms * ms));
  c.b = pre + std::log1p(sup);
  c.b_doubled = pre + std::log1p(2 * sup);
  c.epsilon_peierls = peierls_bound(c.a, c.b, c.eps1, ms);
  c.checks["b_positive"] = c.b > 0;
  if (opt.measure) {
    SiteCriteria sc = site_criteria_check(c.params(), c);
    c.epsilon_measured = sc.epsilon;
    c.positivity_margin = sc.positivity_margin;
    c.checks["positivity"] = sc.positivity_ok;
    c.checks["measured_below_bound"] = sc.epsilon <= c.epsilon_peierls;
  }
  return c;
}

struct RangeReport {
  bool conditions_ok = false;
  double q_limit = 0, delta_limit = 0;
  /// Worst distance from the well at eta = 0, attained for a single site with wrong-sign neighbours.
  double single_site_gap = 0;
  /// single_site_gap + delta / a, a bound on the distance for any G.
  double bound = 0;
  double observed_max = 0;
  int instances = 0;
};

/// Largest |m_x - m* sigma_x| over x in G for the conditional minimizer on G.
inline double minimizer_gap(const LatticeVolume& vol, const SiteSet& G, const ModelParams& p, const Spins& sigma,
                            const Field& eta, const BoundaryField& mtilde, const Field& ext) {
  VectorXd m = minimizer(vol, G, p, sigma, eta, mtilde, &ext);
  double g = 0;
  for (size_t i = 0; i < G.size(); ++i) g = std::max(g, std::abs(m[i] - p.m_star * sigma[G[i]]));
  return g;
}

inline RangeReport range_check(const ModelParams& p, double A1, double A2, int instances = 200,
                               std::uint64_t seed = 1) {
  if (!(A1 <= A2)) throw std::domain_error("range_check: need A1 <= A2");
  RangeReport r;
  const double ms = p.m_star;
  r.q_limit = p.a / (2 * p.d) / ((2 * ms + A2) / A1 - 1);
  r.delta_limit = p.a * A1 / 2;
  r.conditions_ok = p.q <= r.q_limit && p.delta <= r.delta_limit;
  const double k = 2 * p.d * p.q / (p.a + 2 * p.d * p.q);
  r.single_site_gap = (2 * ms + A2) * k;
  r.bound = r.single_site_gap + p.delta / p.a;

  LatticeVolume vol = LatticeVolume::cube(p.d, p.d == 3 ? 3 : 4);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto in_U = [&]() { return (unit(rng) < 0.5 ? -1 : 1) * (ms - A2 + 2 * A2 * unit(rng)); };
  for (int it = 0; it < instances; ++it) {
    SiteSet G{static_cast<int>(unit(rng) * vol.size())};
    int target = 1 + static_cast<int>(unit(rng) * 4);
    while (static_cast<int>(G.size()) < target) {
      SiteSet b = outer_boundary(vol, G);
      if (b.empty()) break;
      G = set_union(G, {b[static_cast<int>(unit(rng) * b.size())]});
    }
    Spins s(vol.size());
    Field eta(vol.size()), ext(vol.size());
    for (int x = 0; x < vol.size(); ++x) {
      s[x] = unit(rng) < 0.5 ? -1 : 1;
      eta[x] = p.delta * (2 * unit(rng) - 1);
      ext[x] = in_U();
    }
    BoundaryField bc = BoundaryField::constant(ms);
    for (int x : G)
      for (const Coord& c : vol.outside_neighbors(x)) bc.overrides[c] = in_U();
    r.observed_max = std::max(r.observed_max, minimizer_gap(vol, G, p, s, eta, bc, ext));
    ++r.instances;
  }
  // single site with every neighbour at the far edge of the opposite window
  LatticeVolume one = LatticeVolume::cube(p.d, 1);
  Field z = Field::Zero(1);
  double worst = minimizer_gap(one, {0}, p, {-1}, z, BoundaryField::constant(ms + A2), z);
  r.observed_max = std::max(r.observed_max, worst);
  ++r.instances;
  return r;
}

struct ThresholdScan {
  std::vector<std::pair<double, double>> epsilon_by_m_star;
  /// Smallest tested m* with measured epsilon <= eps0 / 10 (NaN if none).
  double m_star0 = std::numeric_limits<double>::quiet_NaN();
};

inline ThresholdScan peierls_threshold_scan(double eps0, int d, const std::vector<double>& m_stars) {
  ThresholdScan t;
  for (double ms : m_stars) {
    ParameterCertificate c = select_parameters(eps0, ms, d);
    t.epsilon_by_m_star.emplace_back(ms, c.epsilon_measured);
    if (std::isnan(t.m_star0) && c.epsilon_measured <= eps0 / 10) t.m_star0 = ms;
  }
  return t;
}

}  // namespace rfphi4

#endif
