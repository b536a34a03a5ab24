#ifndef RFPHI4_ANHARMONIC_HPP
#define RFPHI4_ANHARMONIC_HPP

#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "gaussian.hpp"
#include "lattice.hpp"
#include "potential.hpp"
#include "quadrature.hpp"

namespace rfphi4 {

constexpr int kMaxExpansionSites = 14;
constexpr int kMaxTensorSites = 3;
constexpr int kMaxAssemblySites = 4;

/**
 * \brief Terms of the polymer expansion of prod_{x in Lambda} (1 + w_x).
 *
 * For every nonempty G in Lambda the value is the product over connected
 * components G_i of 1[boundary of G_i inside Lambda lies in U] times
 * (prod_{G_i} (1[x not in U] + w_x) - prod_{G_i} 1[x not in U]).
 * `in_U` and `w` are indexed by site of `vol`.
 */
inline std::map<SiteSet, double> expand_product_identity(const LatticeVolume& vol, const SiteSet& lambda,
                                                         const std::vector<char>& in_U, const std::vector<double>& w) {
  const SiteSet L = normalized(lambda);
  if (static_cast<int>(L.size()) > kMaxExpansionSites)
    throw std::domain_error("expand_product_identity: volume exceeds " + std::to_string(kMaxExpansionSites) + " sites");
  std::map<SiteSet, double> terms;
  const std::uint64_t n = 1ull << L.size();
  for (std::uint64_t mask = 1; mask < n; ++mask) {
    SiteSet G = mask_to_set(mask, L);
    double value = 1;
    for (const SiteSet& Gi : connected_components(vol, G)) {
      bool gate = true;
      for (int y : outer_boundary(vol, Gi, L)) gate = gate && in_U[y];
      if (!gate) {
        value = 0;
        break;
      }
      double full = 1, bare = 1;
      for (int x : Gi) {
        full *= (in_U[x] ? 0.0 : 1.0) + w[x];
        bare *= in_U[x] ? 0.0 : 1.0;
      }
      value *= full - bare;
    }
    terms.emplace(std::move(G), value);
  }
  return terms;
}

/// Anharmonic activity of a connected G given the field on its boundary.
struct AnharmonicTerm {
  SiteSet support;
  /// Conditional minimizer on G (ordered as `support`).
  VectorXd center;
  double value = std::numeric_limits<double>::quiet_NaN();
  /// The two integrals whose difference is `value`: with prod (1[not U] + w) and with prod 1[not U].
  double i1 = std::numeric_limits<double>::quiet_NaN(), i2 = std::numeric_limits<double>::quiet_NaN();
  /// Product-form lower and upper bounds.
  double lower = 0, upper = 0;
  /// False when w < 0 somewhere on U, in which case the product bounds do not apply.
  bool bounds_valid = true;
  bool bounds_only = false;
};

namespace detail {

inline Grid site_grid(double mu, double var, const ModelParams& p, Potential pot) {
  const double s = std::sqrt(var), wide = std::max(s, 1.0);
  // far from the centre the integrand is bounded by e^{-V}, negligible beyond 40 units once m* >= 40
  double lo = mu - 40 * wide, hi = mu + 40 * wide;
  if (p.m_star < 40 * wide) {
    const double R = std::max(std::abs(mu), p.m_star + (std::isfinite(p.A2) ? p.A2 : 0.0)) + 40 * wide;
    lo = -R;
    hi = R;
  }
  std::vector<double> br{mu, 0.0};
  if (std::isfinite(p.A2))
    for (double e : {p.m_star - p.A2, p.m_star + p.A2}) {
      br.push_back(e);
      br.push_back(-e);
    }
  auto env = [&](double m) { return -0.5 * (m - mu) * (m - mu) / var + std::max(0.0, log1p_w(m, p, pot)); };
  return make_grid(env, lo, hi, s, br, 50.0);
}

inline std::vector<std::vector<double>> to_rows(const MatrixXd& A) {
  std::vector<std::vector<double>> r(A.rows(), std::vector<double>(A.cols()));
  for (int i = 0; i < A.rows(); ++i)
    for (int j = 0; j < A.cols(); ++j) r[i][j] = A(i, j);
  return r;
}

inline double site_min_w_on_U(const ModelParams& p, Potential pot) {
  if (!std::isfinite(p.A2)) return std::numeric_limits<double>::quiet_NaN();
  double mn = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 400; ++k) mn = std::min(mn, remainder_w(p.m_star - p.A2 + 2 * p.A2 * k / 400.0, p, pot));
  return mn;
}

}  // namespace detail

/**
 * \brief I_G = int dm_G e^{-dH_G} [prod (1[m not in U] + w) - prod 1[m not in U]].
 *
 * `ext` supplies the field on the in-box boundary of G; out-of-box neighbours
 * take `mtilde`. For |G| above the tensor cap only the product bounds are
 * computed and `bounds_only` is set.
 */
enum class WeightMode { value_and_bounds, value_only, bounds_only };

inline AnharmonicTerm anharmonic_weight(const LatticeVolume& vol, const SiteSet& G, const Field& ext, const Field& eta,
                                        const Spins& sigma, const BoundaryField& mtilde, const ModelParams& p,
                                        Potential pot = {}, WeightMode mode = WeightMode::value_and_bounds) {
  AnharmonicTerm t;
  t.support = normalized(G);
  if (t.support.empty() || !is_connected(vol, t.support))
    throw std::domain_error("anharmonic_weight: G must be nonempty and connected");
  if (!std::isfinite(p.A2)) throw std::domain_error("anharmonic_weight: window U must be finite");
  const int n = static_cast<int>(t.support.size());
  t.center = minimizer(vol, t.support, p, sigma, eta, mtilde, &ext);
  MatrixXd A = precision(vol, t.support, p);

  if (mode != WeightMode::value_only) {
    double lo = 1, hi = 1, bare = 1;
    for (int i = 0; i < n; ++i) {
      const double mu = t.center[i];
      lo *= positivity_integral(mu, p, pot);
      bare *= gauss_mass_Uc(p.a, mu, p);
      hi *= peierls_integral(mu, p, pot);
    }
    t.lower = lo - bare;
    t.upper = hi;
    t.bounds_valid = !(detail::site_min_w_on_U(p, pot) < 0);
  }
  if (mode == WeightMode::bounds_only || n > kMaxTensorSites) {
    t.bounds_only = true;
    return t;
  }
  MatrixXd S = spd_inverse(A);
  std::vector<Grid> grids;
  for (int i = 0; i < n; ++i) grids.push_back(detail::site_grid(t.center[i], S(i, i), p, pot));
  std::vector<int> vars(n);
  std::vector<double> mu(n);
  for (int i = 0; i < n; ++i) {
    vars[i] = i;
    mu[i] = t.center[i];
  }
  auto rows = detail::to_rows(A);
  FactorIntegrator f1(grids), f2(grids);
  f1.add_gaussian(vars, rows, mu);
  f2.add_gaussian(vars, rows, mu);
  for (int i = 0; i < n; ++i) {
    f1.add_unary_values(i, [&](double m) { return p.in_U(m) ? remainder_w(m, p, pot) : std::exp(log1p_w(m, p, pot)); });
    f2.add_unary_values(i, [&](double m) { return p.in_U(m) ? 0.0 : 1.0; });
  }
  t.i1 = f1.integral();
  t.i2 = f2.integral();
  t.value = t.i1 - t.i2;
  return t;
}

/// Pieces of the assembled coarse-grained weight.
struct WeightAssembly {
  double log_weight = 0;  ///< log Z_Lambda(sigma)
  double inf_h = 0;
  /// Contribution of each G (G empty included), each multiplied by e^{inf H} e^{b |Lambda|}.
  std::map<SiteSet, double> terms;
};

/**
 * \brief Z_Lambda(sigma) from the polymer representation over G in Lambda.
 *
 * Each term is (2 pi)^{|Lambda \ Gbar|/2} det(a - q Delta_{Lambda \ Gbar})^{-1/2}
 * times the integral over the boundary B of G (inside Lambda) of the outer
 * fluctuation Gaussian, the window indicators on B and the product of the
 * anharmonic activities of the components of G.
 */
inline WeightAssembly assemble_weight(const LatticeVolume& vol, const Spins& sigma, const Field& eta,
                                      const BoundaryField& mtilde, const ModelParams& p, Potential pot = {}) {
  if (vol.size() > kMaxAssemblySites) throw std::domain_error("assemble_weight: volume exceeds the assembly cap");
  if (!std::isfinite(p.A2)) throw std::domain_error("assemble_weight: window U must be finite");
  WeightAssembly out;
  const SiteSet all = vol.all_sites();
  out.inf_h = min_energy_direct(vol, p, sigma, eta, mtilde);
  const double log2pi = std::log(2 * std::numbers::pi);
  double sum = 0;
  const std::uint64_t n = 1ull << all.size();
  for (std::uint64_t mask = 0; mask < n; ++mask) {
    SiteSet G = mask_to_set(mask, all);
    SiteSet B = outer_boundary(vol, G);
    SiteSet rest = set_difference(all, set_union(G, B));
    double log_pre = 0;
    if (!rest.empty()) log_pre = 0.5 * rest.size() * log2pi - 0.5 * spd_log_det(precision(vol, rest, p));
    double term;
    if (G.empty()) {
      term = std::exp(log_pre);
    } else {
      auto comps = connected_components(vol, G);
      auto component_product = [&](const Field& ext) {
        double v = 1;
        for (const SiteSet& Gi : comps) {
          v *= anharmonic_weight(vol, Gi, ext, eta, sigma, mtilde, p, pot, WeightMode::value_only).value;
          if (v == 0) break;
        }
        return v;
      };
      if (B.empty()) {
        term = std::exp(log_pre) * component_product(Field::Zero(vol.size()));
      } else {
        if (B.size() > 3) throw std::domain_error("assemble_weight: boundary exceeds the outer cap");
        EnergySplit es = energy_split(vol, G, p, sigma, eta, mtilde);
        const GaussianSpec& og = es.outer;
        MatrixXd cov = spd_inverse(og.matrix);
        std::vector<Grid> grids;
        for (size_t j = 0; j < B.size(); ++j) {
          const double mu = og.center[j], var = cov(j, j), s = std::sqrt(var);
          const double lo = p.m_star - p.A2, hi = p.m_star + p.A2;
          auto env = [&](double m) {
            return p.in_U(m) ? -0.5 * (m - mu) * (m - mu) / var : -std::numeric_limits<double>::infinity();
          };
          grids.push_back(make_grid(env, -hi, hi, 0.5 * s, {-lo, lo, mu}));
        }
        FactorIntegrator fi(grids);
        std::vector<int> vars(B.size());
        std::vector<double> mu(B.size());
        for (size_t j = 0; j < B.size(); ++j) {
          vars[j] = static_cast<int>(j);
          mu[j] = og.center[j];
        }
        fi.add_gaussian(vars, detail::to_rows(og.matrix), mu);
        for (int j : vars) fi.add_unary_values(j, [&p](double m) { return p.in_U(m) ? 1.0 : 0.0; });
        // one factor per component, over the boundary sites it touches
        for (const SiteSet& Gi : comps) {
          SiteSet Bi = outer_boundary(vol, Gi);
          std::vector<int> scope;
          for (int y : Bi) scope.push_back(static_cast<int>(std::lower_bound(B.begin(), B.end(), y) - B.begin()));
          fi.add_values(scope, [&, Gi, Bi](const std::vector<double>& x) {
            Field e = Field::Zero(vol.size());
            for (size_t k = 0; k < Bi.size(); ++k) e[Bi[k]] = x[k];
            return anharmonic_weight(vol, Gi, e, eta, sigma, mtilde, p, pot, WeightMode::value_only).value;
          });
        }
        term = std::exp(log_pre) * fi.integral();
      }
    }
    out.terms.emplace(G, term);
    sum += term;
  }
  out.log_weight = -p.b * vol.size() - out.inf_h + std::log(sum);
  return out;
}

/**
 * \brief log Z_Lambda(sigma) by direct quadrature of int e^{-E} prod T(sigma_x | m_x).
 *
 * E is the original energy: gradient terms (with the ambient boundary field)
 * plus sum V(m_x) - eta_x m_x.
 */
inline double direct_log_weight(const LatticeVolume& vol, const Spins& sigma, const Field& eta,
                                const BoundaryField& mtilde, const ModelParams& p, Potential pot = {}) {
  const int n = vol.size();
  if (n > kMaxAssemblySites) throw std::domain_error("direct_log_weight: volume exceeds the assembly cap");
  std::vector<std::function<double(double)>> unary(n);
  for (int x = 0; x < n; ++x) {
    std::vector<double> nb;
    for (const Coord& c : vol.outside_neighbors(x)) nb.push_back(mtilde.at(c));
    const double ex = eta[x];
    const int sx = sigma[x];
    unary[x] = [=, &p](double m) {
      double v = -potential_V(m, p, pot) + ex * m + std::log(kernel_T(sx, m, p));
      for (double y : nb) v -= 0.5 * p.q * (m - y) * (m - y);
      return v;
    };
  }
  std::vector<Grid> grids;
  for (int x = 0; x < n; ++x) {
    const double ex = eta[x];
    std::vector<double> nb;
    for (const Coord& c : vol.outside_neighbors(x)) nb.push_back(mtilde.at(c));
    auto env = [&](double m) {
      double v = -potential_V(m, p, pot) + ex * m;
      for (double y : nb) v -= 0.5 * p.q * (m - y) * (m - y);
      return v;
    };
    const double R = p.m_star + (std::isfinite(p.A2) ? p.A2 : 0.0) + 40;
    std::vector<double> br{0.0, p.m_star, -p.m_star};
    grids.push_back(make_grid(env, -R, R, 0.5, br));
  }
  FactorIntegrator fi(grids);
  for (int x = 0; x < n; ++x) {
    fi.add_unary(x, unary[x]);
    for (int y : vol.neighbors(x))
      if (y > x) fi.add_pair(x, y, [&p](double u, double v) { return -0.5 * p.q * (u - v) * (u - v); });
  }
  return fi.log_integral();
}

}  // namespace rfphi4

#endif
