#ifndef RFPHI4_CONTOUR_HPP
#define RFPHI4_CONTOUR_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "gaussian.hpp"
#include "lattice.hpp"
#include "random_walk.hpp"

namespace rfphi4 {

struct ContourComponent {
  SiteSet support;
  std::vector<int> spins;  ///< sigma restricted to `support`
};

/** \brief Support plus the full spin configuration on the volume. */
struct Contour {
  SiteSet support;
  Spins spins;
  std::vector<ContourComponent> components;
};

inline Contour make_contour(const LatticeVolume& vol, const SiteSet& support, const Spins& sigma) {
  if (static_cast<int>(sigma.size()) != vol.size()) throw std::domain_error("make_contour: spin vector size");
  Contour g;
  g.support = normalized(support);
  g.spins = sigma;
  for (const SiteSet& comp : connected_components(vol, g.support)) {
    ContourComponent c;
    c.support = comp;
    for (int x : comp) c.spins.push_back(sigma[x]);
    g.components.push_back(std::move(c));
  }
  return g;
}

/// (sigma, +1 outside the box) is constant on each connected component of Z^d minus the support.
inline bool is_contour(const LatticeVolume& vol, const Contour& g) {
  auto inG = membership(vol, g.support);
  SiteSet rest;
  for (int x = 0; x < vol.size(); ++x)
    if (!inG[x]) rest.push_back(x);
  for (const SiteSet& comp : connected_components(vol, rest)) {
    bool exterior = false;
    for (int x : comp)
      if (!vol.outside_neighbors(x).empty()) exterior = true;
    int s = exterior ? 1 : g.spins[comp.front()];
    for (int x : comp)
      if (g.spins[x] != s) return false;
  }
  return true;
}

/// Inner support: sites within r of a disagreeing site, plus minus sites within r+1 of the exterior.
inline Contour extract_contour(const LatticeVolume& vol, const Spins& sigma, int r) {
  if (r < 1) throw std::domain_error("extract_contour: r must be at least 1");
  if (static_cast<int>(sigma.size()) != vol.size()) throw std::domain_error("extract_contour: spin vector size");
  SiteSet s;
  for (int x = 0; x < vol.size(); ++x) {
    bool in = sigma[x] == -1 && distance_to_exterior(vol, x) <= r + 1;
    for (int y = 0; y < vol.size() && !in; ++y)
      if (sigma[y] != sigma[x] && vol.distance(x, y) <= r) in = true;
    if (in) s.push_back(x);
  }
  return make_contour(vol, s, sigma);
}

namespace detail {

/// Connected subsets of the volume with diameter <= r, each visited once.
inline void enumerate_small_diameter(const LatticeVolume& vol, int r, const std::function<void(const SiteSet&)>& visit) {
  std::vector<int> cur;
  std::vector<char> inCur(vol.size(), 0);
  std::function<void(std::vector<int>, int)> extend = [&](std::vector<int> ext, int root) {
    visit(normalized(cur));
    while (!ext.empty()) {
      int w = ext.back();
      ext.pop_back();
      bool ok = true;
      for (int z : cur)
        if (vol.distance(z, w) > r) ok = false;
      if (!ok) continue;
      std::vector<int> next = ext;
      for (int u : vol.neighbors(w)) {
        if (u <= root || inCur[u]) continue;
        bool touches = false;
        for (int v : vol.neighbors(u))
          if (inCur[v]) touches = true;
        if (touches) continue;
        if (std::find(next.begin(), next.end(), u) == next.end()) next.push_back(u);
      }
      cur.push_back(w);
      inCur[w] = 1;
      extend(next, root);
      inCur[w] = 0;
      cur.pop_back();
    }
  };
  for (int root = 0; root < vol.size(); ++root) {
    cur = {root};
    inCur[root] = 1;
    std::vector<int> ext;
    for (int u : vol.neighbors(root))
      if (u > root) ext.push_back(u);
    extend(ext, root);
    inCur[root] = 0;
  }
}

inline bool touches_exterior(const LatticeVolume& vol, const SiteSet& C) {
  for (int x : C)
    if (!vol.outside_neighbors(x).empty()) return true;
  return false;
}

}  // namespace detail

/// Inner support as the union of connected C, diam(C) <= r, that carry a nonconstant sign
/// or touch the exterior with a minus sign.
inline SiteSet contour_support_union(const LatticeVolume& vol, const Spins& sigma, int r) {
  if (r < 1) throw std::domain_error("contour_support_union: r must be at least 1");
  std::vector<char> in(vol.size(), 0);
  detail::enumerate_small_diameter(vol, r, [&](const SiteSet& C) {
    bool plus = false, minus = false;
    for (int x : C) (sigma[x] > 0 ? plus : minus) = true;
    if ((plus && minus) || (minus && detail::touches_exterior(vol, C)))
      for (int x : C) in[x] = 1;
  });
  SiteSet s;
  for (int x = 0; x < vol.size(); ++x)
    if (in[x]) s.push_back(x);
  return s;
}

/// Disagreeing nearest-neighbour pairs inside the support plus minus sites' exterior bonds.
inline int naive_energy(const LatticeVolume& vol, const Contour& g) {
  auto inG = membership(vol, g.support);
  int e = 0;
  for (int x : g.support) {
    for (int y : vol.neighbors(x))
      if (y > x && inG[y] && g.spins[x] != g.spins[y]) ++e;
    if (g.spins[x] == -1) e += static_cast<int>(vol.outside_neighbors(x).size());
  }
  return e;
}

/**
 * \brief K_r(x,y): weight of walks x -> y in the volume whose range has diameter <= r.
 *
 * Equals the sum of the fixed-range kernels over connected C with diam(C) <= r,
 * up to walks longer than L (bounded by `truncation` per start point).
 */
struct RangeKernel {
  int r = 0;
  int L = 0;
  double c = 0;
  MatrixXd K;
  double truncation = 0;
  std::size_t states = 0;
};

inline RangeKernel range_kernel(const LatticeVolume& vol, double c, int r, int L, std::size_t max_states = 20000000) {
  if (!(c > 0)) throw std::domain_error("range_kernel: c must be positive");
  if (r < 0 || L < 0) throw std::domain_error("range_kernel: r and L must be nonnegative");
  const int d = vol.dim();
  const int n = vol.size();
  const double w = 1.0 / (c + 2.0 * d);
  RangeKernel rk;
  rk.r = r;
  rk.L = L;
  rk.c = c;
  rk.truncation = walk_tail(c, d, L);
  rk.K = MatrixXd::Zero(n, n);
  const bool free = r >= diameter(vol, vol.all_sites()) || r >= L;
  if (!free && r > 15) throw std::domain_error("range_kernel: r > 15 below the box diameter is not supported");
  if (n >= (1 << 20)) throw std::domain_error("range_kernel: volume too large");

  // l1 diameter of a set is max over half the sign vectors s of (max s.x - min s.x)
  std::vector<std::array<int, kMaxDim>> signs;
  for (int m = 0; m < (1 << (d - 1)); ++m) {
    std::array<int, kMaxDim> s{1, 0, 0};
    for (int k = 1; k < d; ++k) s[k] = (m >> (k - 1) & 1) ? -1 : 1;
    signs.push_back(s);
  }
  const int ns = static_cast<int>(signs.size());
  std::vector<std::vector<int>> proj(n, std::vector<int>(ns));
  for (int x = 0; x < n; ++x)
    for (int j = 0; j < ns; ++j) {
      int v = 0;
      for (int k = 0; k < d; ++k) v += signs[j][k] * vol.coord(x)[k];
      proj[x][j] = v;
    }

  // key: pos | per sign vector (lo, hi) offsets from the start, 4 bits each
  auto pack = [&](int pos, const int* lo, const int* hi) {
    std::uint64_t k = static_cast<std::uint64_t>(pos);
    if (free) return k;
    for (int j = 0; j < ns; ++j) k = (k << 8) | (std::uint64_t(lo[j]) << 4) | std::uint64_t(hi[j]);
    return k;
  };
  auto unpack = [&](std::uint64_t k, int& pos, int* lo, int* hi) {
    if (free) {
      pos = static_cast<int>(k);
      return;
    }
    for (int j = ns - 1; j >= 0; --j) {
      hi[j] = static_cast<int>(k & 15u);
      lo[j] = static_cast<int>(k >> 4 & 15u);
      k >>= 8;
    }
    pos = static_cast<int>(k);
  };

  std::unordered_map<std::uint64_t, double> cur, next;
  int lo[4], hi[4], lo2[4], hi2[4];
  for (int s = 0; s < n; ++s) {
    cur.clear();
    std::fill(lo, lo + 4, 0);
    std::fill(hi, hi + 4, 0);
    cur[pack(s, lo, hi)] = w;
    for (int t = 0; t <= L; ++t) {
      for (const auto& [k, v] : cur) {
        int pos;
        unpack(k, pos, lo, hi);
        rk.K(s, pos) += v;
      }
      rk.states += cur.size();
      if (rk.states > max_states) throw std::runtime_error("range_kernel: enumeration budget exceeded");
      if (t == L) break;
      next.clear();
      for (const auto& [k, v] : cur) {
        int pos;
        unpack(k, pos, lo, hi);
        for (int y : vol.neighbors(pos)) {
          bool ok = true;
          for (int j = 0; j < ns && !free; ++j) {
            int off = proj[y][j] - proj[s][j];
            lo2[j] = std::max(lo[j], -off);
            hi2[j] = std::max(hi[j], off);
            if (lo2[j] + hi2[j] > r) ok = false;
          }
          if (ok) next[pack(y, lo2, hi2)] += v * w;
        }
      }
      std::swap(cur, next);
    }
  }
  return rk;
}

/// beta = (q m*^2 / 2) a^2 / ((a + 2dq)^2 - q^2).
inline double peierls_beta(const ModelParams& p) {
  const double s = p.a + 2.0 * p.d * p.q;
  return 0.5 * p.q * p.m_star * p.m_star * p.a * p.a / (s * s - p.q * p.q);
}

/// r = floor(2 log(a m*^2) / log(1 + a/(2dq))) + 1, at least 1.
inline int interaction_range(const ModelParams& p) {
  double v = 2.0 * std::log(p.a * p.m_star * p.m_star) / std::log1p(p.a / (2.0 * p.d * p.q));
  return std::max(1, static_cast<int>(std::floor(v)) + 1);
}

struct LtActivity {
  double log_value = 0;  ///< upper estimate: omitted long walks only lower it
  double quadratic = 0;
  double boundary = 0;
  double truncation = 0;  ///< bound on |omitted exponent|
  int energy = 0;
  int support_size = 0;
  double beta = 0;
  double log_bound = 0;         ///< -2 beta E_s
  double log_volume_bound = 0;  ///< -beta E_s - beta (2r+1)^{-d} |support|
  bool bound_ok = false;
  bool volume_bound_ok = false;
  bool boundary_prefactor_ok = false;  ///< 2aq m*^2/(a+2dq) >= 2 beta
};

/**
 * \brief Low-temperature activity: the exponent over connected C with diam(C) <= r,
 * spin-spin part plus the coupling to the boundary field.
 */
inline LtActivity lt_activity(const LatticeVolume& vol, const Spins& sigma, const BoundaryField& mtilde,
                              const ModelParams& p, int r, const RangeKernel& K) {
  if (K.r != r || K.K.rows() != vol.size()) throw std::domain_error("lt_activity: kernel does not match volume or r");
  const int n = vol.size();
  VectorXd s(n), sm1(n);
  for (int x = 0; x < n; ++x) {
    s[x] = sigma[x];
    sm1[x] = sigma[x] - 1.0;
  }
  VectorXd src = neighbor_source(vol, vol.all_sites(), nullptr, mtilde);
  const double ms = p.m_star;
  const double pref = p.a * p.a * ms * ms / (2.0 * p.q);
  LtActivity out;
  out.quadratic = pref * (s.dot(K.K * s) - VectorXd::Ones(n).dot(K.K * VectorXd::Ones(n)));
  out.boundary = p.a * ms * src.dot(K.K * sm1);
  out.log_value = out.quadratic + out.boundary;
  out.truncation = (2.0 * pref * n + 2.0 * p.a * ms * src.cwiseAbs().sum()) * K.truncation;
  Contour g = extract_contour(vol, sigma, r);
  out.energy = naive_energy(vol, g);
  out.support_size = static_cast<int>(g.support.size());
  out.beta = peierls_beta(p);
  out.log_bound = -2.0 * out.beta * out.energy;
  out.log_volume_bound = -out.beta * out.energy - out.beta * std::pow(2.0 * r + 1, -vol.dim()) * out.support_size;
  out.bound_ok = out.log_value <= out.log_bound;
  out.volume_bound_ok = out.log_value <= out.log_volume_bound;
  out.boundary_prefactor_ok = 2.0 * p.a * p.q * ms * ms / (p.a + 2.0 * p.d * p.q) >= 2.0 * out.beta;
  return out;
}

inline LtActivity lt_activity(const LatticeVolume& vol, const Spins& sigma, const BoundaryField& mtilde,
                              const ModelParams& p, int r, double tol = 1e-16) {
  int L = std::max(r, walk_length_for(p.c(), vol.dim(), tol));
  return lt_activity(vol, sigma, mtilde, p, r, range_kernel(vol, p.c(), r, L));
}

struct SmallFieldTerm {
  double value = 0;
  double envelope = 0;  ///< delta m* |C| rho^{|C|-1}
  double beta0_measured = 0;
  bool within_envelope = false;
};

/// (a m*/q) <eta_C, R(. -> .; C) 1_C> with the exact fixed-range kernel of C.
inline SmallFieldTerm small_field_term(const LatticeVolume& vol, const SiteSet& Cin, const Field& eta,
                                       const ModelParams& p) {
  SiteSet C = normalized(Cin);
  if (!is_connected(vol, C)) throw std::domain_error("small_field_term: C must be connected");
  auto tab = walk_kernels_mobius(vol, C, p.c());
  const MatrixXd& R = tab.at((std::uint64_t(1) << C.size()) - 1);
  VectorXd e = restrict_to(eta, C);
  SmallFieldTerm t;
  t.value = p.a * p.m_star / p.q * e.dot(R * VectorXd::Ones(C.size()));
  const int sz = static_cast<int>(C.size());
  t.envelope = p.delta * p.m_star * sz * std::pow(walk_decay(p.c(), vol.dim()), sz - 1);
  t.within_envelope = std::abs(t.value) <= t.envelope * (1 + 1e-12);
  t.beta0_measured = t.value == 0 ? std::numeric_limits<double>::infinity()
                                  : -std::log(std::abs(t.value) / (p.delta * p.m_star)) / sz;
  return t;
}

/**
 * \brief The regrouped minimum-energy exponent, evaluated piece by piece.
 *
 * lhs = -inf H(sigma) + inf H(+1) + (a m* / q) <eta, R 1>; the five pieces
 * sum to it exactly. `interior_*` restrict the first two pieces to C that
 * do not touch the exterior.
 */
struct ContourIdentity {
  double lhs = 0;
  double lt = 0;
  double mixed = 0;
  double vacuum = 0;
  double long_range = 0;
  double long_boundary = 0;
  double interior_lt = 0;
  double interior_mixed = 0;
  double sum() const { return lt + mixed + vacuum + long_range + long_boundary; }
};

inline ContourIdentity contour_identity(const LatticeVolume& vol, const Spins& sigma, const Field& eta,
                                        const BoundaryField& mtilde, const ModelParams& p, int r) {
  const int n = vol.size();
  if (n > kMaxExhaustiveSites) throw std::domain_error("contour_identity: volume above the exhaustive cap");
  SiteSet all = vol.all_sites();
  const double c = p.c();
  const double ms = p.m_star;
  const double pref = p.a * p.a * ms * ms / (2.0 * p.q);
  const double fpref = p.a * ms / p.q;
  VectorXd src = neighbor_source(vol, all, nullptr, mtilde);

  ContourIdentity id;
  Spins plus = constant_spins(vol, 1);
  MatrixXd R = resolvent_direct(vol, all, c);
  id.lhs = -min_energy_direct(vol, p, sigma, eta, mtilde) + min_energy_direct(vol, p, plus, eta, mtilde) +
           fpref * eta.dot(R * VectorXd::Ones(n));

  for (const auto& [mask, Kc] : walk_kernels_mobius(vol, all, c)) {
    SiteSet C = mask_to_set(mask, all);
    VectorXd s = VectorXd::Zero(n), one = VectorXd::Zero(n), e = VectorXd::Zero(n), b = VectorXd::Zero(n);
    bool hasp = false, hasm = false;
    for (int x : C) {
      s[x] = sigma[x];
      one[x] = 1;
      e[x] = eta[x];
      b[x] = src[x];
      (sigma[x] > 0 ? hasp : hasm) = true;
    }
    const bool nonconst = hasp && hasm;
    const bool small = diameter(vol, C) <= r;
    const bool interior = !detail::touches_exterior(vol, C);
    double quad = pref * (s.dot(Kc * s) - one.dot(Kc * one));
    double bnd = p.a * ms * b.dot(Kc * (s - one));
    double fld = fpref * e.dot(Kc * s);
    if (small) {
      id.lt += quad + bnd;
      if (interior) id.interior_lt += quad;
    } else {
      id.long_range += quad;
      id.long_boundary += bnd;
    }
    if (nonconst) {
      if (small) {
        id.mixed += fld;
        if (interior) id.interior_mixed += fld;
      } else {
        id.long_range += fld;
      }
    } else {
      id.vacuum += fld;
    }
  }
  return id;
}

/** \brief Explicit constants; `konst` multiplies every Const-shaped expression. */
struct PeierlsConstants {
  double beta = 0;
  double beta_tilde_gauss = 0;
  double beta_tilde_gauss_range = 0;  ///< konst * min{beta (2r+1)^{-d}, alpha0} - m* delta
  double beta_tilde = 0;
  double beta_tilde0 = 0;
  double alpha0 = 0;
  double alpha_final = 0;
  int r = 0;
  double konst = 1;
  bool regime_ok = false;
  std::string label = "printed-shape, unit-constant";
};

inline PeierlsConstants peierls_constants(const ModelParams& p, double epsilon, double konst = 1.0) {
  if (!(p.q > 0 && p.q < 1)) throw std::domain_error("peierls_constants: q must lie in (0,1)");
  if (!(epsilon > 0 && epsilon < 1)) throw std::domain_error("peierls_constants: epsilon must lie in (0,1)");
  PeierlsConstants k;
  k.konst = konst;
  if (konst != 1.0) k.label = "printed-shape, Const=" + std::to_string(konst);
  const double lq = std::log(1.0 / p.q);
  const double lm = std::log(p.m_star);
  const double ratio = std::pow(lq / lm, p.d);
  const double md = p.m_star * p.delta;
  k.beta = peierls_beta(p);
  k.r = interaction_range(p);
  k.alpha0 = 0.5 * std::log1p(p.a / (2.0 * p.d * p.q)) - 1.0 / std::exp(1.0);
  k.beta_tilde0 = konst * lq;
  k.beta_tilde_gauss = konst * std::min(lq, p.q * p.m_star * p.m_star * ratio) - md;
  k.beta_tilde_gauss_range = konst * std::min(k.beta * std::pow(2.0 * k.r + 1, -p.d), k.alpha0) - md;
  k.beta_tilde = konst * std::min({lq, p.q * p.m_star * p.m_star * ratio, std::log(1.0 / epsilon) * ratio}) - md;
  k.alpha_final = konst * std::min(lq, std::log(1.0 / epsilon) * ratio);
  k.regime_ok = lm > 0 && k.beta > 0 && k.beta_tilde_gauss > 0 && k.beta_tilde > 0 && k.alpha0 > 0 &&
                k.alpha_final > 0;
  return k;
}

}  // namespace rfphi4

#endif
