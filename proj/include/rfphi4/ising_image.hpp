#ifndef RFPHI4_ISING_IMAGE_HPP
#define RFPHI4_ISING_IMAGE_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/SparseCholesky>

#include "gaussian.hpp"
#include "lattice.hpp"
#include "potential.hpp"
#include "quadrature.hpp"
#include "random_walk.hpp"

namespace rfphi4 {

constexpr int kMaxImageSites = 4;

/// Configuration index: bit x set means sigma_x = -1.
inline Spins spins_from_mask(int n, std::uint32_t mask) {
  Spins s(n);
  for (int x = 0; x < n; ++x) s[x] = (mask >> x & 1u) ? -1 : 1;
  return s;
}

inline std::uint32_t mask_from_spins(const Spins& s) {
  std::uint32_t m = 0;
  for (size_t x = 0; x < s.size(); ++x)
    if (s[x] < 0) m |= 1u << x;
  return m;
}

/**
 * \brief log of int dm e^{-E(m)} prod_x f_x(m_x) over the volume.
 *
 * E is the original energy; `log_factor(x, m)` returns log f_x(m) (-inf for zero).
 * Grids follow the single-site envelope -V(m) + eta m - boundary coupling.
 */
inline double log_image_integral(const LatticeVolume& vol, const Field& eta, const BoundaryField& mtilde,
                                 const ModelParams& p, Potential pot,
                                 const std::function<double(int, double)>& log_factor,
                                 std::vector<double> extra_breaks = {}, double h = 0.5) {
  const int n = vol.size();
  if (n > kMaxImageSites) throw std::domain_error("log_image_integral: volume exceeds the brute-force cap");
  std::vector<std::vector<double>> nbs(n);
  for (int x = 0; x < n; ++x)
    for (const Coord& c : vol.outside_neighbors(x)) nbs[x].push_back(mtilde.at(c));
  auto env = [&](int x, double m) {
    double v = -potential_V(m, p, pot) + eta[x] * m;
    for (double y : nbs[x]) v -= 0.5 * p.q * (m - y) * (m - y);
    return v;
  };
  double bmax = 0;
  for (const auto& nb : nbs)
    for (double y : nb) bmax = std::max(bmax, std::abs(y));
  const double R = std::max(p.m_star + (std::isfinite(p.A2) ? p.A2 : 0.0), bmax) + 40;
  std::vector<double> br{0.0, p.m_star, -p.m_star};
  br.insert(br.end(), extra_breaks.begin(), extra_breaks.end());
  std::vector<Grid> grids;
  for (int x = 0; x < n; ++x) grids.push_back(make_grid([&](double m) { return env(x, m); }, -R, R, h, br));
  FactorIntegrator fi(grids);
  for (int x = 0; x < n; ++x) {
    fi.add_unary(x, [&, x](double m) { return env(x, m) + log_factor(x, m); });
    for (int y : vol.neighbors(x))
      if (y > x) fi.add_pair(x, y, [&p](double u, double v) { return -0.5 * p.q * (u - v) * (u - v); });
  }
  return fi.log_integral();
}

/** \brief Unnormalized image weights Z(sigma) for every sign configuration. */
struct IsingWeightTable {
  int n = 0;
  std::vector<double> log_weight;  ///< indexed by configuration mask
  double log_Z = 0;

  double weight(std::uint32_t mask) const { return std::exp(log_weight.at(mask)); }
  double probability(std::uint32_t mask) const { return std::exp(log_weight.at(mask) - log_Z); }
  /// T(mu)[sigma_x = +1].
  double prob_plus(int x) const {
    double s = 0;
    for (std::uint32_t m = 0; m < log_weight.size(); ++m)
      if (!(m >> x & 1u)) s += probability(m);
    return s;
  }
};

inline IsingWeightTable brute_force_image(const LatticeVolume& vol, const Field& eta, const BoundaryField& mtilde,
                                          const ModelParams& p, Potential pot = {}, double h = 0.5) {
  const int n = vol.size();
  if (n > kMaxImageSites) throw std::domain_error("brute_force_image: volume exceeds the brute-force cap");
  IsingWeightTable t;
  t.n = n;
  t.log_weight.resize(std::size_t(1) << n);
  for (std::uint32_t m = 0; m < t.log_weight.size(); ++m) {
    Spins s = spins_from_mask(n, m);
    t.log_weight[m] = log_image_integral(
        vol, eta, mtilde, p, pot, [&](int x, double v) { return std::log(kernel_T(s[x], v, p)); }, {}, h);
  }
  t.log_Z = log_sum_exp(t.log_weight);
  return t;
}

/// log of the partition function int e^{-E}.
inline double log_partition(const LatticeVolume& vol, const Field& eta, const BoundaryField& mtilde,
                            const ModelParams& p, Potential pot = {}, double h = 0.5) {
  return log_image_integral(vol, eta, mtilde, p, pot, [](int, double) { return 0.0; }, {}, h);
}

/**
 * \brief Couplings of the pair Hamiltonian restricted to a window of Z^d.
 *
 * G = (a - q Delta_{Z^d})^{-1} is approximated by the Dirichlet inverse on the
 * window padded by `pad` sites; each entry misses at most `tail` (walks that
 * must leave the padded box).
 */
struct PairCouplings {
  LatticeVolume window;
  MatrixXd G;
  MatrixXd J;      ///< (a^2 m*^2 / 2) G
  MatrixXd field;  ///< a m* G
  double tail = 0;
};

inline PairCouplings pair_hamiltonian(const ModelParams& p, const LatticeVolume& window, int pad, double tol = 1e-12) {
  if (pad < 0) throw std::domain_error("pair_hamiltonian: pad must be nonnegative");
  const int d = window.dim();
  const double c = p.c();
  PairCouplings pc;
  pc.window = window;
  pc.tail = walk_tail(c, d, pad) / p.q;
  if (pc.tail > tol) throw std::runtime_error("pair_hamiltonian: padding too small for the tolerance; enlarge the box");
  std::vector<int> ext = window.extents();
  for (int& e : ext) e += 2 * pad;
  LatticeVolume big(ext);
  const int nb = big.size();
  std::vector<Eigen::Triplet<double>> trip;
  for (int x = 0; x < nb; ++x) {
    trip.emplace_back(x, x, c + 2.0 * d);
    for (int y : big.neighbors(x)) trip.emplace_back(x, y, -1.0);
  }
  Eigen::SparseMatrix<double> M(nb, nb);
  M.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(M);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pair_hamiltonian: factorization failed");
  const int n = window.size();
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) {
    Coord cc = window.coord(i);
    for (int k = 0; k < d; ++k) cc[k] += pad;
    idx[i] = big.index(cc);
  }
  MatrixXd rhs = MatrixXd::Zero(nb, n);
  for (int j = 0; j < n; ++j) rhs(idx[j], j) = 1.0;
  MatrixXd cols = solver.solve(rhs);
  pc.G.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) pc.G(i, j) = cols(idx[i], j) / p.q;
  pc.J = 0.5 * p.a * p.a * p.m_star * p.m_star * pc.G;
  pc.field = p.a * p.m_star * pc.G;
  return pc;
}

/// Smallest pad whose tail is below tol.
inline int pad_for(const ModelParams& p, int d, double tol) {
  return walk_length_for(p.c(), d, tol * p.q);
}

/**
 * \brief Finite-volume Gaussian part of log Z(sigma): the sigma-dependent terms of -inf H.
 *
 * (a^2 m*^2 / 2q) <sigma, R sigma> + (a m* / q) <eta + q * boundary source, R sigma>.
 */
inline double gaussian_log_part(const LatticeVolume& vol, const Spins& sigma, const Field& eta,
                                const BoundaryField& mtilde, const ModelParams& p, const MatrixXd& R) {
  const int n = vol.size();
  VectorXd s(n);
  for (int x = 0; x < n; ++x) s[x] = sigma[x];
  VectorXd h = eta + p.q * neighbor_source(vol, vol.all_sites(), nullptr, mtilde);
  const double ms = p.m_star;
  return p.a * p.a * ms * ms / (2 * p.q) * s.dot(R * s) + p.a * ms / p.q * h.dot(R * s);
}

/**
 * \brief Many-body potentials from a brute-force table.
 *
 * F(sigma) = log Z(sigma) - gaussian_log_part(sigma) is expanded as
 * sum_C J_C prod_{x in C} sigma_x; Phi_C(sigma_C) = J_C sigma^C, entering the
 * log-weight with a plus sign.
 */
struct ManyBody {
  std::map<SiteSet, double> coeff;
  std::map<int, double> max_by_size;
  double gamma_fit = 0;        ///< -slope of log max|J_C| over |C| in {2,3,4} present
  double symmetry_error = -1;  ///< max |J_C(eta,b) - (-1)^{|C|} J_C(-eta,-b)|; -1 if not checked
  bool nonincreasing = false;
};

inline std::map<SiteSet, double> walsh_coefficients(int n, const std::vector<double>& F) {
  std::map<SiteSet, double> out;
  const std::uint32_t N = 1u << n;
  for (std::uint32_t c = 1; c < N; ++c) {
    double s = 0;
    for (std::uint32_t m = 0; m < N; ++m) {
      int parity = __builtin_popcount(m & c) & 1;
      s += parity ? -F[m] : F[m];
    }
    SiteSet C;
    for (int x = 0; x < n; ++x)
      if (c >> x & 1u) C.push_back(x);
    out[C] = s / N;
  }
  return out;
}

inline std::vector<double> residual_log_weights(const LatticeVolume& vol, const IsingWeightTable& t, const Field& eta,
                                                const BoundaryField& mtilde, const ModelParams& p) {
  MatrixXd R = resolvent_direct(vol, vol.all_sites(), p.c());
  std::vector<double> F(t.log_weight.size());
  for (std::uint32_t m = 0; m < F.size(); ++m)
    F[m] = t.log_weight[m] - gaussian_log_part(vol, spins_from_mask(t.n, m), eta, mtilde, p, R);
  return F;
}

inline ManyBody many_body_extract(const LatticeVolume& vol, const Field& eta, const BoundaryField& mtilde,
                                  const ModelParams& p, Potential pot = {}, bool check_symmetry = true) {
  if (vol.size() > kMaxImageSites) throw std::domain_error("many_body_extract: volume exceeds the brute-force cap");
  IsingWeightTable t = brute_force_image(vol, eta, mtilde, p, pot);
  ManyBody mb;
  mb.coeff = walsh_coefficients(t.n, residual_log_weights(vol, t, eta, mtilde, p));
  for (const auto& [C, v] : mb.coeff) {
    int k = static_cast<int>(C.size());
    mb.max_by_size[k] = std::max(mb.max_by_size[k], std::abs(v));
  }
  std::vector<double> xs, ys;
  for (const auto& [k, v] : mb.max_by_size)
    if (k >= 2 && v > 0) {
      xs.push_back(k);
      ys.push_back(std::log(v));
    }
  if (xs.size() >= 2) {
    double mx = 0, my = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i];
      my += ys[i];
    }
    mx /= xs.size();
    my /= xs.size();
    double sxy = 0, sxx = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    mb.gamma_fit = -sxy / sxx;
  }
  mb.nonincreasing = true;
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& [k, v] : mb.max_by_size) {
    if (k < 2) continue;
    if (v > prev) mb.nonincreasing = false;
    prev = v;
  }
  if (check_symmetry) {
    Field ne = -eta;
    IsingWeightTable tf = brute_force_image(vol, ne, mtilde.negated(), p, pot);
    auto cf = walsh_coefficients(tf.n, residual_log_weights(vol, tf, ne, mtilde.negated(), p));
    mb.symmetry_error = 0;
    for (const auto& [C, v] : mb.coeff) {
      double sgn = C.size() % 2 ? -1.0 : 1.0;
      mb.symmetry_error = std::max(mb.symmetry_error, std::abs(v - sgn * cf.at(C)));
    }
  }
  return mb;
}

enum class ImageMode { gaussian, phi4 };

struct GibbsRatioOptions {
  ImageMode mode = ImageMode::gaussian;
  int phi_order = 4;   ///< phi4 mode: keep Phi_C with |C| <= phi_order
  double tol = 1e-13;  ///< tail tolerance of the infinite-volume couplings
};

struct GibbsRatioResult {
  std::vector<double> lhs;  ///< conditional probabilities of sigma_V, finite volume
  std::vector<double> rhs;  ///< from the Ising Hamiltonian
  double gap = 0;           ///< max |log lhs - log rhs|
  double envelope = 0;
  bool within = false;
};

namespace detail {

inline int dist_to_outside(const LatticeVolume& vol, int x, const std::vector<char>& inB) {
  int best = distance_to_exterior(vol, x);
  for (int y = 0; y < vol.size(); ++y)
    if (!inB[y]) best = std::min(best, vol.distance(x, y));
  return best;
}

inline int set_dist_to_outside(const LatticeVolume& vol, const SiteSet& A, const SiteSet& B) {
  auto inB = membership(vol, B);
  int best = 1 << 30;
  for (int x : A) best = std::min(best, dist_to_outside(vol, x, inB));
  return best;
}

inline std::vector<double> normalize_logs(const std::vector<double>& l) {
  double z = log_sum_exp(l);
  std::vector<double> out(l.size());
  for (size_t i = 0; i < l.size(); ++i) out[i] = std::exp(l[i] - z);
  return out;
}

}  // namespace detail

/**
 * \brief Finite-volume conditional law of sigma_V given sigma_bar on L2 \ V (spins on
 * vol1 \ L2 summed) against the Ising Hamiltonian with sigma_bar = +1 off L2.
 *
 * Gaussian mode uses infinite-volume couplings on the right; phi4 mode uses
 * the finite-volume Gaussian part plus extracted Phi_C up to `phi_order`.
 * Envelope: K (|L2| rho^{dist(L2, vol1^c)} [L2 != vol1] + |V| rho^{dist(V, vol1^c)}),
 * K = 8 (a m*^2 + m* delta) / rho, rho = 2d/(c+2d).
 */
inline GibbsRatioResult gibbs_ratio_check(const LatticeVolume& vol1, const SiteSet& L2in, const SiteSet& Vin,
                                          const Spins& sigma_bar, const Field& eta, const ModelParams& p,
                                          GibbsRatioOptions opt = {}) {
  SiteSet L2 = normalized(L2in), V = normalized(Vin);
  if (!is_subset(V, L2)) throw std::domain_error("gibbs_ratio_check: V must lie in L2");
  const int n = vol1.size();
  const int nv = static_cast<int>(V.size());
  if (nv == 0 || nv > 12) throw std::domain_error("gibbs_ratio_check: |V| must be 1..12");
  SiteSet outer = set_difference(vol1.all_sites(), L2);
  if (outer.size() > 20) throw std::domain_error("gibbs_ratio_check: too many summed spins");
  const BoundaryField plus = BoundaryField::constant(p.m_star);
  const std::uint32_t NV = 1u << nv, NO = 1u << outer.size();
  auto config = [&](std::uint32_t mv, std::uint32_t mo) {
    Spins s = sigma_bar;
    for (int i = 0; i < nv; ++i) s[V[i]] = (mv >> i & 1u) ? -1 : 1;
    for (size_t i = 0; i < outer.size(); ++i) s[outer[i]] = (mo >> i & 1u) ? -1 : 1;
    return s;
  };

  GibbsRatioResult res;
  std::vector<double> lhs_log(NV), rhs_log(NV);
  if (opt.mode == ImageMode::gaussian) {
    MatrixXd R = resolvent_direct(vol1, vol1.all_sites(), p.c());
    for (std::uint32_t mv = 0; mv < NV; ++mv) {
      std::vector<double> terms(NO);
      for (std::uint32_t mo = 0; mo < NO; ++mo) terms[mo] = gaussian_log_part(vol1, config(mv, mo), eta, plus, p, R);
      lhs_log[mv] = log_sum_exp(terms);
    }
    const int pad = pad_for(p, vol1.dim(), opt.tol);
    std::vector<int> ext = vol1.extents();
    for (int& e : ext) e += 2 * pad;
    LatticeVolume win(ext);
    PairCouplings inf = pair_hamiltonian(p, win, pad, std::max(opt.tol, walk_tail(p.c(), vol1.dim(), pad) / p.q));
    auto widx = [&](int x) {
      Coord c = vol1.coord(x);
      for (int k = 0; k < vol1.dim(); ++k) c[k] += pad;
      return win.index(c);
    };
    VectorXd etaw = VectorXd::Zero(win.size());
    for (int x = 0; x < n; ++x) etaw[widx(x)] = eta[x];
    auto inL2 = membership(vol1, L2);
    VectorXd sb = VectorXd::Ones(win.size());
    for (int x = 0; x < n; ++x)
      if (inL2[x]) sb[widx(x)] = sigma_bar[x];
    for (std::uint32_t mv = 0; mv < NV; ++mv) {
      VectorXd s = sb;
      for (int i = 0; i < nv; ++i) s[widx(V[i])] = (mv >> i & 1u) ? -1 : 1;
      // terms without sigma_V are common to all mv and drop out on normalization
      double l = s.dot(inf.J * s) + etaw.dot(inf.field * s);
      rhs_log[mv] = l;
    }
  } else {
    if (n > kMaxImageSites) throw std::domain_error("gibbs_ratio_check: phi4 mode needs |vol1| <= 4");
    IsingWeightTable t = brute_force_image(vol1, eta, plus, p, Potential::phi4());
    for (std::uint32_t mv = 0; mv < NV; ++mv) {
      std::vector<double> terms(NO);
      for (std::uint32_t mo = 0; mo < NO; ++mo) terms[mo] = t.log_weight[mask_from_spins(config(mv, mo))];
      lhs_log[mv] = log_sum_exp(terms);
    }
    MatrixXd R = resolvent_direct(vol1, vol1.all_sites(), p.c());
    auto coeff = walsh_coefficients(t.n, residual_log_weights(vol1, t, eta, plus, p));
    for (std::uint32_t mv = 0; mv < NV; ++mv) {
      Spins s = config(mv, 0);
      for (int x : outer) s[x] = 1;
      double l = gaussian_log_part(vol1, s, eta, plus, p, R);
      for (const auto& [C, v] : coeff) {
        if (static_cast<int>(C.size()) > opt.phi_order) continue;
        double prod = 1;
        for (int x : C) prod *= s[x];
        l += v * prod;
      }
      rhs_log[mv] = l;
    }
  }
  res.lhs = detail::normalize_logs(lhs_log);
  res.rhs = detail::normalize_logs(rhs_log);
  for (std::uint32_t mv = 0; mv < NV; ++mv) res.gap = std::max(res.gap, std::abs(std::log(res.lhs[mv] / res.rhs[mv])));
  const double rho = walk_decay(p.c(), vol1.dim());
  const double K = 8.0 * (p.a * p.m_star * p.m_star + p.m_star * p.delta) / rho;
  const double e1 = outer.empty() ? 0.0 : L2.size() * std::pow(rho, detail::set_dist_to_outside(vol1, L2, vol1.all_sites()));
  const double e2 = nv * std::pow(rho, detail::set_dist_to_outside(vol1, V, vol1.all_sites()));
  res.envelope = K * (e1 + e2);
  res.within = res.gap <= res.envelope;
  return res;
}

/** \brief Gaussian-fluctuation free energy per site on Z^d. */
struct FreeEnergyConstant {
  double value = 0;
  double g00 = 0;       ///< [(a - q Delta)^{-1}]_00
  double log_diag = 0;  ///< [log(a - q Delta)]_00
  double tail_g00 = 0;
  double tail_log = 0;
  int depth = 0;
};

/// Closed walks of length k at the origin of Z^d, k = 0..K.
inline std::vector<double> return_counts(int d, int K) {
  const int rad = K / 2 + 1, side = 2 * rad + 1;
  std::vector<int> ext(d, side);
  LatticeVolume box(ext);
  std::vector<double> f(box.size(), 0.0), g(box.size());
  Coord o{};
  for (int k = 0; k < d; ++k) o[k] = rad;
  const int origin = box.index(o);
  f[origin] = 1;
  std::vector<double> out{1.0};
  for (int t = 1; t <= K; ++t) {
    std::fill(g.begin(), g.end(), 0.0);
    for (int x = 0; x < box.size(); ++x)
      if (f[x] != 0)
        for (int y : box.neighbors(x)) g[y] += f[x];
    std::swap(f, g);
    out.push_back(f[origin]);
  }
  return out;
}

inline FreeEnergyConstant free_energy_constant(const ModelParams& p, double eta2, int depth) {
  const int d = p.d;
  const double c = p.c();
  if (!(c > 2.0 * d)) throw std::domain_error("free_energy_constant: needs c > 2d");
  if (depth < 1) throw std::domain_error("free_energy_constant: depth must be positive");
  auto N = return_counts(d, depth);
  const double u = 1.0 / (c + 2.0 * d), rho = walk_decay(c, d);
  FreeEnergyConstant fe;
  fe.depth = depth;
  double g = 0, l = 0, pw = u;
  for (int k = 0; k <= depth; ++k) {
    g += N[k] * pw;
    if (k >= 1) l -= N[k] * std::pow(u, k) / k;
    pw *= u;
  }
  fe.g00 = g / p.q;
  fe.log_diag = std::log(p.q) + std::log(c + 2.0 * d) + l;
  fe.tail_g00 = walk_tail(c, d, depth) / p.q;
  fe.tail_log = std::pow(rho, depth + 1) / ((depth + 1) * (1 - rho));
  fe.value = -0.5 * eta2 * fe.g00 - 0.5 * fe.log_diag - p.b + 0.5 * std::log(2 * std::numbers::pi);
  return fe;
}

}  // namespace rfphi4

#endif
