#ifndef RFPHI4_RANDOM_WALK_HPP
#define RFPHI4_RANDOM_WALK_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaussian.hpp"
#include "lattice.hpp"

namespace rfphi4 {

constexpr int kMaxExhaustiveSites = 14;

/// rho = 2d / (c + 2d), the per-step decay of walk weights.
inline double walk_decay(double c, int d) { return 2.0 * d / (c + 2.0 * d); }

/// Bound on the weight of all paths from a point longer than L steps: rho^{L+1} / c.
inline double walk_tail(double c, int d, int L) { return std::pow(walk_decay(c, d), L + 1) / c; }

/// Smallest L with walk_tail(c, d, L) <= tol.
inline int walk_length_for(double c, int d, double tol) {
  double rho = walk_decay(c, d);
  int L = static_cast<int>(std::ceil(std::log(tol * c) / std::log(rho))) - 1;
  return std::max(L, 0);
}

/** \brief Fixed-range walk kernel on a site set C (entries for x, y in C, in the order of C). */
struct WalkKernel {
  SiteSet range_set;
  MatrixXd matrix;
  double weight_base = 0;
  double truncation = 0;  ///< bound on the weight of omitted longer paths
  std::string note;
};

/**
 * \brief All fixed-range kernels of the volume V at once.
 *
 * `kernel[mask]` is the |V| x |V| matrix of path weights sum (c+2d)^{-(|path|+1)}
 * over paths of length <= L whose range is exactly the subset `mask` of V.
 * Only connected masks get nonzero entries.
 */
struct WalkKernelTable {
  SiteSet V;
  int L = 0;
  double c = 0;
  double truncation = 0;
  std::map<std::uint64_t, MatrixXd> kernel;

  MatrixXd sum() const {
    MatrixXd s = MatrixXd::Zero(V.size(), V.size());
    for (const auto& [m, k] : kernel) s += k;
    return s;
  }
};

namespace detail {

inline std::vector<std::vector<int>> local_adjacency(const LatticeVolume& vol, const SiteSet& V) {
  std::vector<int> pos(vol.size(), -1);
  for (size_t i = 0; i < V.size(); ++i) pos[V[i]] = static_cast<int>(i);
  std::vector<std::vector<int>> adj(V.size());
  for (size_t i = 0; i < V.size(); ++i)
    for (int y : vol.neighbors(V[i]))
      if (pos[y] >= 0) adj[i].push_back(pos[y]);
  return adj;
}

}  // namespace detail

inline WalkKernelTable walk_kernels(const LatticeVolume& vol, const SiteSet& Vin, double c, int L) {
  SiteSet V = normalized(Vin);
  const int n = static_cast<int>(V.size());
  if (n == 0 || n > kMaxExhaustiveSites) throw std::domain_error("walk_kernels: |V| must be 1.." + std::to_string(kMaxExhaustiveSites));
  if (!(c > 0)) throw std::domain_error("walk_kernels: c must be positive");
  const int d = vol.dim();
  const double w = 1.0 / (c + 2.0 * d);
  auto adj = detail::local_adjacency(vol, V);
  const size_t nm = size_t(1) << n;
  std::vector<double> acc(nm * n * n, 0.0);  // [mask][start][end]
  std::vector<double> f(nm * n), g(nm * n);  // [mask][cur]
  for (int s = 0; s < n; ++s) {
    std::fill(f.begin(), f.end(), 0.0);
    f[(size_t(1) << s) * n + s] = w;
    for (int t = 0; t <= L; ++t) {
      for (size_t m = 0; m < nm; ++m)
        for (int x = 0; x < n; ++x) {
          double v = f[m * n + x];
          if (v != 0) acc[(m * n + s) * n + x] += v;
        }
      if (t == L) break;
      std::fill(g.begin(), g.end(), 0.0);
      for (size_t m = 0; m < nm; ++m)
        for (int x = 0; x < n; ++x) {
          double v = f[m * n + x];
          if (v == 0) continue;
          for (int y : adj[x]) g[(m | (size_t(1) << y)) * n + y] += v * w;
        }
      std::swap(f, g);
    }
  }
  WalkKernelTable tab;
  tab.V = V;
  tab.L = L;
  tab.c = c;
  tab.truncation = walk_tail(c, d, L);
  for (size_t m = 1; m < nm; ++m) {
    MatrixXd K(n, n);
    bool any = false;
    for (int s = 0; s < n; ++s)
      for (int x = 0; x < n; ++x) {
        K(s, x) = acc[(m * n + s) * n + x];
        any |= K(s, x) != 0;
      }
    if (any) tab.kernel.emplace(m, std::move(K));
  }
  return tab;
}

/// Kernel of a single range set C; zero with a note when C is not connected.
inline WalkKernel walk_kernel(const LatticeVolume& vol, const SiteSet& Cin, double c, int L) {
  SiteSet C = normalized(Cin);
  WalkKernel k;
  k.range_set = C;
  k.weight_base = 1.0 / (c + 2.0 * vol.dim());
  k.truncation = walk_tail(c, vol.dim(), L);
  k.matrix = MatrixXd::Zero(C.size(), C.size());
  if (!is_connected(vol, C)) {
    k.note = "range set is not connected; kernel vanishes";
    return k;
  }
  if (L < static_cast<int>(C.size()) - 1) throw std::domain_error("walk_kernel: L_max must be at least |C|-1");
  WalkKernelTable tab = walk_kernels(vol, C, c, L);
  auto it = tab.kernel.find((std::uint64_t(1) << C.size()) - 1);
  if (it != tab.kernel.end()) k.matrix = it->second;
  return k;
}

/// Bound (1/c) rho^{|C|-1} on every row sum of a fixed-range kernel.
inline double kernel_row_bound(double c, int d, int size) { return std::pow(walk_decay(c, d), size - 1) / c; }

struct SeriesResult {
  MatrixXd matrix;
  double error_bound = 0;
};

/// Neumann series sum_{t<=L} T^t / (c+2d)^{t+1} for the resolvent on V.
inline SeriesResult resolvent_series(const LatticeVolume& vol, const SiteSet& V, double c, int L) {
  if (!(c > 0)) throw std::domain_error("resolvent_series: c must be positive");
  const int d = vol.dim();
  MatrixXd T = laplacian(vol, V);
  T.diagonal().setZero();
  const double w = 1.0 / (c + 2.0 * d);
  MatrixXd term = w * MatrixXd::Identity(V.size(), V.size());
  MatrixXd sum = term;
  for (int t = 1; t <= L; ++t) {
    term = w * (T * term);
    sum += term;
  }
  return {sum, walk_tail(c, d, L)};
}

/// One row of the resolvent of the whole box by the walk series (sparse iteration).
inline std::pair<VectorXd, double> resolvent_series_row(const LatticeVolume& vol, int x, double c, int L) {
  const int d = vol.dim();
  const double w = 1.0 / (c + 2.0 * d);
  VectorXd v = VectorXd::Zero(vol.size()), next(vol.size());
  v[x] = w;
  VectorXd sum = v;
  for (int t = 1; t <= L; ++t) {
    next.setZero();
    for (int y = 0; y < vol.size(); ++y)
      if (v[y] != 0)
        for (int z : vol.neighbors(y)) next[z] += w * v[y];
    v.swap(next);
    sum += v;
  }
  return {sum, walk_tail(c, d, L)};
}

struct ScalarSeries {
  double value = 0;
  double error_bound = 0;
};

/// log det(c - Delta_V) = |V| log(c+2d) - sum_t (1/t) (c+2d)^{-t} Tr T^t.
inline ScalarSeries log_det_series(const LatticeVolume& vol, const SiteSet& V, double c, int tmax) {
  const int d = vol.dim();
  if (!(c > 2.0 * d)) throw std::domain_error("log_det_series: requires c > 2d");
  MatrixXd T = laplacian(vol, V);
  T.diagonal().setZero();
  const double w = 1.0 / (c + 2.0 * d);
  MatrixXd P = MatrixXd::Identity(V.size(), V.size());
  double s = V.size() * std::log(c + 2.0 * d);
  for (int t = 1; t <= tmax; ++t) {
    P = w * (T * P);
    s -= P.trace() / t;
  }
  double rho = walk_decay(c, d);
  return {s, V.size() * std::pow(rho, tmax + 1) / ((tmax + 1) * (1 - rho))};
}

/// Direct log det(c - Delta_V).
inline double log_det_direct(const LatticeVolume& vol, const SiteSet& V, double c) {
  if (V.empty()) return 0.0;
  MatrixXd A = -laplacian(vol, V);
  A.diagonal().array() += c;
  return spd_log_det(A);
}

/**
 * \brief Weighted closed-path sums by exact range.
 *
 * Returns, for every mask of V, sum_{t=2}^{tmax} (1/t) (c+2d)^{-t} N_t(mask)
 * where N_t counts closed paths of length t with that range (any start).
 */
inline std::map<std::uint64_t, double> closed_path_sums(const LatticeVolume& vol, const SiteSet& V, double c, int tmax) {
  const int n = static_cast<int>(V.size());
  if (n == 0 || n > kMaxExhaustiveSites) throw std::domain_error("closed_path_sums: size cap");
  const double w = 1.0 / (c + 2.0 * vol.dim());
  auto adj = detail::local_adjacency(vol, V);
  const size_t nm = size_t(1) << n;
  std::vector<double> out(nm, 0.0), f(nm * n), g(nm * n);
  for (int s = 0; s < n; ++s) {
    std::fill(f.begin(), f.end(), 0.0);
    f[(size_t(1) << s) * n + s] = 1.0;
    for (int t = 1; t <= tmax; ++t) {
      std::fill(g.begin(), g.end(), 0.0);
      for (size_t m = 0; m < nm; ++m)
        for (int x = 0; x < n; ++x) {
          double v = f[m * n + x];
          if (v == 0) continue;
          for (int y : adj[x]) g[(m | (size_t(1) << y)) * n + y] += v * w;
        }
      std::swap(f, g);
      if (t >= 2)
        for (size_t m = 0; m < nm; ++m)
          if (f[m * n + s] != 0) out[m] += f[m * n + s] / t;
    }
  }
  std::map<std::uint64_t, double> res;
  for (size_t m = 1; m < nm; ++m)
    if (out[m] != 0) res[m] = out[m];
  return res;
}

struct DetCorrection {
  SiteSet range_set;
  double value = 0;  ///< epsilon^det(C)
};

struct DetRatioSeries {
  std::vector<DetCorrection> corrections;
  double log_ratio = 0;    ///< -2 sum epsilon
  double error_bound = 0;  ///< bound on |log_ratio - exact|
  double measured_alpha = std::numeric_limits<double>::infinity();  ///< min_C -log(eps)/|C|
  double ratio() const { return std::exp(log_ratio); }
};

/// Sites of the hull G^r and the inside boundary of G, for the ratio of projected determinants.
inline DetRatioSeries det_ratio_series(const LatticeVolume& vol, const SiteSet& G, int r, double c, int tmax) {
  SiteSet all = vol.all_sites();
  SiteSet B = outer_boundary(vol, G);
  SiteSet Gr = r_hull(vol, G, r);
  auto inB = membership(vol, B), inGr = membership(vol, Gr);
  DetRatioSeries res;
  auto sums = closed_path_sums(vol, all, c, tmax);
  double total = 0;
  for (const auto& [mask, val] : sums) {
    SiteSet C = mask_to_set(mask, all);
    bool hitsB = false, leaves = false;
    for (int x : C) {
      hitsB |= inB[x] != 0;
      leaves |= inGr[x] == 0;
    }
    if (!hitsB || !leaves) continue;
    double eps = 0.5 * val;
    res.corrections.push_back({C, eps});
    total += eps;
    if (eps > 0) res.measured_alpha = std::min(res.measured_alpha, -std::log(eps) / C.size());
  }
  res.log_ratio = -2.0 * total;
  double rho = walk_decay(c, vol.dim());
  res.error_bound = vol.size() * std::pow(rho, tmax + 1) / ((tmax + 1) * (1 - rho));
  return res;
}

/// log of det(Pi_B R_{G^r} Pi_B) / det(Pi_B R_box Pi_B) by dense linear algebra.
inline double det_ratio_direct(const LatticeVolume& vol, const SiteSet& G, int r, double c) {
  SiteSet B = outer_boundary(vol, G);
  SiteSet Gr = r_hull(vol, G, r);
  auto proj_logdet = [&](const SiteSet& V) {
    MatrixXd R = resolvent_direct(vol, V, c);
    std::vector<int> pos;
    for (int b : B) pos.push_back(static_cast<int>(std::lower_bound(V.begin(), V.end(), b) - V.begin()));
    MatrixXd P(B.size(), B.size());
    for (size_t i = 0; i < B.size(); ++i)
      for (size_t j = 0; j < B.size(); ++j) P(i, j) = R(pos[i], pos[j]);
    return spd_log_det(P);
  };
  return proj_logdet(Gr) - proj_logdet(vol.all_sites());
}

/** \brief Truncated projected form on the inside boundary of G and its high-temperature tails. */
struct ProjectedFormTail {
  SiteSet G, boundary, hull;
  MatrixXd local_form;  ///< (Pi R_{G^r} Pi)^{-1}, resolvent units
  MatrixXd full_form;   ///< (Pi R_box Pi)^{-1}
  VectorXd local_center;  ///< m_{G^r} restricted to the boundary
  VectorXd full_center;   ///< global minimizer restricted to the boundary
  double q = 0;

  struct FormTail {
    SiteSet range_set;      ///< C1 (inside box minus boundary)
    SiteSet augmented_set;  ///< C1 together with the boundary sites next to it
    MatrixXd matrix;        ///< d R(C1) d on the boundary
  };
  struct CenterTail {
    SiteSet range_set;
    VectorXd values;  ///< m-bar(C) on the whole box
  };
  /// One assembled term of the difference of fluctuation Hamiltonians: 1/2 u^T M u + v^T u + k, u = m - local_center.
  struct HTerm {
    SiteSet range_set;
    MatrixXd M;
    VectorXd v;
    double k = 0;
    double evaluate(const VectorXd& u) const { return 0.5 * u.dot(M * u) + v.dot(u) + k; }
  };
  std::vector<FormTail> form_tails;
  std::vector<CenterTail> center_tails;
  std::vector<HTerm> h_terms;
  double truncation = 0;

  MatrixXd reassembled_form() const {
    MatrixXd m = local_form;
    for (const auto& t : form_tails) m -= t.matrix;
    return m;
  }
  double delta_h_full(const VectorXd& mB) const {
    VectorXd u = mB - full_center;
    return 0.5 * q * u.dot(full_form * u);
  }
  double delta_h_local(const VectorXd& mB) const {
    VectorXd u = mB - local_center;
    return 0.5 * q * u.dot(local_form * u);
  }
  double h_term_sum(const VectorXd& mB) const {
    VectorXd u = mB - local_center;
    double s = 0;
    for (const auto& t : h_terms) s += t.evaluate(u);
    return s;
  }
  /// min over terms of -log(max |term|) / |C| over the supplied boundary samples.
  double measured_alpha(const std::vector<VectorXd>& samples) const {
    double alpha = std::numeric_limits<double>::infinity();
    for (const auto& t : h_terms) {
      double mx = 0;
      for (const auto& s : samples) mx = std::max(mx, std::abs(t.evaluate(s - local_center)));
      if (mx > 0) alpha = std::min(alpha, -std::log(mx) / t.range_set.size());
    }
    return alpha;
  }
};

/**
 * \brief Decompose the projected fluctuation Hamiltonian on the boundary of G.
 *
 * Exhaustive over connected range sets of the box (|box| <= 14). Walk kernels
 * are summed up to length L; with L from walk_length_for the decomposition is
 * exact to the requested tolerance.
 */
inline ProjectedFormTail projected_form_tail(const LatticeVolume& vol, const SiteSet& Gin, int r, const ModelParams& p,
                                             const Spins& sigma, const Field& eta, const BoundaryField& mtilde, int L) {
  ProjectedFormTail res;
  const double c = p.c();
  res.q = p.q;
  res.G = normalized(Gin);
  res.boundary = outer_boundary(vol, res.G);
  res.hull = r_hull(vol, res.G, r);
  const SiteSet& B = res.boundary;
  const SiteSet all = vol.all_sites();
  const int nB = static_cast<int>(B.size());
  if (nB == 0) throw std::domain_error("projected_form_tail: G has no boundary inside the box");
  auto inB = membership(vol, B), inGr = membership(vol, res.hull);

  auto projected_inverse = [&](const SiteSet& V) {
    MatrixXd R = resolvent_direct(vol, V, c);
    MatrixXd P(nB, nB);
    for (int i = 0; i < nB; ++i)
      for (int j = 0; j < nB; ++j) {
        int pi = static_cast<int>(std::lower_bound(V.begin(), V.end(), B[i]) - V.begin());
        int pj = static_cast<int>(std::lower_bound(V.begin(), V.end(), B[j]) - V.begin());
        P(i, j) = R(pi, pj);
      }
    return spd_inverse(P);
  };
  res.local_form = projected_inverse(res.hull);
  res.full_form = projected_inverse(all);

  // sources c m* sigma + eta/q + ambient boundary
  VectorXd src = neighbor_source(vol, all, nullptr, mtilde);
  for (int x = 0; x < vol.size(); ++x) src[x] += c * p.m_star * sigma[x] + eta[x] / p.q;
  {
    MatrixXd R = resolvent_direct(vol, all, c);
    res.full_center = restrict_to(R * src, B);
    VectorXd srcGr(res.hull.size());
    for (size_t i = 0; i < res.hull.size(); ++i) {
      int x = res.hull[i];
      double s = c * p.m_star * sigma[x] + eta[x] / p.q;
      for (const Coord& cc : vol.outside_neighbors(x)) s += mtilde.at(cc);
      srcGr[i] = s;
    }
    VectorXd mGr = resolvent_direct(vol, res.hull, c) * srcGr;
    res.local_center.resize(nB);
    for (int i = 0; i < nB; ++i)
      res.local_center[i] = mGr[std::lower_bound(res.hull.begin(), res.hull.end(), B[i]) - res.hull.begin()];
  }

  WalkKernelTable tab = walk_kernels(vol, all, c, L);
  res.truncation = tab.truncation;
  std::vector<int> bpos(vol.size(), -1);
  for (int i = 0; i < nB; ++i) bpos[B[i]] = i;

  struct FormEntry {
    std::uint64_t aug;
    MatrixXd A;
  };
  struct CenterEntry {
    std::uint64_t mask;
    VectorXd onB;
  };
  std::vector<FormEntry> forms;
  std::vector<CenterEntry> centers;
  for (const auto& [mask, K] : tab.kernel) {
    SiteSet C = mask_to_set(mask, all);
    bool leaves = false, hitsB = false;
    for (int x : C) {
      leaves |= inGr[x] == 0;
      hitsB |= inB[x] != 0;
    }
    if (!leaves) continue;
    // centering tail
    VectorXd mbar = K * src;
    res.center_tails.push_back({C, mbar});
    if (hitsB) centers.push_back({mask, restrict_to(mbar, B)});
    if (hitsB) continue;
    // form tail: C inside box minus boundary
    MatrixXd A = MatrixXd::Zero(nB, nB);
    std::uint64_t aug = mask;
    for (int i = 0; i < nB; ++i)
      for (int x : vol.neighbors(B[i]))
        if (mask >> x & 1u) aug |= std::uint64_t(1) << B[i];
    for (int i = 0; i < nB; ++i)
      for (int x : vol.neighbors(B[i])) {
        if (!(mask >> x & 1u)) continue;
        for (int j = 0; j < nB; ++j)
          for (int y : vol.neighbors(B[j]))
            if (mask >> y & 1u) A(i, j) += K(x, y);
      }
    if (A.cwiseAbs().maxCoeff() == 0) continue;
    res.form_tails.push_back({C, mask_to_set(aug, all), A});
    forms.push_back({aug, A});
  }

  // assemble terms by union of range sets
  std::map<std::uint64_t, ProjectedFormTail::HTerm> terms;
  auto term = [&](std::uint64_t m) -> ProjectedFormTail::HTerm& {
    auto it = terms.find(m);
    if (it == terms.end()) {
      ProjectedFormTail::HTerm t;
      t.range_set = mask_to_set(m, all);
      t.M = MatrixXd::Zero(nB, nB);
      t.v = VectorXd::Zero(nB);
      it = terms.emplace(m, std::move(t)).first;
    }
    return it->second;
  };
  const double q = p.q;
  const MatrixXd& Pr = res.local_form;
  for (const auto& f : forms) term(f.aug).M -= q * f.A;
  for (const auto& ce : centers) term(ce.mask).v -= q * (Pr * ce.onB);
  for (const auto& f : forms)
    for (const auto& ce : centers) term(f.aug | ce.mask).v += q * (f.A * ce.onB);
  for (const auto& c2 : centers)
    for (const auto& c3 : centers) term(c2.mask | c3.mask).k += 0.5 * q * c2.onB.dot(Pr * c3.onB);
  for (const auto& f : forms)
    for (const auto& c2 : centers) {
      VectorXd Am = f.A * c2.onB;
      for (const auto& c3 : centers) term(f.aug | c2.mask | c3.mask).k -= 0.5 * q * c3.onB.dot(Am);
    }
  for (auto& [m, t] : terms) res.h_terms.push_back(std::move(t));
  return res;
}

/// Exact fixed-range kernels by inclusion-exclusion over direct resolvents of subsets (test oracle).
inline std::map<std::uint64_t, MatrixXd> walk_kernels_mobius(const LatticeVolume& vol, const SiteSet& V, double c) {
  const int n = static_cast<int>(V.size());
  if (n > kMaxExhaustiveSites) throw std::domain_error("walk_kernels_mobius: size cap");
  const size_t nm = size_t(1) << n;
  std::vector<MatrixXd> RS(nm, MatrixXd::Zero(n, n));
  for (size_t m = 1; m < nm; ++m) {
    std::vector<int> loc;
    SiteSet S;
    for (int i = 0; i < n; ++i)
      if (m >> i & 1u) {
        loc.push_back(i);
        S.push_back(V[i]);
      }
    MatrixXd R = resolvent_direct(vol, S, c);
    for (size_t i = 0; i < loc.size(); ++i)
      for (size_t j = 0; j < loc.size(); ++j) RS[m](loc[i], loc[j]) = R(i, j);
  }
  // subset Mobius transform, one coordinate at a time
  for (int i = 0; i < n; ++i)
    for (size_t m = 0; m < nm; ++m)
      if (m >> i & 1u) RS[m] -= RS[m ^ (size_t(1) << i)];
  std::map<std::uint64_t, MatrixXd> out;
  for (size_t m = 1; m < nm; ++m)
    if (is_connected(vol, mask_to_set(m, V))) out[m] = RS[m];
  return out;
}

}  // namespace rfphi4

#endif
