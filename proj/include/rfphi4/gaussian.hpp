#ifndef RFPHI4_GAUSSIAN_HPP
#define RFPHI4_GAUSSIAN_HPP

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "lattice.hpp"

namespace rfphi4 {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Real field indexed by the sites of a LatticeVolume.
using Field = VectorXd;
/// Ising signs (+1/-1) indexed by the sites of a LatticeVolume.
using Spins = std::vector<int>;

struct ModelParams {
  double q = 0.0;
  double m_star = 1.0;
  double a = 1.0;
  double b = 0.0;
  double delta = 0.0;
  /// Half-width of the window U+ = [m* - A2, m* + A2].
  double A2 = std::numeric_limits<double>::infinity();
  int d = 1;

  double c() const {
    if (q <= 0) throw std::domain_error("ModelParams: c = a/q needs q > 0");
    return a / q;
  }
  bool in_U(double m) const { return std::abs(std::abs(m) - m_star) <= A2; }
};

inline Spins constant_spins(const LatticeVolume& vol, int s) { return Spins(vol.size(), s); }

/// Dirichlet Laplacian on V (diagonal -2d, +1 for neighbours inside V).
inline MatrixXd laplacian(const LatticeVolume& vol, const SiteSet& V) {
  const int n = static_cast<int>(V.size());
  MatrixXd L = MatrixXd::Zero(n, n);
  std::vector<int> pos(vol.size(), -1);
  for (int i = 0; i < n; ++i) pos[V[i]] = i;
  for (int i = 0; i < n; ++i) {
    L(i, i) = -2.0 * vol.dim();
    for (int y : vol.neighbors(V[i]))
      if (pos[y] >= 0) L(i, pos[y]) = 1.0;
  }
  return L;
}

/// a - q Delta_V.
inline MatrixXd precision(const LatticeVolume& vol, const SiteSet& V, const ModelParams& p) {
  MatrixXd Q = -p.q * laplacian(vol, V);
  Q.diagonal().array() += p.a;
  return Q;
}

inline MatrixXd spd_inverse(const MatrixXd& A) {
  Eigen::LLT<MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw std::runtime_error("spd_inverse: matrix is not positive definite");
  return llt.solve(MatrixXd::Identity(A.rows(), A.cols()));
}

inline double spd_log_det(const MatrixXd& A) {
  if (A.rows() == 0) return 0.0;
  Eigen::LLT<MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw std::runtime_error("spd_log_det: matrix is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// R_V = (c - Delta_V)^{-1}.
inline MatrixXd resolvent_direct(const LatticeVolume& vol, const SiteSet& V, double c) {
  if (V.empty()) throw std::domain_error("resolvent_direct: empty V");
  if (!(c > 0)) throw std::domain_error("resolvent_direct: c must be positive");
  MatrixXd A = -laplacian(vol, V);
  A.diagonal().array() += c;
  return spd_inverse(A);
}

/// Restriction of a full-volume field to V (in the order of V).
inline VectorXd restrict_to(const VectorXd& f, const SiteSet& V) {
  VectorXd out(V.size());
  for (size_t i = 0; i < V.size(); ++i) out[i] = f[V[i]];
  return out;
}

/**
 * \brief For x in V, the sum of field values over neighbours of x outside V.
 *
 * In-box neighbours take their value from `ext` (treated as zero when `ext`
 * is null); out-of-box neighbours take theirs from the ambient boundary field.
 */
inline VectorXd neighbor_source(const LatticeVolume& vol, const SiteSet& V, const Field* ext,
                                const BoundaryField& mtilde) {
  auto inV = membership(vol, V);
  VectorXd s = VectorXd::Zero(V.size());
  for (size_t i = 0; i < V.size(); ++i) {
    const int x = V[i];
    if (ext)
      for (int y : vol.neighbors(x))
        if (!inV[y]) s[i] += (*ext)[y];
    for (const Coord& c : vol.outside_neighbors(x)) s[i] += mtilde.at(c);
  }
  return s;
}

/// Linear coefficient z of H restricted to V: a m* sigma + eta + q * (neighbour source).
inline VectorXd linear_term(const LatticeVolume& vol, const SiteSet& V, const ModelParams& p, const Spins& sigma,
                            const Field& eta, const Field* ext, const BoundaryField& mtilde) {
  VectorXd z = p.q * neighbor_source(vol, V, ext, mtilde);
  for (size_t i = 0; i < V.size(); ++i) z[i] += p.a * p.m_star * sigma[V[i]] + eta[V[i]];
  return z;
}

/**
 * \brief Minimizer of the quadratic Hamiltonian on V with everything outside V frozen.
 *
 * With V = the whole box this is the global minimizer; for a proper subset it
 * is the conditional minimizer given `ext` on the in-box complement. The
 * solve decouples over the connected components of V automatically since
 * the precision matrix is block diagonal.
 */
inline VectorXd minimizer(const LatticeVolume& vol, const SiteSet& V, const ModelParams& p, const Spins& sigma,
                          const Field& eta, const BoundaryField& mtilde, const Field* ext = nullptr) {
  if (static_cast<int>(V.size()) < vol.size() && ext == nullptr)
    throw std::domain_error("minimizer: conditional mode needs the field outside V");
  VectorXd z = linear_term(vol, V, p, sigma, eta, ext, mtilde);
  Eigen::LLT<MatrixXd> llt(precision(vol, V, p));
  return llt.solve(z);
}

/// Direct evaluation of the quadratic Hamiltonian H (wells picked by sigma).
inline double hamiltonian(const LatticeVolume& vol, const ModelParams& p, const Spins& sigma, const Field& eta,
                          const BoundaryField& mtilde, const VectorXd& m) {
  double h = 0;
  for (int x = 0; x < vol.size(); ++x) {
    for (int y : vol.neighbors(x))
      if (y > x) h += 0.5 * p.q * (m[x] - m[y]) * (m[x] - m[y]);
    for (const Coord& c : vol.outside_neighbors(x)) {
      double dlt = m[x] - mtilde.at(c);
      h += 0.5 * p.q * dlt * dlt;
    }
    double dw = m[x] - p.m_star * sigma[x];
    h += 0.5 * p.a * dw * dw - eta[x] * m[x];
  }
  return h;
}

/// Sum over boundary pairs of mtilde^2 (each out-of-box neighbour counted once per in-box partner).
inline double boundary_square_sum(const LatticeVolume& vol, const BoundaryField& mtilde) {
  double s = 0;
  for (int x = 0; x < vol.size(); ++x)
    for (const Coord& c : vol.outside_neighbors(x)) s += mtilde.at(c) * mtilde.at(c);
  return s;
}

/** \brief H written as 1/2 m^T Q m - z^T m + k on the whole box. */
struct QuadraticModel {
  MatrixXd Q;
  VectorXd z;
  double k = 0;

  double value(const VectorXd& m) const { return 0.5 * m.dot(Q * m) - z.dot(m) + k; }
  VectorXd argmin() const { return Q.llt().solve(z); }
  double inf() const { return k - 0.5 * z.dot(argmin()); }
};

inline QuadraticModel quadratic_model(const LatticeVolume& vol, const ModelParams& p, const Spins& sigma,
                                      const Field& eta, const BoundaryField& mtilde) {
  SiteSet all = vol.all_sites();
  QuadraticModel qm;
  qm.Q = precision(vol, all, p);
  qm.z = linear_term(vol, all, p, sigma, eta, nullptr, mtilde);
  qm.k = 0.5 * p.a * p.m_star * p.m_star * vol.size() + 0.5 * p.q * boundary_square_sum(vol, mtilde);
  return qm;
}

/// inf H by direct minimization.
inline double min_energy_direct(const LatticeVolume& vol, const ModelParams& p, const Spins& sigma, const Field& eta,
                                const BoundaryField& mtilde) {
  return quadratic_model(vol, p, sigma, eta, mtilde).inf();
}

/// inf H from the resolvent closed form; needs q > 0.
inline double min_energy(const LatticeVolume& vol, const ModelParams& p, const Spins& sigma, const Field& eta,
                         const BoundaryField& mtilde) {
  SiteSet all = vol.all_sites();
  const double c = p.c();
  MatrixXd R = resolvent_direct(vol, all, c);
  VectorXd s(vol.size());
  for (int x = 0; x < vol.size(); ++x) s[x] = sigma[x];
  VectorXd h = eta + p.q * neighbor_source(vol, all, nullptr, mtilde);
  VectorXd Rs = R * s;
  const double ms = p.m_star;
  return -(p.a * p.a * ms * ms / (2 * p.q)) * s.dot(Rs) + 0.5 * p.a * ms * ms * vol.size() -
         (p.a * ms / p.q) * h.dot(Rs) - h.dot(R * h) / (2 * p.q) + 0.5 * p.q * boundary_square_sum(vol, mtilde);
}

/** \brief Positive-definite quadratic form with centering and constant offset. */
struct GaussianSpec {
  SiteSet support;
  MatrixXd matrix;
  VectorXd center;
  double constant = 0;

  double evaluate(const VectorXd& x) const {
    VectorXd u = x - center;
    return constant + 0.5 * u.dot(matrix * u);
  }
};

/**
 * \brief H = dH_outer(m_B) + dH_inner(m_I | m_B) + inf H with B the boundary of G inside the box.
 *
 * The inner form on I = box \ B has fixed matrix Q_I; its center depends
 * affinely on m_B through `inner_offset + inner_gain * m_B`.
 */
struct EnergySplit {
  SiteSet G, boundary, interior;
  GaussianSpec outer;
  MatrixXd inner_matrix;
  VectorXd inner_offset;
  MatrixXd inner_gain;
  double inf_h = 0;

  VectorXd inner_center(const VectorXd& mB) const { return inner_offset + inner_gain * mB; }

  GaussianSpec inner(const VectorXd& mB) const { return GaussianSpec{interior, inner_matrix, inner_center(mB), 0.0}; }

  struct Parts {
    double outer, inner, inf_h;
    double total() const { return outer + inner + inf_h; }
  };
  Parts evaluate(const VectorXd& m) const {
    VectorXd mB = restrict_to(m, boundary), mI = restrict_to(m, interior);
    double o = boundary.empty() ? 0.0 : outer.evaluate(mB);
    double i = interior.empty() ? 0.0 : inner(mB).evaluate(mI);
    return {o, i, inf_h};
  }
};

inline EnergySplit energy_split(const LatticeVolume& vol, const SiteSet& G, const ModelParams& p, const Spins& sigma,
                                const Field& eta, const BoundaryField& mtilde) {
  EnergySplit es;
  es.G = normalized(G);
  es.boundary = outer_boundary(vol, es.G);
  es.interior = set_difference(vol.all_sites(), es.boundary);
  QuadraticModel qm = quadratic_model(vol, p, sigma, eta, mtilde);
  VectorXd mu = qm.argmin();
  es.inf_h = qm.k - 0.5 * qm.z.dot(mu);

  const SiteSet& B = es.boundary;
  const SiteSet& I = es.interior;
  auto sub = [&](const SiteSet& r, const SiteSet& c) {
    MatrixXd M(r.size(), c.size());
    for (size_t i = 0; i < r.size(); ++i)
      for (size_t j = 0; j < c.size(); ++j) M(i, j) = qm.Q(r[i], c[j]);
    return M;
  };
  if (!B.empty()) {
    MatrixXd Qinv = spd_inverse(qm.Q);
    MatrixXd PB(B.size(), B.size());
    for (size_t i = 0; i < B.size(); ++i)
      for (size_t j = 0; j < B.size(); ++j) PB(i, j) = Qinv(B[i], B[j]);
    es.outer = GaussianSpec{B, spd_inverse(PB), restrict_to(mu, B), 0.0};
  }
  if (!I.empty()) {
    es.inner_matrix = sub(I, I);
    Eigen::LLT<MatrixXd> llt(es.inner_matrix);
    es.inner_offset = llt.solve(restrict_to(qm.z, I));
    if (!B.empty())
      es.inner_gain = -llt.solve(sub(I, B));
    else
      es.inner_gain = MatrixXd::Zero(I.size(), 0);
  }
  return es;
}

struct DetSplit {
  double projected = 1;  ///< det(Pi_V Q^{-1} Pi_V)^{-1}
  double complement = 1; ///< det Q restricted to the complement of V
  double log_projected = 0;
  double log_complement = 0;
};

/// Factor det Q = det(Pi_V Q^{-1} Pi_V)^{-1} * det Q_{complement}; V holds row indices of Q.
inline DetSplit det_split(const MatrixXd& Q, const std::vector<int>& V) {
  const int n = static_cast<int>(Q.rows());
  std::vector<char> inV(n, 0);
  for (int v : V) {
    if (v < 0 || v >= n) throw std::domain_error("det_split: index out of range");
    inV[v] = 1;
  }
  std::vector<int> Vs, W;
  for (int i = 0; i < n; ++i) (inV[i] ? Vs : W).push_back(i);
  MatrixXd Qinv = spd_inverse(Q);
  MatrixXd P(Vs.size(), Vs.size());
  for (size_t i = 0; i < Vs.size(); ++i)
    for (size_t j = 0; j < Vs.size(); ++j) P(i, j) = Qinv(Vs[i], Vs[j]);
  MatrixXd C(W.size(), W.size());
  for (size_t i = 0; i < W.size(); ++i)
    for (size_t j = 0; j < W.size(); ++j) C(i, j) = Q(W[i], W[j]);
  DetSplit ds;
  ds.log_projected = -spd_log_det(P);
  ds.log_complement = spd_log_det(C);
  ds.projected = std::exp(ds.log_projected);
  ds.complement = std::exp(ds.log_complement);
  return ds;
}

/// log of (2 pi)^{|box|/2} det(a - q Delta)^{-1/2} e^{-inf H}.
inline double log_gaussian_partition(const LatticeVolume& vol, const ModelParams& p, const Spins& sigma,
                                     const Field& eta, const BoundaryField& mtilde) {
  QuadraticModel qm = quadratic_model(vol, p, sigma, eta, mtilde);
  return 0.5 * vol.size() * std::log(2 * std::numbers::pi) - 0.5 * spd_log_det(qm.Q) - qm.inf();
}

inline double gaussian_partition(const LatticeVolume& vol, const ModelParams& p, const Spins& sigma, const Field& eta,
                                 const BoundaryField& mtilde) {
  return std::exp(log_gaussian_partition(vol, p, sigma, eta, mtilde));
}

}  // namespace rfphi4

#endif
