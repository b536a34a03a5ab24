#ifndef RFPHI4_SIMULATION_HPP
#define RFPHI4_SIMULATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <thread>
#include <vector>

#include "contour.hpp"
#include "gaussian.hpp"
#include "ising_image.hpp"
#include "lattice.hpp"
#include "potential.hpp"

namespace rfphi4 {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Key of an independent stream, derived from a seed and up to two labels.
inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0xD6E8FEB86659FD93ull));
}

/// Label of a lattice site by its coordinates, so nested boxes share the values of common sites.
inline std::uint64_t site_label(const Coord& c) {
  std::uint64_t h = 0x243F6A8885A308D3ull;
  for (int v : c) h = splitmix64(h ^ static_cast<std::uint32_t>(v));
  return h;
}

/**
 * \brief Counter-based generator: output k is a bijective mix of key + k.
 *
 * Satisfies UniformRandomBitGenerator; copying it copies the position.
 */
struct CounterRng {
  using result_type = std::uint64_t;
  std::uint64_t key = 0;
  std::uint64_t counter = 0;

  CounterRng() = default;
  explicit CounterRng(std::uint64_t k) : key(k) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return splitmix64(key + 0x9E3779B97F4A7C15ull * ++counter); }
  /// Uniform on (0, 1).
  double uniform() { return ((*this)() >> 11) * 0x1.0p-53 + 0x1.0p-54; }
  double normal() {
    double u = uniform(), v = uniform();
    return std::sqrt(-2 * std::log(u)) * std::cos(2 * std::numbers::pi * v);
  }
};

enum class DisorderLaw { truncated_gaussian, uniform };

struct DisorderSpec {
  double delta = 0;
  double sigma2 = 0;  ///< parent variance for the truncated Gaussian
  std::uint64_t seed = 0;
  DisorderLaw law = DisorderLaw::truncated_gaussian;

  /// Variance proxy s^2 with P[eta >= t] <= e^{-t^2 / 2 s^2}.
  double proxy_variance() const { return law == DisorderLaw::uniform ? delta * delta : sigma2; }
};

/// i.i.d. symmetric bounded field; each site draws from its own stream keyed by its coordinates.
inline Field sample_disorder(const LatticeVolume& vol, const DisorderSpec& spec) {
  if (!(spec.delta >= 0)) throw std::domain_error("sample_disorder: delta must be nonnegative");
  if (spec.law == DisorderLaw::truncated_gaussian && spec.delta > 0 && !(spec.sigma2 > 0))
    throw std::domain_error("sample_disorder: truncated Gaussian needs sigma2 > 0");
  Field eta = Field::Zero(vol.size());
  if (spec.delta == 0) return eta;
  const double s = std::sqrt(spec.sigma2);
  for (int x = 0; x < vol.size(); ++x) {
    CounterRng g(stream_key(spec.seed, 0xD15, site_label(vol.coord(x))));
    if (spec.law == DisorderLaw::uniform) {
      eta[x] = spec.delta * (2 * g.uniform() - 1);
    } else {
      double v;
      do v = s * g.normal();
      while (std::abs(v) > spec.delta);
      eta[x] = v;
    }
  }
  return eta;
}

namespace detail {

inline double dV(double m, const ModelParams& p, Potential pot) {
  if (pot.kind == Potential::Kind::gaussian_wells) return p.a * (m - p.m_star * std::tanh(p.a * p.m_star * m));
  return m * (m * m - p.m_star * p.m_star) / (2 * p.m_star * p.m_star);
}

inline double d2V(double m, const ModelParams& p, Potential pot) {
  if (pot.kind == Potential::Kind::gaussian_wells) {
    double t = std::tanh(p.a * p.m_star * m);
    return p.a - p.a * p.a * p.m_star * p.m_star * (1 - t * t);
  }
  return (3 * m * m - p.m_star * p.m_star) / (2 * p.m_star * p.m_star);
}

/// log(1 + e^t) without overflow.
inline double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

}  // namespace detail

/**
 * \brief Single-site conditional density e^{g(m)}, g = -V(m) - (qk/2) m^2 + l m.
 *
 * k is the number of neighbours (in the box or on the boundary) and l the
 * sum q * (neighbour spins) + eta_x.
 */
struct Conditional {
  const ModelParams* p;
  Potential pot;
  double qk, l;

  double log_density(double m) const { return -potential_V(m, *p, pot) - 0.5 * qk * m * m + l * m; }
  double d1(double m) const { return -detail::dV(m, *p, pot) - qk * m + l; }
  double d2(double m) const { return -detail::d2V(m, *p, pot) - qk; }

  /// Local maxima of g, from Newton iterations started across the relevant range.
  std::vector<double> modes() const {
    const double ms = p->m_star;
    const double far = std::abs(l) / std::max(qk + 0.5, 1e-12) + ms;
    std::vector<double> starts{-far, -ms, -0.5 * ms, 0.0, 0.5 * ms, ms, far};
    std::vector<double> out;
    for (double m : starts) {
      for (int it = 0; it < 200; ++it) {
        double h2 = d2(m), h1 = d1(m);
        double step = h2 < 0 ? -h1 / h2 : (h1 > 0 ? 1.0 : -1.0) * std::max(1.0, 0.1 * std::abs(m));
        m += step;
        if (std::abs(step) < 1e-12 * (1 + std::abs(m))) break;
      }
      if (d2(m) < 0 && std::abs(d1(m)) < 1e-6 * (1 + std::abs(l) + qk * std::abs(m))) {
        bool dup = false;
        for (double o : out) dup = dup || std::abs(o - m) < 1e-6 * (1 + std::abs(m));
        if (!dup) out.push_back(m);
      }
    }
    if (out.empty()) throw std::runtime_error("Conditional: no mode found");
    return out;
  }
};

/**
 * \brief Inverse-CDF table of a 1D density on merged windows around its modes.
 *
 * Each mode contributes mu +- width / sqrt(curvature); cells carry trapezoid
 * masses and samples are uniform within a cell.
 */
class InverseCdfTable {
 public:
  InverseCdfTable(const Conditional& cond, int points = 2048, double width = 12.0) {
    std::vector<double> mu = cond.modes();
    double gmax = -std::numeric_limits<double>::infinity();
    for (double m : mu) gmax = std::max(gmax, cond.log_density(m));
    std::vector<std::pair<double, double>> iv;
    for (double m : mu) {
      if (cond.log_density(m) < gmax - 60) continue;
      double w = width / std::sqrt(std::max(-cond.d2(m), 1e-12));
      iv.push_back({m - w, m + w});
    }
    std::sort(iv.begin(), iv.end());
    std::vector<std::pair<double, double>> merged;
    for (auto& s : iv) {
      if (!merged.empty() && s.first <= merged.back().second)
        merged.back().second = std::max(merged.back().second, s.second);
      else
        merged.push_back(s);
    }
    double total_len = 0;
    for (auto& s : merged) total_len += s.second - s.first;
    for (auto& s : merged) {
      int n = std::max(16, static_cast<int>(points * (s.second - s.first) / total_len));
      double h = (s.second - s.first) / n;
      double prev = std::exp(cond.log_density(s.first) - gmax);
      for (int i = 0; i < n; ++i) {
        double x0 = s.first + i * h, x1 = x0 + h;
        double cur = std::exp(cond.log_density(x1) - gmax);
        lo_.push_back(x0);
        hi_.push_back(x1);
        double mass = 0.5 * h * (prev + cur);
        cdf_.push_back((cdf_.empty() ? 0.0 : cdf_.back()) + mass);
        prev = cur;
      }
    }
    const double z = cdf_.back();
    for (double& c : cdf_) c /= z;
  }

  double sample(double u) const {
    size_t k = std::lower_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin();
    if (k >= cdf_.size()) k = cdf_.size() - 1;
    double c0 = k == 0 ? 0.0 : cdf_[k - 1];
    double t = cdf_[k] > c0 ? (u - c0) / (cdf_[k] - c0) : 0.5;
    return lo_[k] + t * (hi_[k] - lo_[k]);
  }

  size_t size() const { return cdf_.size(); }

 private:
  std::vector<double> lo_, hi_, cdf_;
};

enum class Algorithm { metropolis, heatbath };

struct ChainOptions {
  Algorithm algorithm = Algorithm::heatbath;
  Potential pot;
  int table_points = 2048;
  /// Initial value of every spin; defaults to the constant part of the boundary field.
  std::optional<double> init;
};

struct ChainState {
  VectorXd field;
  long sweep_count = 0;
  CounterRng rng;
  std::vector<long> accepted, proposed;
};

/** \brief Single-site Markov chain for the measure proportional to e^{-E}. */
class Chain {
 public:
  Chain(const LatticeVolume& vol, const Field& eta, const BoundaryField& mtilde, const ModelParams& p, std::uint64_t seed,
        ChainOptions opt = {})
      : vol_(vol), eta_(eta), p_(p), opt_(opt) {
    const int n = vol.size();
    if (eta.size() != n) throw std::domain_error("Chain: eta has the wrong size");
    st_.field = VectorXd::Constant(n, opt.init.value_or(mtilde.value));
    st_.rng = CounterRng(stream_key(seed, 0xC4A1));
    st_.accepted.assign(n, 0);
    st_.proposed.assign(n, 0);
    bsum_.assign(n, 0.0);
    k_.assign(n, 0);
    for (int x = 0; x < n; ++x) {
      k_[x] = static_cast<int>(vol.neighbors(x).size() + vol.outside_neighbors(x).size());
      for (const Coord& c : vol.outside_neighbors(x)) bsum_[x] += mtilde.at(c);
    }
    step_ = 1.0 / std::sqrt(p.a + 2 * vol.dim() * p.q);
  }

  Conditional conditional(int x) const {
    double s = bsum_[x];
    for (int y : vol_.neighbors(x)) s += st_.field[y];
    return Conditional{&p_, opt_.pot, p_.q * k_[x], p_.q * s + eta_[x]};
  }

  void sweep() {
    for (int x = 0; x < vol_.size(); ++x) update(x);
    ++st_.sweep_count;
  }

  const ChainState& state() const { return st_; }
  const VectorXd& field() const { return st_.field; }

 private:
  void update(int x) {
    Conditional c = conditional(x);
    ++st_.proposed[x];
    if (opt_.algorithm == Algorithm::heatbath) {
      InverseCdfTable t(c, opt_.table_points);
      st_.field[x] = t.sample(st_.rng.uniform());
      ++st_.accepted[x];
      return;
    }
    const double m = st_.field[x];
    const double m2 = m + step_ * st_.rng.normal();
    const double u = st_.rng.uniform();
    if (std::log(u) < c.log_density(m2) - c.log_density(m)) {
      st_.field[x] = m2;
      ++st_.accepted[x];
    }
  }

  LatticeVolume vol_;
  Field eta_;
  ModelParams p_;
  ChainOptions opt_;
  ChainState st_;
  std::vector<double> bsum_;
  std::vector<int> k_;
  double step_ = 1;
};

/// Runs `sweeps` sweeps, calling `observe(field, sweep)` after each one.
inline ChainState run_chain(const LatticeVolume& vol, const Field& eta, const BoundaryField& mtilde, const ModelParams& p,
                            long sweeps, std::uint64_t seed, ChainOptions opt = {},
                            const std::function<void(const VectorXd&, long)>& observe = {}) {
  if (sweeps < 1) throw std::domain_error("run_chain: sweeps must be >= 1");
  Chain ch(vol, eta, mtilde, p, seed, opt);
  for (long s = 0; s < sweeps; ++s) {
    ch.sweep();
    if (observe) observe(ch.field(), ch.state().sweep_count);
  }
  return ch.state();
}

/// sigma_x ~ T(. | m_x) independently, one stream per site.
inline Spins coarse_grain(const VectorXd& m, const ModelParams& p, std::uint64_t seed) {
  Spins s(m.size());
  for (int x = 0; x < m.size(); ++x) {
    CounterRng g(stream_key(seed, 0xC6, static_cast<std::uint64_t>(x)));
    s[x] = g.uniform() < kernel_T(1, m[x], p) ? 1 : -1;
  }
  return s;
}

/** \brief Mean of a time series with a batch-means standard error and a Geweke z-score. */
struct SeriesEstimate {
  double mean = 0;
  double stderr_ = 0;
  double geweke_z = 0;
  long samples = 0;
};

inline SeriesEstimate batch_estimate(const std::vector<double>& v, int batches = 20) {
  SeriesEstimate e;
  e.samples = static_cast<long>(v.size());
  if (v.empty()) return e;
  double s = 0;
  for (double x : v) s += x;
  e.mean = s / v.size();
  auto bm = [&](size_t lo, size_t hi, int nb, double& mean, double& var) {
    std::vector<double> means;
    size_t len = (hi - lo) / nb;
    if (len == 0) {
      mean = 0;
      for (size_t i = lo; i < hi; ++i) mean += v[i];
      mean /= std::max<size_t>(hi - lo, 1);
      var = 0;
      return;
    }
    for (int b = 0; b < nb; ++b) {
      double t = 0;
      for (size_t i = lo + b * len; i < lo + (b + 1) * len; ++i) t += v[i];
      means.push_back(t / len);
    }
    mean = 0;
    for (double m : means) mean += m;
    mean /= nb;
    double ss = 0;
    for (double m : means) ss += (m - mean) * (m - mean);
    var = nb > 1 ? ss / (nb - 1) / nb : 0;
  };
  double m0, v0;
  bm(0, v.size(), batches, m0, v0);
  e.stderr_ = std::sqrt(v0);
  const size_t n = v.size();
  double ma, va, mb, vb;
  bm(0, n / 10, std::max(2, batches / 4), ma, va);
  bm(n / 2, n, std::max(2, batches / 2), mb, vb);
  e.geweke_z = (va + vb) > 0 ? (ma - mb) / std::sqrt(va + vb) : 0.0;
  return e;
}

struct OrderOptions {
  long sweeps = 2000;
  long burn_in = 1000;
  std::uint64_t seed = 1;
  ChainOptions chain;
  /// +1: event m_x0 <= m* / 2; -1: event m_x0 >= -m* / 2.
  int orientation = 1;
  int batches = 20;
};

/// Time average of the indicator of m_x0 <= m* / 2 under the chain with boundary field mtilde.
inline SeriesEstimate order_probability(const LatticeVolume& vol, const Field& eta, const BoundaryField& mtilde,
                                        const ModelParams& p, int x0, const OrderOptions& o = {}) {
  if (x0 < 0 || x0 >= vol.size()) throw std::domain_error("order_probability: x0 outside the volume");
  std::vector<double> series;
  series.reserve(o.sweeps);
  const double thr = 0.5 * p.m_star;
  run_chain(vol, eta, mtilde, p, o.burn_in + o.sweeps, o.seed, o.chain, [&](const VectorXd& m, long s) {
    if (s > o.burn_in) series.push_back(o.orientation * m[x0] <= thr ? 1.0 : 0.0);
  });
  return batch_estimate(series, o.batches);
}

/**
 * \brief Exact mu[m_x0 <= m* / 2] on a d = 1 chain by a transfer operator.
 *
 * The spin is discretised by Gauss-Legendre panels on windows around the two
 * wells, broken at m* / 2; mass outside the windows is below e^{-width^2/2}.
 */
inline double chain_order_probability_exact(int n, const Field& eta, double left, double right, const ModelParams& p,
                                            int x0, Potential pot = {}, double h = 0.5, double width = 14.0) {
  if (x0 < 0 || x0 >= n || eta.size() != n) throw std::domain_error("chain_order_probability_exact: bad input");
  const double s = 1.0 / std::sqrt(p.a);
  std::vector<std::pair<double, double>> iv{{-p.m_star - width * s, -p.m_star + width * s},
                                            {p.m_star - width * s, p.m_star + width * s}};
  if (p.m_star < 2 * width * s) iv = {{-p.m_star - width * s, p.m_star + width * s}};
  std::vector<double> g, w;
  for (auto [lo, hi] : iv) {
    Grid gr = make_grid([](double) { return 0.0; }, lo, hi, h, {0.5 * p.m_star});
    g.insert(g.end(), gr.x.begin(), gr.x.end());
    w.insert(w.end(), gr.w.begin(), gr.w.end());
  }
  const int N = static_cast<int>(g.size());
  auto site = [&](int x, int i) {
    double v = -potential_V(g[i], p, pot) + eta[x] * g[i];
    if (x == 0) v -= 0.5 * p.q * (g[i] - left) * (g[i] - left);
    if (x == n - 1) v -= 0.5 * p.q * (g[i] - right) * (g[i] - right);
    return v;
  };
  MatrixXd B(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) B(i, j) = std::exp(-0.5 * p.q * (g[i] - g[j]) * (g[i] - g[j]));
  auto weights = [&](int x) {
    VectorXd lw(N);
    for (int i = 0; i < N; ++i) lw[i] = site(x, i);
    double mx = lw.maxCoeff();
    VectorXd v(N);
    for (int i = 0; i < N; ++i) v[i] = w[i] * std::exp(lw[i] - mx);
    return v;
  };
  // forward and backward messages, renormalised at each step
  VectorXd f = weights(0);
  f /= f.sum();
  for (int x = 1; x <= x0; ++x) {
    VectorXd t = (B * f).cwiseProduct(weights(x));
    f = t / t.sum();
  }
  VectorXd b = VectorXd::Ones(N);
  for (int x = n - 1; x > x0; --x) {
    VectorXd t = B * (weights(x).cwiseProduct(b));
    b = t / t.sum();
  }
  VectorXd post = f.cwiseProduct(b);
  double tot = post.sum(), low = 0;
  for (int i = 0; i < N; ++i)
    if (g[i] <= 0.5 * p.m_star) low += post[i];
  return low / tot;
}

/** \brief Both sides of the coarse-graining inequality at one site, by quadrature. */
struct Prop52Result {
  double lhs = 0;          ///< mu[m_x0 <= m* / 2]
  double t_minus = 0;      ///< T(mu)[sigma_x0 = -1]
  double residual = 0;     ///< lhs - t_minus
  double gauss_term = 0;   ///< P[N(0, 1/a) >= m* / 2]
  double alpha = 0;        ///< Gaussian high-temperature parameter
  double alpha_term = 0;   ///< e^{-alpha}
  double margin = 0;       ///< t_minus + gauss_term + alpha_term - lhs
  bool holds = false;
};

inline Prop52Result prop52_check(const LatticeVolume& vol, const Field& eta, const BoundaryField& mtilde,
                                 const ModelParams& p, int x0, Potential pot = {}, double h = 0.5) {
  if (vol.size() > 3) throw std::domain_error("prop52_check: volume exceeds the quadrature cap");
  if (x0 < 0 || x0 >= vol.size()) throw std::domain_error("prop52_check: x0 outside the volume");
  const double thr = 0.5 * p.m_star;
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> br{thr};
  double lz = log_image_integral(vol, eta, mtilde, p, pot, [](int, double) { return 0.0; }, br, h);
  double ll = log_image_integral(
      vol, eta, mtilde, p, pot, [&](int x, double m) { return x == x0 && m > thr ? ninf : 0.0; }, br, h);
  double lt = log_image_integral(
      vol, eta, mtilde, p, pot,
      [&](int x, double m) { return x == x0 ? -detail::softplus(2 * p.a * p.m_star * m) : 0.0; }, br, h);
  Prop52Result r;
  r.lhs = std::exp(ll - lz);
  r.t_minus = std::exp(lt - lz);
  r.residual = r.lhs - r.t_minus;
  r.gauss_term = normal_tail(std::sqrt(p.a) * thr);
  r.alpha = p.q > 0 ? 0.5 * std::log1p(p.a / (2.0 * vol.dim() * p.q)) - 1.0 / std::numbers::e
                    : std::numeric_limits<double>::infinity();
  r.alpha_term = std::exp(-r.alpha);
  r.margin = r.t_minus + r.gauss_term + r.alpha_term - r.lhs;
  r.holds = r.margin >= 0;
  return r;
}

/** \brief Order-probability estimates over a disorder ensemble. */
struct EnsembleConfig {
  std::vector<int> extents;
  ModelParams params;
  DisorderSpec disorder;
  double boundary = 0;
  int realizations = 10;
  int x0 = -1;  ///< -1: centre of the box
  OrderOptions order;
  int threads = 1;
};

struct RealizationResult {
  int index = 0;
  std::uint64_t disorder_seed = 0;
  std::uint64_t chain_seed = 0;
  double eta_x0 = 0;
  SeriesEstimate estimate;
};

inline int centre_site(const LatticeVolume& vol) {
  Coord c{};
  for (int k = 0; k < vol.dim(); ++k) c[k] = vol.extents()[k] / 2;
  return vol.index(c);
}

/// Realization i uses disorder seed stream_key(seed, 1, i); all chains share stream_key(seed, 2).
inline RealizationResult run_realization(const EnsembleConfig& cfg, int i) {
  LatticeVolume vol(cfg.extents);
  const int x0 = cfg.x0 >= 0 ? cfg.x0 : centre_site(vol);
  RealizationResult r;
  r.index = i;
  DisorderSpec ds = cfg.disorder;
  ds.seed = r.disorder_seed = stream_key(cfg.disorder.seed, 1, i);
  Field eta = sample_disorder(vol, ds);
  r.eta_x0 = eta[x0];
  OrderOptions o = cfg.order;
  o.seed = r.chain_seed = stream_key(cfg.order.seed, 2);
  r.estimate = order_probability(vol, eta, BoundaryField::constant(cfg.boundary), cfg.params, x0, o);
  return r;
}

/// Runs the listed realizations on up to `threads` threads; results come back in the order of `which`.
inline std::vector<RealizationResult> run_realizations(const EnsembleConfig& cfg, const std::vector<int>& which) {
  std::vector<RealizationResult> out(which.size());
  const int n = static_cast<int>(which.size());
  const int nt = std::max(1, std::min(cfg.threads, n));
  if (nt == 1) {
    for (int k = 0; k < n; ++k) out[k] = run_realization(cfg, which[k]);
    return out;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < nt; ++t)
    pool.emplace_back([&, t] {
      for (int k = t; k < n; k += nt) out[k] = run_realization(cfg, which[k]);
    });
  for (auto& th : pool) th.join();
  return out;
}

inline std::vector<RealizationResult> run_ensemble(const EnsembleConfig& cfg) {
  std::vector<int> all(cfg.realizations);
  for (int i = 0; i < cfg.realizations; ++i) all[i] = i;
  return run_realizations(cfg, all);
}

}  // namespace rfphi4

#endif
