#ifndef RFPHI4_QUADRATURE_HPP
#define RFPHI4_QUADRATURE_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

namespace rfphi4 {

/// Nodes and weights of a one-dimensional rule.
struct Grid {
  std::vector<double> x, w;
  int size() const { return static_cast<int>(x.size()); }
};

namespace detail {

inline const std::vector<double>& gl_nodes() {
  static const std::vector<double> nodes = [] {
    using GL = boost::math::quadrature::gauss<double, 10>;
    std::vector<double> out;
    const auto& ab = GL::abscissa();
    for (auto it = ab.rbegin(); it != ab.rend(); ++it)
      if (*it > 0) out.push_back(-*it);
    for (double a : ab) out.push_back(a);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }();
  return nodes;
}

inline const std::vector<double>& gl_weights() {
  static const std::vector<double> weights = [] {
    using GL = boost::math::quadrature::gauss<double, 10>;
    const auto& ab = GL::abscissa();
    const auto& wt = GL::weights();
    std::vector<std::pair<double, double>> pts;
    for (size_t i = 0; i < ab.size(); ++i) {
      pts.push_back({ab[i], wt[i]});
      if (ab[i] > 0) pts.push_back({-ab[i], wt[i]});
    }
    std::sort(pts.begin(), pts.end());
    std::vector<double> out;
    for (auto& p : pts) out.push_back(p.second);
    return out;
  }();
  return weights;
}

}  // namespace detail

inline void append_panel(Grid& g, double lo, double hi) {
  const auto& t = detail::gl_nodes();
  const auto& w = detail::gl_weights();
  const double h = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
  for (size_t i = 0; i < t.size(); ++i) {
    g.x.push_back(mid + h * t[i]);
    g.w.push_back(h * w[i]);
  }
}

/**
 * \brief Composite Gauss-Legendre grid on [lo, hi] adapted to a log-envelope.
 *
 * Panels have width at most `h` and break at every point of `breaks` inside
 * the range. A panel is kept only if the envelope somewhere on it comes within
 * `cutoff` of the envelope maximum over the whole range.
 */
inline Grid make_grid(const std::function<double(double)>& log_env, double lo, double hi, double h,
                      std::vector<double> breaks = {}, double cutoff = 80.0) {
  if (!(hi > lo) || !(h > 0)) throw std::domain_error("make_grid: bad range");
  breaks.push_back(lo);
  breaks.push_back(hi);
  std::sort(breaks.begin(), breaks.end());
  std::vector<double> edges;
  for (size_t i = 0; i + 1 < breaks.size(); ++i) {
    double a = std::max(lo, breaks[i]), b = std::min(hi, breaks[i + 1]);
    if (!(b > a)) continue;
    int n = std::max(1, static_cast<int>(std::ceil((b - a) / h - 1e-9)));
    for (int k = 0; k < n; ++k) edges.push_back(a + (b - a) * k / n);
  }
  edges.push_back(hi);
  const auto& t = detail::gl_nodes();
  std::vector<double> pmax(edges.size() - 1, -std::numeric_limits<double>::infinity());
  double gmax = -std::numeric_limits<double>::infinity();
  for (size_t p = 0; p + 1 < edges.size(); ++p) {
    double a = edges[p], b = edges[p + 1];
    double best = std::max(log_env(a), log_env(b));
    for (double s : t) best = std::max(best, log_env(0.5 * (a + b) + 0.5 * (b - a) * s));
    pmax[p] = best;
    gmax = std::max(gmax, best);
  }
  Grid g;
  for (size_t p = 0; p + 1 < edges.size(); ++p)
    if (pmax[p] >= gmax - cutoff) append_panel(g, edges[p], edges[p + 1]);
  if (g.size() == 0) throw std::runtime_error("make_grid: envelope is -inf everywhere");
  return g;
}

/// Gaussian-envelope grid centered at mu with standard deviation s, plus extra breaks.
inline Grid gaussian_grid(double mu, double s, std::vector<double> breaks = {}, double width = 13.0,
                          double panel = 1.0) {
  return make_grid([&](double m) { return -0.5 * (m - mu) * (m - mu) / (s * s); }, mu - width * s, mu + width * s,
                   panel * s, std::move(breaks));
}

/**
 * \brief Integral of exp(sum of log-factors) by variable elimination.
 *
 * Each variable carries its own grid. Factors are dense tables over at most a
 * few variables; tables are kept in linear space with a per-table log scale.
 * Elimination order is greedy by the size of the table it would create.
 */
class FactorIntegrator {
 public:
  explicit FactorIntegrator(std::vector<Grid> grids) : grids_(std::move(grids)) {}

  int num_vars() const { return static_cast<int>(grids_.size()); }
  const Grid& grid(int v) const { return grids_.at(v); }

  /// log-values at the grid nodes of v; -inf encodes zero.
  void add_unary(int v, const std::vector<double>& logv) {
    check_var(v);
    if (static_cast<int>(logv.size()) != grids_[v].size()) throw std::domain_error("add_unary: size mismatch");
    add_table({v}, logv);
  }
  void add_unary(int v, const std::function<double(double)>& logf) {
    check_var(v);
    std::vector<double> lv(grids_[v].size());
    for (int i = 0; i < grids_[v].size(); ++i) lv[i] = logf(grids_[v].x[i]);
    add_table({v}, lv);
  }
  /// Row-major table over (u, v) nodes.
  void add_pair(int u, int v, const std::vector<double>& logv) {
    check_var(u);
    check_var(v);
    if (u == v) throw std::domain_error("add_pair: identical variables");
    if (static_cast<int>(logv.size()) != grids_[u].size() * grids_[v].size())
      throw std::domain_error("add_pair: size mismatch");
    if (u < v) {
      add_table({u, v}, logv);
    } else {
      std::vector<double> tr(logv.size());
      int nu = grids_[u].size(), nv = grids_[v].size();
      for (int i = 0; i < nu; ++i)
        for (int j = 0; j < nv; ++j) tr[j * nu + i] = logv[i * nv + j];
      add_table({v, u}, tr);
    }
  }
  void add_pair(int u, int v, const std::function<double(double, double)>& logf) {
    check_var(u);
    check_var(v);
    std::vector<double> lv(grids_[u].size() * grids_[v].size());
    for (int i = 0; i < grids_[u].size(); ++i)
      for (int j = 0; j < grids_[v].size(); ++j) lv[i * grids_[v].size() + j] = logf(grids_[u].x[i], grids_[v].x[j]);
    add_pair(u, v, lv);
  }
  /// Gaussian factor exp(-1/2 (m - mu)^T A (m - mu)) split into unary and pair tables.
  void add_gaussian(const std::vector<int>& vars, const std::vector<std::vector<double>>& A,
                    const std::vector<double>& mu) {
    const size_t n = vars.size();
    for (size_t i = 0; i < n; ++i) {
      double aii = A[i][i], mi = mu[i];
      add_unary(vars[i], [=](double x) { return -0.5 * aii * (x - mi) * (x - mi); });
      for (size_t j = i + 1; j < n; ++j) {
        double aij = A[i][j], mj = mu[j];
        if (aij == 0) continue;
        add_pair(vars[i], vars[j], [=](double x, double y) { return -aij * (x - mi) * (y - mj); });
      }
    }
  }

  /// log of the integral over all variables; throws if the integral is negative.
  double log_integral() const {
    auto [l, sign] = run();
    if (sign < 0) throw std::domain_error("FactorIntegrator: integral is negative");
    return l;
  }

  /// The integral itself, for factors of either sign.
  double integral() const {
    auto [l, sign] = run();
    return sign * std::exp(l);
  }

  /// Factor over `scope` given by its (possibly negative) values at the grid nodes.
  void add_values(const std::vector<int>& scope, const std::function<double(const std::vector<double>&)>& f) {
    for (int v : scope) check_var(v);
    for (size_t i = 0; i < scope.size(); ++i)
      for (size_t j = i + 1; j < scope.size(); ++j)
        if (scope[i] == scope[j]) throw std::domain_error("add_values: repeated variable");
    Table t;
    t.scope = scope;
    size_t n = 1;
    for (int v : scope) n *= grids_[v].size();
    t.data.resize(n);
    std::vector<size_t> idx(scope.size(), 0);
    std::vector<double> x(scope.size());
    double mx = 0;
    for (size_t o = 0; o < n; ++o) {
      for (size_t k = 0; k < scope.size(); ++k) x[k] = grids_[scope[k]].x[idx[k]];
      double val = f(x);
      if (!std::isfinite(val)) throw std::domain_error("FactorIntegrator: non-finite factor");
      t.data[o] = val;
      mx = std::max(mx, std::abs(val));
      for (int k = static_cast<int>(scope.size()) - 1; k >= 0; --k) {
        if (++idx[k] < static_cast<size_t>(grids_[scope[k]].size())) break;
        idx[k] = 0;
      }
    }
    if (mx == 0) {
      t.zero = true;
    } else {
      for (double& d : t.data) d /= mx;
      t.log_scale = std::log(mx);
    }
    tables_.push_back(std::move(t));
  }

  /// Unary factor given by its (possibly negative) values.
  void add_unary_values(int v, const std::function<double(double)>& f) {
    check_var(v);
    Table t;
    t.scope = {v};
    t.data.resize(grids_[v].size());
    double mx = 0;
    for (int i = 0; i < grids_[v].size(); ++i) {
      t.data[i] = f(grids_[v].x[i]);
      if (!std::isfinite(t.data[i])) throw std::domain_error("FactorIntegrator: non-finite factor");
      mx = std::max(mx, std::abs(t.data[i]));
    }
    if (mx == 0) {
      t.zero = true;
    } else {
      for (double& d : t.data) d /= mx;
      t.log_scale = std::log(mx);
    }
    tables_.push_back(std::move(t));
  }

 private:
  struct Table {
    std::vector<int> scope;
    std::vector<double> data;
    double log_scale = 0;
    bool zero = false;
  };

  std::pair<double, int> run() const {
    const std::pair<double, int> zero{-std::numeric_limits<double>::infinity(), 1};
    std::vector<Table> tabs = tables_;
    std::vector<char> done(grids_.size(), 0);
    double log_scale = 0;
    int sign = 1;
    auto absorb = [&](const Table& t) {
      log_scale += t.log_scale + std::log(std::abs(t.data[0]));
      if (t.data[0] < 0) sign = -sign;
    };
    for (size_t step = 0; step < grids_.size(); ++step) {
      int best = -1;
      double best_cost = std::numeric_limits<double>::infinity();
      for (int v = 0; v < num_vars(); ++v) {
        if (done[v]) continue;
        std::vector<int> sc = merged_scope(tabs, v);
        double cost = 1;
        for (int u : sc) cost *= grids_[u].size();
        if (cost < best_cost) {
          best_cost = cost;
          best = v;
        }
      }
      done[best] = 1;
      Table t = eliminate(tabs, best);
      if (t.zero) return zero;
      if (t.scope.empty())
        absorb(t);
      else
        tabs.push_back(std::move(t));
    }
    for (const Table& t : tabs) {
      if (t.zero) return zero;
      absorb(t);
    }
    return {log_scale, sign};
  }


  void check_var(int v) const {
    if (v < 0 || v >= num_vars()) throw std::domain_error("FactorIntegrator: bad variable");
  }

  void add_table(std::vector<int> scope, const std::vector<double>& logv) {
    Table t;
    t.scope = std::move(scope);
    double mx = -std::numeric_limits<double>::infinity();
    for (double l : logv) mx = std::max(mx, l);
    if (!std::isfinite(mx)) {
      if (mx == -std::numeric_limits<double>::infinity()) {
        t.zero = true;
        t.data.assign(logv.size(), 0.0);
        tables_.push_back(std::move(t));
        return;
      }
      throw std::domain_error("FactorIntegrator: non-finite log factor");
    }
    t.log_scale = mx;
    t.data.resize(logv.size());
    for (size_t i = 0; i < logv.size(); ++i) t.data[i] = std::exp(logv[i] - mx);
    tables_.push_back(std::move(t));
  }

  static std::vector<int> merged_scope(const std::vector<Table>& tabs, int v) {
    std::vector<int> sc;
    for (const Table& t : tabs)
      if (std::find(t.scope.begin(), t.scope.end(), v) != t.scope.end()) sc.insert(sc.end(), t.scope.begin(), t.scope.end());
    sc.push_back(v);
    std::sort(sc.begin(), sc.end());
    sc.erase(std::unique(sc.begin(), sc.end()), sc.end());
    return sc;
  }

  Table eliminate(std::vector<Table>& tabs, int v) const {
    std::vector<Table> involved, rest;
    for (Table& t : tabs)
      (std::find(t.scope.begin(), t.scope.end(), v) != t.scope.end() ? involved : rest).push_back(std::move(t));
    tabs = std::move(rest);
    std::vector<int> full = merged_scope(involved, v);
    std::vector<int> out_scope;
    for (int u : full)
      if (u != v) out_scope.push_back(u);

    Table out;
    out.scope = out_scope;
    for (const Table& t : involved) {
      out.log_scale += t.log_scale;
      if (t.zero) out.zero = true;
    }
    size_t out_size = 1;
    for (int u : out_scope) out_size *= grids_[u].size();
    out.data.assign(out_size, 0.0);
    if (out.zero) return out;

    // strides of each involved table with respect to the full scope
    const size_t nf = full.size();
    std::vector<std::vector<size_t>> strides(involved.size(), std::vector<size_t>(nf, 0));
    for (size_t k = 0; k < involved.size(); ++k) {
      size_t s = 1;
      const auto& sc = involved[k].scope;
      for (int j = static_cast<int>(sc.size()) - 1; j >= 0; --j) {
        size_t pos = std::find(full.begin(), full.end(), sc[j]) - full.begin();
        strides[k][pos] = s;
        s *= grids_[sc[j]].size();
      }
    }
    const size_t vpos = std::find(full.begin(), full.end(), v) - full.begin();
    const Grid& gv = grids_[v];
    std::vector<size_t> dims(nf);
    for (size_t j = 0; j < nf; ++j) dims[j] = grids_[full[j]].size();

    // iterate over the output scope; inner loop runs over v
    std::vector<size_t> idx(nf, 0);
    std::vector<size_t> base(involved.size());
    for (size_t o = 0; o < out_size; ++o) {
      for (size_t k = 0; k < involved.size(); ++k) {
        size_t b = 0;
        for (size_t j = 0; j < nf; ++j)
          if (j != vpos) b += idx[j] * strides[k][j];
        base[k] = b;
      }
      double acc = 0;
      for (int i = 0; i < gv.size(); ++i) {
        double prod = gv.w[i];
        for (size_t k = 0; k < involved.size(); ++k) prod *= involved[k].data[base[k] + i * strides[k][vpos]];
        acc += prod;
      }
      out.data[o] = acc;
      // advance the mixed-radix counter, skipping the eliminated position
      for (int j = static_cast<int>(nf) - 1; j >= 0; --j) {
        if (static_cast<size_t>(j) == vpos) continue;
        if (++idx[j] < dims[j]) break;
        idx[j] = 0;
      }
    }
    double mx = 0;
    for (double d : out.data) mx = std::max(mx, std::abs(d));
    if (mx <= 0) {
      out.zero = true;
      return out;
    }
    for (double& d : out.data) d /= mx;
    out.log_scale += std::log(mx);
    return out;
  }

  std::vector<Grid> grids_;
  std::vector<Table> tables_;
};

/// log-sum-exp of two values.
inline double log_add_exp(double x, double y) {
  if (x == -std::numeric_limits<double>::infinity()) return y;
  if (y == -std::numeric_limits<double>::infinity()) return x;
  double m = std::max(x, y);
  return m + std::log1p(std::exp(-std::abs(x - y)));
}

inline double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace rfphi4

#endif
