#ifndef RFPHI4_LATTICE_HPP
#define RFPHI4_LATTICE_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfphi4 {

constexpr int kMaxDim = 3;

using Coord = std::array<int, kMaxDim>;
/// Sorted list of site indices of a LatticeVolume.
using SiteSet = std::vector<int>;

inline int l1_distance(const Coord& x, const Coord& y) {
  int s = 0;
  for (int k = 0; k < kMaxDim; ++k) s += std::abs(x[k] - y[k]);
  return s;
}

/** \brief Axis-aligned box in Z^d with row-major site indexing. */
class LatticeVolume {
 public:
  LatticeVolume() = default;
  explicit LatticeVolume(std::vector<int> extents) : ext_(std::move(extents)) {
    if (ext_.empty() || static_cast<int>(ext_.size()) > kMaxDim)
      throw std::domain_error("LatticeVolume: dimension must be 1.." + std::to_string(kMaxDim));
    n_ = 1;
    for (int e : ext_) {
      if (e < 1) throw std::domain_error("LatticeVolume: extents must be positive");
      n_ *= e;
    }
    coords_.resize(n_);
    nbrs_.resize(n_);
    outside_.resize(n_);
    for (int i = 0; i < n_; ++i) {
      Coord c{};
      int rem = i;
      for (int k = dim() - 1; k >= 0; --k) {
        c[k] = rem % ext_[k];
        rem /= ext_[k];
      }
      coords_[i] = c;
    }
    for (int i = 0; i < n_; ++i) {
      for (int k = 0; k < dim(); ++k) {
        for (int s : {-1, 1}) {
          Coord y = coords_[i];
          y[k] += s;
          int j = index(y);
          if (j >= 0)
            nbrs_[i].push_back(j);
          else
            outside_[i].push_back(y);
        }
      }
      std::sort(nbrs_[i].begin(), nbrs_[i].end());
    }
  }

  /// Convenience: a cube of side L in dimension d.
  static LatticeVolume cube(int d, int L) { return LatticeVolume(std::vector<int>(d, L)); }

  int dim() const { return static_cast<int>(ext_.size()); }
  int size() const { return n_; }
  const std::vector<int>& extents() const { return ext_; }
  const Coord& coord(int i) const { return coords_.at(i); }

  bool contains(const Coord& c) const {
    for (int k = 0; k < kMaxDim; ++k) {
      int e = k < dim() ? ext_[k] : 1;
      if (c[k] < 0 || c[k] >= e) return false;
    }
    return true;
  }

  /// Row-major index, or -1 outside the box.
  int index(const Coord& c) const {
    if (!contains(c)) return -1;
    int i = 0;
    for (int k = 0; k < dim(); ++k) i = i * ext_[k] + c[k];
    return i;
  }

  /// In-box nearest neighbours (sorted).
  const std::vector<int>& neighbors(int i) const { return nbrs_.at(i); }
  /// Nearest neighbours of site i that lie outside the box.
  const std::vector<Coord>& outside_neighbors(int i) const { return outside_.at(i); }

  int distance(int i, int j) const { return l1_distance(coords_[i], coords_[j]); }

  SiteSet all_sites() const {
    SiteSet s(n_);
    for (int i = 0; i < n_; ++i) s[i] = i;
    return s;
  }

 private:
  std::vector<int> ext_;
  int n_ = 0;
  std::vector<Coord> coords_;
  std::vector<std::vector<int>> nbrs_;
  std::vector<std::vector<Coord>> outside_;
};

/** \brief Boundary field on the ambient lattice: a constant with optional per-site overrides. */
struct BoundaryField {
  double value = 0.0;
  std::map<Coord, double> overrides;

  static BoundaryField constant(double v) { return BoundaryField{v, {}}; }
  double at(const Coord& c) const {
    auto it = overrides.find(c);
    return it == overrides.end() ? value : it->second;
  }
  BoundaryField negated() const {
    BoundaryField b{-value, {}};
    for (const auto& [c, v] : overrides) b.overrides[c] = -v;
    return b;
  }
};

inline std::vector<char> membership(const LatticeVolume& vol, const SiteSet& s) {
  std::vector<char> m(vol.size(), 0);
  for (int x : s) {
    if (x < 0 || x >= vol.size()) throw std::domain_error("site index outside volume");
    m[x] = 1;
  }
  return m;
}

inline SiteSet normalized(SiteSet s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

inline bool is_subset(const SiteSet& a, const SiteSet& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

inline SiteSet set_union(const SiteSet& a, const SiteSet& b) {
  SiteSet out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline SiteSet set_difference(const SiteSet& a, const SiteSet& b) {
  SiteSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline SiteSet set_intersection(const SiteSet& a, const SiteSet& b) {
  SiteSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

/// {x in universe \ G : d(x,G) = 1}.
inline SiteSet outer_boundary(const LatticeVolume& vol, const SiteSet& G, const SiteSet& universe) {
  if (!is_subset(G, universe)) throw std::domain_error("outer_boundary: G is not contained in the universe");
  auto inG = membership(vol, G);
  auto inU = membership(vol, universe);
  SiteSet out;
  for (int x : G)
    for (int y : vol.neighbors(x))
      if (inU[y] && !inG[y]) out.push_back(y);
  return normalized(out);
}

inline SiteSet outer_boundary(const LatticeVolume& vol, const SiteSet& G) {
  return outer_boundary(vol, G, vol.all_sites());
}

/// Ambient-lattice boundary of G: every site of Z^d at distance one from G, in-box or not.
inline std::vector<Coord> ambient_outer_boundary(const LatticeVolume& vol, const SiteSet& G) {
  auto inG = membership(vol, G);
  std::vector<Coord> out;
  for (int x : G) {
    for (int y : vol.neighbors(x))
      if (!inG[y]) out.push_back(vol.coord(y));
    for (const Coord& c : vol.outside_neighbors(x)) out.push_back(c);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Components ordered by their smallest (lexicographically first) site.
inline std::vector<SiteSet> connected_components(const LatticeVolume& vol, const SiteSet& S) {
  auto in = membership(vol, S);
  std::vector<char> seen(vol.size(), 0);
  std::vector<SiteSet> comps;
  for (int s : normalized(S)) {
    if (seen[s]) continue;
    SiteSet comp;
    std::vector<int> stack{s};
    seen[s] = 1;
    while (!stack.empty()) {
      int x = stack.back();
      stack.pop_back();
      comp.push_back(x);
      for (int y : vol.neighbors(x))
        if (in[y] && !seen[y]) {
          seen[y] = 1;
          stack.push_back(y);
        }
    }
    comps.push_back(normalized(comp));
  }
  return comps;
}

inline bool is_connected(const LatticeVolume& vol, const SiteSet& S) {
  return !S.empty() && connected_components(vol, S).size() == 1;
}

/// G^r = {x in the volume : d(x,G) <= r}.
inline SiteSet r_hull(const LatticeVolume& vol, const SiteSet& G, int r) {
  if (r < 0) throw std::domain_error("r_hull: r must be nonnegative");
  membership(vol, G);
  SiteSet out;
  for (int x = 0; x < vol.size(); ++x)
    for (int g : G)
      if (vol.distance(x, g) <= r) {
        out.push_back(x);
        break;
      }
  return out;
}

/// Largest pairwise 1-norm distance in S (0 for |S| <= 1).
inline int diameter(const LatticeVolume& vol, const SiteSet& S) {
  int d = 0;
  for (size_t i = 0; i < S.size(); ++i)
    for (size_t j = i + 1; j < S.size(); ++j) d = std::max(d, vol.distance(S[i], S[j]));
  return d;
}

/// Distance from site x to the exterior of the box (1 for a face site).
inline int distance_to_exterior(const LatticeVolume& vol, int x) {
  const Coord& c = vol.coord(x);
  int best = 1 << 30;
  for (int k = 0; k < vol.dim(); ++k) best = std::min({best, c[k] + 1, vol.extents()[k] - c[k]});
  return best;
}

/// Bitmask helpers for volumes of at most 63 sites.
inline SiteSet mask_to_set(std::uint64_t mask, const SiteSet& universe) {
  SiteSet out;
  for (size_t i = 0; i < universe.size(); ++i)
    if (mask >> i & 1u) out.push_back(universe[i]);
  return out;
}

/**
 * \brief Visit every connected subset of `universe` with at most `max_size` sites.
 *
 * Each subset is produced exactly once, grown from its smallest member
 * (ESU extension-set enumeration). The callback receives the sorted subset.
 */
inline void enumerate_connected_subsets(const LatticeVolume& vol, const SiteSet& universe, int max_size,
                                        const std::function<void(const SiteSet&)>& visit) {
  SiteSet U = normalized(universe);
  auto inU = membership(vol, U);
  std::vector<int> current;
  std::vector<int> inCur(vol.size(), 0);

  std::function<void(std::vector<int>, int)> extend = [&](std::vector<int> ext, int root) {
    visit(normalized(current));
    if (static_cast<int>(current.size()) >= max_size) return;
    while (!ext.empty()) {
      int w = ext.back();
      ext.pop_back();
      std::vector<int> next_ext = ext;
      for (int u : vol.neighbors(w)) {
        if (!inU[u] || u <= root || inCur[u]) continue;
        bool touches = false;
        for (int v : vol.neighbors(u))
          if (inCur[v]) touches = true;
        if (touches) continue;
        if (std::find(next_ext.begin(), next_ext.end(), u) == next_ext.end()) next_ext.push_back(u);
      }
      current.push_back(w);
      inCur[w] = 1;
      extend(next_ext, root);
      inCur[w] = 0;
      current.pop_back();
    }
  };

  for (int root : U) {
    current = {root};
    inCur[root] = 1;
    std::vector<int> ext;
    for (int u : vol.neighbors(root))
      if (inU[u] && u > root) ext.push_back(u);
    extend(ext, root);
    inCur[root] = 0;
  }
}

}  // namespace rfphi4

#endif
