#ifndef RFPHI4_CONFIG_HPP
#define RFPHI4_CONFIG_HPP

#include <cstdint>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/sha.h>

#include "json.hpp"

#include "checks.hpp"
#include "potential.hpp"
#include "simulation.hpp"

namespace rfphi4 {

using nlohmann::json;

/** \brief Invalid configuration, with one diagnostic per offending field. */
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> d) : std::runtime_error(join(d)), diagnostics(std::move(d)) {}
  std::vector<std::string> diagnostics;

 private:
  static std::string join(const std::vector<std::string>& d) {
    std::string s = "invalid config:";
    for (const auto& x : d) s += "\n  " + x;
    return s;
  }
};

struct ParamsInput {
  double eps0 = 0.1;
  double m_star = 100;
  int d = 3;
  std::optional<double> q, delta;
};

struct SimulateInput {
  int realizations = 10;
  long sweeps = 4000;
  long burn_in = 1000;
  std::string algorithm = "metropolis";
  std::string law = "truncated_gaussian";
  std::optional<double> sigma2;
  std::optional<double> boundary;
  int x0 = -1;
};

struct ExtractInput {
  std::vector<double> eta;
  std::optional<double> boundary;
  std::string potential = "phi4";
};

struct RunConfig {
  std::string mode;
  ParamsInput params;
  std::vector<int> extents;
  std::uint64_t disorder_seed = 1;
  std::uint64_t chain_seed = 2;
  std::string out;
  Tolerances tolerances;
  std::vector<int> checks;
  int threads = 1;
  SimulateInput simulate;
  ExtractInput extract;
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where,
                           std::vector<std::string>& errs) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) errs.push_back(where + it.key() + ": unknown key");
}

template <class T>
void read(const json& j, const char* key, T& dst, const std::string& where, std::vector<std::string>& errs) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    errs.push_back(where + key + ": wrong type");
  }
}

template <class T>
void read_opt(const json& j, const char* key, std::optional<T>& dst, const std::string& where,
              std::vector<std::string>& errs) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  read(j, key, v, where, errs);
  dst = v;
}

}  // namespace detail

inline const std::set<std::string>& known_modes() {
  static const std::set<std::string> m{"verify", "simulate", "constants", "extract"};
  return m;
}

/// Field-level checks that depend on the mode; returns the diagnostics.
inline std::vector<std::string> validate(const RunConfig& c) {
  std::vector<std::string> e;
  if (!known_modes().count(c.mode)) e.push_back("mode: must be one of verify|simulate|constants|extract");
  if (!(c.params.eps0 > 0 && c.params.eps0 < 1)) e.push_back("params.eps0: must lie in (0, 1)");
  if (!(c.params.m_star > 0)) e.push_back("params.m_star: must be positive");
  if (c.params.d < 1 || c.params.d > kMaxDim) e.push_back("params.d: must be 1, 2 or 3");
  if (c.params.q && !(*c.params.q > 0)) e.push_back("params.q: must be positive");
  if (c.params.delta && !(*c.params.delta >= 0)) e.push_back("params.delta: must be nonnegative");
  if (c.threads < 1) e.push_back("threads: must be >= 1");
  for (int id : c.checks)
    if (id < 1 || id > 11) e.push_back("checks: ids run from 1 to 11");
  for (int x : c.extents)
    if (x < 1) e.push_back("volume.extents: entries must be >= 1");
  const bool needs_volume = c.mode == "simulate" || c.mode == "extract";
  if (needs_volume) {
    if (c.extents.empty()) e.push_back("volume.extents: required for mode " + c.mode);
    if (static_cast<int>(c.extents.size()) != c.params.d) e.push_back("volume.extents: length must equal params.d");
  }
  if (c.mode == "simulate") {
    const auto& s = c.simulate;
    if (s.realizations < 1) e.push_back("simulate.realizations: must be >= 1");
    if (s.sweeps < 1) e.push_back("simulate.sweeps: must be >= 1");
    if (s.burn_in < 0) e.push_back("simulate.burn_in: must be >= 0");
    if (s.algorithm != "metropolis" && s.algorithm != "heatbath")
      e.push_back("simulate.algorithm: must be metropolis or heatbath");
    if (s.law != "truncated_gaussian" && s.law != "uniform")
      e.push_back("simulate.law: must be truncated_gaussian or uniform");
    if (s.sigma2 && !(*s.sigma2 > 0)) e.push_back("simulate.sigma2: must be positive");
  }
  if (c.mode == "extract") {
    long n = 1;
    for (int x : c.extents) n *= x;
    if (n > kMaxImageSites) e.push_back("volume.extents: extract needs at most 4 sites");
    if (!c.extract.eta.empty() && static_cast<long>(c.extract.eta.size()) != n)
      e.push_back("extract.eta: length must equal the number of sites");
    if (c.extract.potential != "phi4" && c.extract.potential != "gaussian_wells")
      e.push_back("extract.potential: must be phi4 or gaussian_wells");
  }
  return e;
}

inline RunConfig parse_config(const json& j) {
  std::vector<std::string> errs;
  RunConfig c;
  if (!j.is_object()) throw ConfigError({"<root>: must be an object"});
  detail::reject_unknown(j, {"mode", "params", "volume", "seeds", "out", "tolerances", "checks", "threads", "simulate", "extract"},
                         "", errs);
  detail::read(j, "mode", c.mode, "", errs);
  detail::read(j, "out", c.out, "", errs);
  detail::read(j, "threads", c.threads, "", errs);
  detail::read(j, "checks", c.checks, "", errs);
  if (j.contains("params")) {
    const json& p = j["params"];
    if (!p.is_object()) {
      errs.push_back("params: must be an object");
    } else {
      detail::reject_unknown(p, {"eps0", "m_star", "d", "q", "delta"}, "params.", errs);
      detail::read(p, "eps0", c.params.eps0, "params.", errs);
      detail::read(p, "m_star", c.params.m_star, "params.", errs);
      detail::read(p, "d", c.params.d, "params.", errs);
      detail::read_opt(p, "q", c.params.q, "params.", errs);
      detail::read_opt(p, "delta", c.params.delta, "params.", errs);
    }
  }
  if (j.contains("volume")) {
    const json& v = j["volume"];
    if (!v.is_object()) {
      errs.push_back("volume: must be an object");
    } else {
      detail::reject_unknown(v, {"extents"}, "volume.", errs);
      detail::read(v, "extents", c.extents, "volume.", errs);
    }
  }
  if (j.contains("seeds")) {
    const json& s = j["seeds"];
    if (!s.is_object()) {
      errs.push_back("seeds: must be an object");
    } else {
      detail::reject_unknown(s, {"disorder", "chain"}, "seeds.", errs);
      detail::read(s, "disorder", c.disorder_seed, "seeds.", errs);
      detail::read(s, "chain", c.chain_seed, "seeds.", errs);
    }
  }
  if (j.contains("tolerances")) {
    const json& t = j["tolerances"];
    if (!t.is_object()) {
      errs.push_back("tolerances: must be an object");
    } else {
      for (auto it = t.begin(); it != t.end(); ++it) {
        if (!it.value().is_number())
          errs.push_back("tolerances." + it.key() + ": must be a number");
        else
          c.tolerances[it.key()] = it.value().get<double>();
      }
    }
  }
  if (j.contains("simulate")) {
    const json& s = j["simulate"];
    if (!s.is_object()) {
      errs.push_back("simulate: must be an object");
    } else {
      const std::string w = "simulate.";
      detail::reject_unknown(s, {"realizations", "sweeps", "burn_in", "algorithm", "law", "sigma2", "boundary", "x0"}, w,
                             errs);
      detail::read(s, "realizations", c.simulate.realizations, w, errs);
      detail::read(s, "sweeps", c.simulate.sweeps, w, errs);
      detail::read(s, "burn_in", c.simulate.burn_in, w, errs);
      detail::read(s, "algorithm", c.simulate.algorithm, w, errs);
      detail::read(s, "law", c.simulate.law, w, errs);
      detail::read_opt(s, "sigma2", c.simulate.sigma2, w, errs);
      detail::read_opt(s, "boundary", c.simulate.boundary, w, errs);
      detail::read(s, "x0", c.simulate.x0, w, errs);
    }
  }
  if (j.contains("extract")) {
    const json& s = j["extract"];
    if (!s.is_object()) {
      errs.push_back("extract: must be an object");
    } else {
      detail::reject_unknown(s, {"eta", "boundary", "potential"}, "extract.", errs);
      detail::read(s, "eta", c.extract.eta, "extract.", errs);
      detail::read_opt(s, "boundary", c.extract.boundary, "extract.", errs);
      detail::read(s, "potential", c.extract.potential, "extract.", errs);
    }
  }
  if (!j.contains("mode")) errs.push_back("mode: required");
  if (errs.empty()) errs = validate(c);
  if (!errs.empty()) throw ConfigError(errs);
  return c;
}

inline json to_json(const RunConfig& c) {
  json j;
  j["mode"] = c.mode;
  json p{{"eps0", c.params.eps0}, {"m_star", c.params.m_star}, {"d", c.params.d}};
  p["q"] = c.params.q ? json(*c.params.q) : json(nullptr);
  p["delta"] = c.params.delta ? json(*c.params.delta) : json(nullptr);
  j["params"] = p;
  j["volume"] = {{"extents", c.extents}};
  j["seeds"] = {{"disorder", c.disorder_seed}, {"chain", c.chain_seed}};
  j["out"] = c.out;
  j["tolerances"] = json::object();
  for (const auto& [k, v] : c.tolerances) j["tolerances"][k] = v;
  j["checks"] = c.checks;
  j["threads"] = c.threads;
  const auto& s = c.simulate;
  j["simulate"] = {{"realizations", s.realizations}, {"sweeps", s.sweeps}, {"burn_in", s.burn_in},
                   {"algorithm", s.algorithm},       {"law", s.law},       {"x0", s.x0}};
  j["simulate"]["sigma2"] = s.sigma2 ? json(*s.sigma2) : json(nullptr);
  j["simulate"]["boundary"] = s.boundary ? json(*s.boundary) : json(nullptr);
  j["extract"] = {{"eta", c.extract.eta}, {"potential", c.extract.potential}};
  j["extract"]["boundary"] = c.extract.boundary ? json(*c.extract.boundary) : json(nullptr);
  return j;
}

/// Config content that determines results: everything except the output path and thread count.
inline json result_json(const RunConfig& c) {
  json j = to_json(c);
  j.erase("out");
  j.erase("threads");
  return j;
}

/// Canonical text of a config: sorted keys, no whitespace.
inline std::string canonical(const RunConfig& c) { return result_json(c).dump(); }

/// Git blob id (SHA-1 of "blob <len>\0" + text) of the canonical config.
inline std::string config_hash(const RunConfig& c) {
  const std::string body = canonical(c);
  std::string blob = "blob " + std::to_string(body.size());
  blob.push_back('\0');
  blob += body;
  unsigned char md[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), md);
  std::ostringstream o;
  for (unsigned char b : md) o << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
  return o.str();
}

/// Model parameters of a config: certificate values, with q and delta overridable.
inline ModelParams resolve_params(const RunConfig& c, bool measure = false, ParameterCertificate* cert_out = nullptr) {
  ParameterCertificate cert = select_parameters(c.params.eps0, c.params.m_star, c.params.d, {512, measure});
  ModelParams p = cert.params(c.params.q.value_or(cert.q0), c.params.delta.value_or(cert.delta0));
  if (cert_out) *cert_out = cert;
  return p;
}

}  // namespace rfphi4

#endif
