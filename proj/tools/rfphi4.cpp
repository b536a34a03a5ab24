#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "rfphi4/checks.hpp"
#include "rfphi4/config.hpp"
#include "rfphi4/ising_image.hpp"
#include "rfphi4/simulation.hpp"

namespace fs = std::filesystem;
using namespace rfphi4;

namespace {

constexpr const char* kOutEnv = "RFPHI4_OUT";

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << s;
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

json base_record(const RunConfig& cfg, const std::string& hash) {
  json r;
  r["run_id"] = cfg.mode + "-" + hash.substr(0, 12);
  r["config_hash"] = hash;
  r["config"] = to_json(cfg);
  return r;
}

int run_constants(const RunConfig& cfg, const fs::path& out, json& rec) {
  ParameterCertificate cert;
  ModelParams p = resolve_params(cfg, true, &cert);
  std::vector<std::pair<std::string, double>> rows{
      {"a", cert.a},          {"q0", cert.q0}, {"delta0", cert.delta0},           {"b", cert.b},
      {"eps1", cert.eps1},    {"A2", cert.A2}, {"epsilon", cert.epsilon_measured}, {"epsilon_bound", cert.epsilon_peierls},
      {"q", p.q},             {"delta", p.delta},
      {"beta", peierls_beta(p)}, {"r", interaction_range(p)}};
  try {
    PeierlsConstants k = peierls_constants(p, cert.epsilon_measured);
    rows.push_back({"beta_tilde", k.beta_tilde});
    rows.push_back({"beta_tilde_gauss", k.beta_tilde_gauss});
    rows.push_back({"alpha0", k.alpha0});
    rows.push_back({"alpha_final", k.alpha_final});
  } catch (const std::domain_error& e) {
    rec["note"] = std::string("beta_tilde not defined: ") + e.what();
  }
  std::string csv = "name,value\n";
  for (const auto& [k, v] : rows) {
    csv += k + "," + fmt(v) + "\n";
    rec["constants"][k] = v;
    std::cout << k << " " << v << "\n";
  }
  write_text(out / "constants.csv", csv);
  return 0;
}

int run_verify(const RunConfig& cfg, json& rec) {
  std::set<int> only(cfg.checks.begin(), cfg.checks.end());
  int failed = 0;
  rec["checks"] = json::array();
  for (const auto& c : acceptance_checks()) {
    if (!only.empty() && !only.count(c.id)) continue;
    CheckResult r;
    try {
      r = c.run(cfg.tolerances);
    } catch (const std::exception& e) {
      r.id = c.id;
      r.name = c.name;
      r.note = std::string("exception: ") + e.what();
    }
    std::cout << summary_line(r) << std::endl;
    json j{{"id", r.id}, {"name", r.name}, {"status", r.passed() ? "pass" : "fail"}, {"seconds", r.seconds},
           {"time_limit", r.time_limit}, {"measured", r.measured}};
    if (!r.note.empty()) j["note"] = r.note;
    rec["checks"].push_back(j);
    failed += !r.passed();
  }
  rec["failed"] = failed;
  return failed == 0 ? 0 : 1;
}

std::string realization_row(const RealizationResult& r) {
  return std::to_string(r.index) + "," + std::to_string(r.disorder_seed) + "," + std::to_string(r.chain_seed) + "," +
         fmt(r.eta_x0) + "," + fmt(r.estimate.mean) + "," + fmt(r.estimate.stderr_) + "," + fmt(r.estimate.geweke_z) +
         "," + std::to_string(r.estimate.samples);
}

int run_simulate(const RunConfig& cfg, const std::string& hash, const fs::path& out, json& rec) {
  ModelParams p = resolve_params(cfg);
  EnsembleConfig e;
  e.extents = cfg.extents;
  e.params = p;
  const auto& s = cfg.simulate;
  e.disorder = {p.delta, s.sigma2.value_or(p.delta * p.delta), cfg.disorder_seed,
                s.law == "uniform" ? DisorderLaw::uniform : DisorderLaw::truncated_gaussian};
  e.boundary = s.boundary.value_or(p.m_star);
  e.realizations = s.realizations;
  e.x0 = s.x0;
  e.order.sweeps = s.sweeps;
  e.order.burn_in = s.burn_in;
  e.order.seed = cfg.chain_seed;
  e.order.chain.algorithm = s.algorithm == "heatbath" ? Algorithm::heatbath : Algorithm::metropolis;
  e.threads = cfg.threads;

  // finished realizations are appended to a progress file so an interrupted run can resume
  const fs::path prog = out / "progress.jsonl";
  std::map<int, json> done;
  if (fs::exists(prog)) {
    std::ifstream f(prog);
    std::string line;
    bool same = false;
    if (std::getline(f, line)) same = json::parse(line, nullptr, false).value("config_hash", "") == hash;
    if (same)
      while (std::getline(f, line)) {
        json j = json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.contains("index")) done[j["index"].get<int>()] = j;
      }
    if (!same) fs::remove(prog);
  }
  if (!fs::exists(prog)) write_text(prog, json{{"config_hash", hash}}.dump() + "\n");
  std::vector<int> todo;
  for (int i = 0; i < e.realizations; ++i)
    if (!done.count(i)) todo.push_back(i);
  rec["resumed"] = static_cast<int>(done.size());
  const size_t chunk = std::max(1, cfg.threads);
  for (size_t k = 0; k < todo.size(); k += chunk) {
    std::vector<int> part(todo.begin() + k, todo.begin() + std::min(todo.size(), k + chunk));
    std::ofstream f(prog, std::ios::app);
    for (const RealizationResult& r : run_realizations(e, part)) {
      json j{{"index", r.index},
             {"row", realization_row(r)},
             {"mean", r.estimate.mean},
             {"stderr", r.estimate.stderr_}};
      f << j.dump() << "\n";
      done[r.index] = j;
    }
  }
  std::string csv = "index,disorder_seed,chain_seed,eta_x0,estimate,stderr,geweke_z,samples\n";
  std::vector<double> means;
  for (const auto& [i, j] : done) {
    csv += j["row"].get<std::string>() + "\n";
    means.push_back(j["mean"].get<double>());
  }
  double m = 0, v = 0;
  for (double x : means) m += x;
  m /= means.size();
  for (double x : means) v += (x - m) * (x - m);
  const double se = means.size() > 1 ? std::sqrt(v / (means.size() - 1) / means.size()) : 0.0;
  json summary{{"config_hash", hash},
               {"config", result_json(cfg)},
               {"realizations", means.size()},
               {"mean", m},
               {"stderr", se},
               {"min", *std::min_element(means.begin(), means.end())},
               {"max", *std::max_element(means.begin(), means.end())}};
  write_text(out / "realizations.csv", csv);
  write_text(out / "summary.json", summary.dump(2) + "\n");
  fs::remove(prog);
  rec["summary"] = summary;
  std::cout << "realizations " << means.size() << " mean " << m << " stderr " << se << "\n";
  return 0;
}

int run_extract(const RunConfig& cfg, const fs::path& out, json& rec) {
  ModelParams p = resolve_params(cfg);
  LatticeVolume vol(cfg.extents);
  Field eta;
  if (!cfg.extract.eta.empty()) {
    eta = Field(vol.size());
    for (int x = 0; x < vol.size(); ++x) eta[x] = cfg.extract.eta[x];
  } else {
    eta = sample_disorder(vol, {p.delta, p.delta * p.delta, cfg.disorder_seed, DisorderLaw::truncated_gaussian});
  }
  Potential pot = cfg.extract.potential == "gaussian_wells" ? Potential::gaussian_wells() : Potential::phi4();
  ManyBody mb = many_body_extract(vol, eta, BoundaryField::constant(cfg.extract.boundary.value_or(p.m_star)), p, pot);
  std::string csv = "sites,size,value\n";
  for (const auto& [C, v] : mb.coeff) {
    std::string sites;
    for (int x : C) sites += (sites.empty() ? "" : " ") + std::to_string(x);
    csv += "\"" + sites + "\"," + std::to_string(C.size()) + "," + fmt(v) + "\n";
  }
  write_text(out / "many_body.csv", csv);
  rec["gamma_fit"] = mb.gamma_fit;
  rec["symmetry_error"] = mb.symmetry_error;
  rec["max_by_size"] = mb.max_by_size;
  std::cout << "gamma_fit " << mb.gamma_fit << " symmetry_error " << mb.symmetry_error << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random-field phi^4 verification and simulation runner"};
  std::string config_path, mode, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> tol;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--mode", mode, "verify | simulate | constants | extract");
  app.add_option("--seed", seed, "base seed for disorder and chains");
  app.add_option("--out", out_dir, "output directory (default $RFPHI4_OUT, then ./rfphi4_out)");
  app.add_option("--tolerance", tol, "tolerance override K=V (repeatable)");
  app.add_option("--threads", threads, "worker threads for disorder realizations");
  CLI11_PARSE(app, argc, argv);

  json j = json::object();
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    j = json::parse(f, nullptr, false);
    if (j.is_discarded()) {
      std::cerr << "invalid config:\n  " << config_path << ": not valid JSON\n";
      return 2;
    }
  }
  if (j.is_object()) {
    if (!mode.empty()) j["mode"] = mode;
    if (seed) j["seeds"] = {{"disorder", *seed}, {"chain", *seed}};
    if (threads) j["threads"] = *threads;
    if (!out_dir.empty()) j["out"] = out_dir;
    for (const std::string& kv : tol) {
      auto eq = kv.find('=');
      try {
        if (eq == std::string::npos) throw std::invalid_argument(kv);
        j["tolerances"][kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
      } catch (const std::exception&) {
        std::cerr << "invalid config:\n  --tolerance " << kv << ": expected K=V with numeric V\n";
        return 2;
      }
    }
  }
  RunConfig cfg;
  try {
    cfg = parse_config(j);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  if (cfg.out.empty()) {
    const char* env = std::getenv(kOutEnv);
    cfg.out = env && *env ? env : "rfphi4_out";
  }
  const std::string hash = config_hash(cfg);
  const fs::path out(cfg.out);
  fs::create_directories(out);
  json rec = base_record(cfg, hash);
  auto t0 = std::chrono::steady_clock::now();
  int status = 0;
  try {
    if (cfg.mode == "constants")
      status = run_constants(cfg, out, rec);
    else if (cfg.mode == "verify")
      status = run_verify(cfg, rec);
    else if (cfg.mode == "simulate")
      status = run_simulate(cfg, hash, out, rec);
    else
      status = run_extract(cfg, out, rec);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    rec["error"] = e.what();
    status = 1;
  }
  rec["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec["status"] = status == 0 ? "ok" : "failed";
  write_text(out / "record.json", rec.dump(2) + "\n");
  return status;
}
