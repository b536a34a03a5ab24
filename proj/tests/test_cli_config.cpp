#include <gtest/gtest.h>

#include "rfphi4/config.hpp"

using namespace rfphi4;

namespace {

json simulate_json() {
  return json::parse(R"({
    "mode": "simulate",
    "params": {"eps0": 0.1, "m_star": 100, "d": 2, "delta": 0.01},
    "volume": {"extents": [4, 4]},
    "seeds": {"disorder": 7, "chain": 8},
    "tolerances": {"resolvent_residual": 1e-11},
    "simulate": {"realizations": 3, "sweeps": 50, "burn_in": 10, "algorithm": "heatbath"}
  })");
}

std::vector<std::string> diagnostics(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.diagnostics;
  }
  return {};
}

}  // namespace

TEST(Config, ParsesSimulateMode) {
  RunConfig c = parse_config(simulate_json());
  EXPECT_EQ(c.mode, "simulate");
  EXPECT_EQ(c.params.d, 2);
  EXPECT_FALSE(c.params.q.has_value());
  EXPECT_DOUBLE_EQ(*c.params.delta, 0.01);
  EXPECT_EQ(c.extents, (std::vector<int>{4, 4}));
  EXPECT_EQ(c.disorder_seed, 7u);
  EXPECT_EQ(c.simulate.algorithm, "heatbath");
  EXPECT_DOUBLE_EQ(c.tolerances.at("resolvent_residual"), 1e-11);
}

TEST(Config, RoundTripIsIdentity) {
  RunConfig c = parse_config(simulate_json());
  json once = to_json(c);
  RunConfig c2 = parse_config(once);
  EXPECT_EQ(to_json(c2), once);
  EXPECT_EQ(config_hash(c), config_hash(c2));
  EXPECT_EQ(config_hash(c).size(), 40u);
}

TEST(Config, HashTracksContent) {
  RunConfig a = parse_config(simulate_json());
  json j = simulate_json();
  j["seeds"]["chain"] = 9;
  EXPECT_NE(config_hash(a), config_hash(parse_config(j)));
}

TEST(Config, HashIgnoresOutputAndThreads) {
  RunConfig a = parse_config(simulate_json());
  json j = simulate_json();
  j["out"] = "elsewhere";
  j["threads"] = 4;
  EXPECT_EQ(config_hash(a), config_hash(parse_config(j)));
}

TEST(Config, RejectsUnknownKeys) {
  json j = simulate_json();
  j["colour"] = "blue";
  j["simulate"]["sweep"] = 3;
  auto d = diagnostics(j);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_NE(d[0].find("colour"), std::string::npos);
  EXPECT_NE(d[1].find("simulate.sweep"), std::string::npos);
}

TEST(Config, ModeRequirements) {
  EXPECT_FALSE(diagnostics(json{{"params", {{"d", 3}}}}).empty());
  EXPECT_FALSE(diagnostics(json{{"mode", "fly"}}).empty());
  json s = simulate_json();
  s["volume"]["extents"] = {4, 4, 4};
  EXPECT_FALSE(diagnostics(s).empty());
  json e{{"mode", "extract"}, {"params", {{"d", 1}}}, {"volume", {{"extents", {5}}}}};
  EXPECT_FALSE(diagnostics(e).empty());
  e["volume"]["extents"] = {3};
  EXPECT_TRUE(diagnostics(e).empty());
  e["extract"] = {{"eta", {0.1, 0.2}}};
  EXPECT_FALSE(diagnostics(e).empty());
  EXPECT_TRUE(diagnostics(json{{"mode", "constants"}}).empty());
  EXPECT_TRUE(diagnostics(json{{"mode", "verify"}, {"checks", {1, 5}}}).empty());
  EXPECT_FALSE(diagnostics(json{{"mode", "verify"}, {"checks", {12}}}).empty());
}

TEST(Config, WrongTypesAreReported) {
  json j = simulate_json();
  j["params"]["m_star"] = "big";
  j["threads"] = 0;
  auto d = diagnostics(j);
  ASSERT_FALSE(d.empty());
  EXPECT_NE(d[0].find("params.m_star"), std::string::npos);
}

TEST(Config, ResolvedParametersUseCertificate) {
  RunConfig c = parse_config(json{{"mode", "constants"}, {"params", {{"m_star", 100}, {"d", 3}}}});
  ModelParams p = resolve_params(c);
  EXPECT_NEAR(p.a, 1.02167, 1e-5);
  EXPECT_NEAR(p.q, 1.8166e-4, 1e-8);
  EXPECT_NEAR(p.delta, 0.11006, 1e-5);
}
