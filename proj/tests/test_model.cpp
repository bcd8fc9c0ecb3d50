#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include <flexalloc/model.hpp>

using namespace flexalloc;

TEST_CASE("kwh bounds convert to kW*step at the sampling period") {
  CHECK(kwh_to_kw_step(1.0, 5.0) == Catch::Approx(12.0));
  CHECK(kwh_to_kw_step(4.0, 5.0) == Catch::Approx(48.0));
  CHECK(kwh_to_kw_step(2.0, 60.0) == Catch::Approx(2.0));
  CHECK(std::isinf(kwh_to_kw_step(kInf, 5.0)));
  CHECK(kwh_to_kw_step(-kInf, 5.0) == -kInf);
  CHECK_THROWS_AS(kwh_to_kw_step(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("LoadQoS validation rejects crossed and degenerate-weight bounds") {
  LoadQoS q;
  q.d_lo = 1.0;
  q.d_hi = 0.0;
  CHECK_THROWS_AS(q.validate(), std::invalid_argument);
  q = LoadQoS{};
  q.zeta = 0.0;
  CHECK_THROWS_AS(q.validate(), std::invalid_argument);
  q = LoadQoS{};
  q.zeta_bar = kInf;
  CHECK_THROWS_AS(q.validate(), std::invalid_argument);
}

TEST_CASE("linspace fleet hits both endpoints exactly") {
  LoadQoS lo, hi;
  lo.d_lo = hi.d_lo = 0.0;
  lo.d_hi = 0.0;
  hi.d_hi = 10.0;
  lo.zeta = lo.zeta_bar = 0.1;
  hi.zeta = hi.zeta_bar = 4.0;
  const auto fleet = linspace_fleet(100, lo, hi);
  REQUIRE(fleet.size() == 100);
  CHECK(fleet.front().zeta == 0.1);
  CHECK(fleet.back().zeta == 4.0);
  CHECK(fleet.front().d_hi == 0.0);
  CHECK(fleet.back().d_hi == 10.0);
  // interpolation keeps the memory weight tied to the planned weight
  for (const auto& q : fleet) CHECK(q.zeta_bar == q.zeta);
  CHECK(sum_d_hi(fleet) == Catch::Approx(500.0).margin(1e-9));
  CHECK(sum_d_lo(fleet) == 0.0);
}

TEST_CASE("linspace fleet rejects inverted spans and mixed infinities") {
  LoadQoS lo, hi;
  hi.d_hi = -1.0;  // lo.d_hi = 0 > hi.d_hi
  CHECK_THROWS_AS(linspace_fleet(10, lo, hi), std::invalid_argument);
  hi = LoadQoS{};
  lo.e_hi = 5.0;  // finite lo against infinite hi
  CHECK_THROWS_AS(linspace_fleet(10, lo, hi), std::invalid_argument);
}

TEST_CASE("fleet-level constants") {
  LoadQoS a, b;
  a.zeta = 0.5;
  a.zeta_bar = 2.0;
  b.zeta = 4.0;
  b.zeta_bar = 1.0;
  const std::vector<LoadQoS> fleet{a, b};
  CHECK(max_curvature(fleet) == 4.0);
  CHECK(dual_response_lipschitz(fleet) == Catch::Approx(1.0 / 0.5 + 1.0 / 4.0));
}

TEST_CASE("config JSON round-trips, including infinities as null") {
  SimConfig cfg;
  cfg.n_loads = 4;
  cfg.horizon = 3;
  cfg.ticks = 50;
  cfg.alpha = 0.25;
  cfg.seed = 42;
  cfg.controller = ControllerKind::Both;
  cfg.fleet.kind = FleetSpec::Kind::Linspace;
  cfg.fleet.lo = LoadBoundsKwh{0.0, 1.0, -kInf, kInf, -kInf, kInf, 0.5, {}};
  cfg.fleet.hi = LoadBoundsKwh{0.0, 8.0, -kInf, kInf, -kInf, kInf, 2.0, {}};
  cfg.signal.kind = SignalSpec::Kind::Step;
  cfg.signal.step_levels = {{0, 5.0}, {20, 9.0}};
  cfg.monitors.iss = true;

  const nlohmann::json j = cfg;
  CHECK(j["fleet"]["lo"]["r_lo"].is_null());
  const SimConfig back = j.get<SimConfig>();
  CHECK(back == cfg);
  CHECK(back.gamma == std::nullopt);
}

TEST_CASE("config validation catches bad shapes") {
  SimConfig cfg;
  cfg.n_loads = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SimConfig{};
  cfg.alpha = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SimConfig{};
  cfg.fleet.kind = FleetSpec::Kind::Explicit;
  cfg.fleet.loads = {LoadBoundsKwh{}};
  cfg.n_loads = 2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("build_fleet converts explicit energy bounds into step units") {
  SimConfig cfg;
  cfg.n_loads = 1;
  cfg.ts_minutes = 5.0;
  cfg.fleet.kind = FleetSpec::Kind::Explicit;
  LoadBoundsKwh b;
  b.d_hi = 6.0;
  b.e_hi_kwh = 2.0;
  b.zeta = 1.5;
  cfg.fleet.loads = {b};
  const auto fleet = build_fleet(cfg);
  REQUIRE(fleet.size() == 1);
  CHECK(fleet[0].e_hi == Catch::Approx(24.0));
  CHECK(fleet[0].zeta_bar == 1.5);
}

TEST_CASE("config files load and save") {
  SimConfig cfg;
  cfg.n_loads = 2;
  cfg.horizon = 2;
  cfg.ticks = 10;
  cfg.fleet.lo = LoadBoundsKwh{0.0, 2.0, -kInf, kInf, -kInf, kInf, 1.0, {}};
  cfg.fleet.hi = LoadBoundsKwh{0.0, 4.0, -kInf, kInf, -kInf, kInf, 2.0, {}};
  cfg.signal.kind = SignalSpec::Kind::Step;
  cfg.signal.step_levels = {{0, 3.0}};

  const std::string path = "test_model_config.json";
  save_config(cfg, path);
  const SimConfig back = load_config(path);
  CHECK(back == cfg);
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_config("no_such_file.json"), std::runtime_error);
  std::ofstream bad("test_model_bad.json");
  bad << "{ not json";
  bad.close();
  CHECK_THROWS_AS(load_config("test_model_bad.json"), std::runtime_error);
  std::remove("test_model_bad.json");
}
