#pragma once

// Fleet construction and simulation configuration.
//
// Config files carry window-energy bounds in kWh together with the sampling
// period in minutes; build_fleet() converts them to the internal kW*step
// units.  Unbounded sides are written as JSON null.

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "flexalloc/types.hpp"

namespace flexalloc {

/// Builds a heterogeneous fleet by linear interpolation of every scalar
/// field from `lo` to `hi` inclusive.  zeta_bar is set equal to zeta for
/// every load (the regime all stability results assume); use an explicit
/// load list to study zeta_bar != zeta.
///
/// Fields that are equal in `lo` and `hi` (including infinite bounds) stay
/// constant; otherwise both endpoints must be finite.
inline std::vector<LoadQoS> linspace_fleet(int n, const LoadQoS& lo,
                                           const LoadQoS& hi) {
  if (n < 1) throw std::invalid_argument("linspace_fleet: n must be >= 1");
  lo.validate();
  hi.validate();

  auto span_ok = [](double a, double b) {
    if (a == b) return true;  // covers matching infinities
    return a < b && std::isfinite(a) && std::isfinite(b);
  };
  const std::pair<double, double> spans[] = {
      {lo.d_lo, hi.d_lo}, {lo.d_hi, hi.d_hi}, {lo.r_lo, hi.r_lo},
      {lo.r_hi, hi.r_hi}, {lo.e_lo, hi.e_lo}, {lo.e_hi, hi.e_hi},
      {lo.zeta, hi.zeta}};
  for (const auto& [a, b] : spans)
    if (!span_ok(a, b))
      throw std::invalid_argument(
          "linspace_fleet: each lo field must be <= the matching hi field, "
          "with finite endpoints when they differ");
  if (n == 1) {
    for (const auto& [a, b] : spans)
      if (a != b)
        throw std::invalid_argument("linspace_fleet: n = 1 requires lo == hi");
  }

  std::vector<LoadQoS> fleet(n);
  for (int j = 0; j < n; ++j) {
    auto at = [&](double a, double b) {
      if (a == b) return a;
      if (j == 0) return a;
      if (j == n - 1) return b;  // hit the endpoint exactly
      return a + (b - a) * (static_cast<double>(j) / (n - 1));
    };
    LoadQoS& q = fleet[j];
    q.d_lo = at(lo.d_lo, hi.d_lo);
    q.d_hi = at(lo.d_hi, hi.d_hi);
    q.r_lo = at(lo.r_lo, hi.r_lo);
    q.r_hi = at(lo.r_hi, hi.r_hi);
    q.e_lo = at(lo.e_lo, hi.e_lo);
    q.e_hi = at(lo.e_hi, hi.e_hi);
    q.zeta = at(lo.zeta, hi.zeta);
    q.zeta_bar = q.zeta;
    q.validate();
  }
  return fleet;
}

// ---------------------------------------------------------------------------
// fleet aggregates

inline double sum_d_hi(const std::vector<LoadQoS>& fleet) {
  double s = 0.0;
  for (const auto& q : fleet) s += q.d_hi;
  return s;
}

inline double sum_d_lo(const std::vector<LoadQoS>& fleet) {
  double s = 0.0;
  for (const auto& q : fleet) s += q.d_lo;
  return s;
}

/// Largest curvature weight across the fleet, taking both the planned-slot
/// and the memory-slot weights into account.  This is the constant entering
/// the sufficient step-size rule; when zeta_bar = zeta it reduces to max zeta.
inline double max_curvature(const std::vector<LoadQoS>& fleet) {
  double m = 0.0;
  for (const auto& q : fleet) m = std::max({m, q.zeta, q.zeta_bar});
  return m;
}

/// Sum of inverse planned-slot curvatures; the Lipschitz constant of the
/// dual-ascent aggregate response.
inline double dual_response_lipschitz(const std::vector<LoadQoS>& fleet) {
  double s = 0.0;
  for (const auto& q : fleet) s += 1.0 / q.zeta;
  return s;
}

// ---------------------------------------------------------------------------
// configuration

/// Per-load bounds as they appear in config files (energy in kWh).
struct LoadBoundsKwh {
  double d_lo = 0.0;
  double d_hi = 0.0;
  double r_lo = -kInf;
  double r_hi = kInf;
  double e_lo_kwh = -kInf;
  double e_hi_kwh = kInf;
  double zeta = 1.0;
  std::optional<double> zeta_bar;  ///< defaults to zeta when absent

  bool operator==(const LoadBoundsKwh&) const = default;

  LoadQoS to_load(double ts_minutes) const {
    LoadQoS q;
    q.d_lo = d_lo;
    q.d_hi = d_hi;
    q.r_lo = r_lo;
    q.r_hi = r_hi;
    q.e_lo = kwh_to_kw_step(e_lo_kwh, ts_minutes);
    q.e_hi = kwh_to_kw_step(e_hi_kwh, ts_minutes);
    q.zeta = zeta;
    q.zeta_bar = zeta_bar.value_or(zeta);
    q.validate();
    return q;
  }
};

/// Fleet description: either an explicit list of loads or a linear-spacing
/// rule between two endpoint descriptions.
struct FleetSpec {
  enum class Kind { Linspace, Explicit };
  Kind kind = Kind::Linspace;
  LoadBoundsKwh lo, hi;             ///< Linspace endpoints
  std::vector<LoadBoundsKwh> loads; ///< Explicit list

  bool operator==(const FleetSpec&) const = default;
};

/// Reference-signal description.  `scale_to_capacity` post-processes the raw
/// signal into the fleet's trackable range (see signals.hpp).
struct SignalSpec {
  enum class Kind { Step, Synthetic, Csv };
  Kind kind = Kind::Synthetic;

  // Step: piecewise-constant levels, each active from `first` tick onward.
  std::vector<std::pair<std::int64_t, double>> step_levels;

  // Synthetic: band-limited pseudo-random signal, periods in ticks.
  double amplitude = 1.0;
  int min_period = 6;
  int max_period = 96;

  // Csv: external time series.
  std::string path;
  std::string time_column = "minutes";
  std::string value_column = "kw";
  std::string unit = "kw";  ///< "kw" or "mw"

  bool scale_to_capacity = false;
  double margin = 0.9;
  /// Optional override: affine-map the signal's [min,max] onto these
  /// fractions of the fleet's [sum d_lo, sum d_hi] instead of the
  /// margin-based midpoint shrink.
  std::optional<std::pair<double, double>> band_frac;

  bool operator==(const SignalSpec&) const = default;
};

struct MonitorToggles {
  bool oracle_gap = false;   ///< per-tick optimality gap + fixed-point residual
  bool iss = false;          ///< trajectory-tracking envelope
  bool lemma_bounds = false; ///< optimizer-sensitivity and shift-gap bounds

  bool operator==(const MonitorToggles&) const = default;
  bool any() const { return oracle_gap || iss || lemma_bounds; }
};

enum class ControllerKind { Primal, Dual, Both };

struct SimConfig {
  int n_loads = 1;
  int horizon = 1;  ///< N_p, preview steps
  std::int64_t ticks = 1;
  double ts_minutes = 5.0;
  std::optional<double> alpha;  ///< primal step size; default 0.99/(max_curvature + N)
  std::optional<double> gamma;  ///< dual step size; default 0.99/dual_response_lipschitz
  double lambda0 = 0.0;         ///< initial dual multiplier
  std::uint64_t seed = 0;
  ControllerKind controller = ControllerKind::Primal;
  FleetSpec fleet;
  SignalSpec signal;
  MonitorToggles monitors;
  std::string out_dir;  ///< empty = no files written

  bool operator==(const SimConfig&) const = default;

  void validate() const {
    if (n_loads < 1) throw std::invalid_argument("SimConfig: n_loads >= 1");
    if (horizon < 1) throw std::invalid_argument("SimConfig: horizon >= 1");
    if (ticks < 1) throw std::invalid_argument("SimConfig: ticks >= 1");
    if (!(ts_minutes > 0.0))
      throw std::invalid_argument("SimConfig: ts_minutes > 0");
    if (alpha && !(*alpha > 0.0))
      throw std::invalid_argument("SimConfig: alpha > 0");
    if (gamma && !(*gamma > 0.0))
      throw std::invalid_argument("SimConfig: gamma > 0");
    if (fleet.kind == FleetSpec::Kind::Explicit &&
        static_cast<int>(fleet.loads.size()) != n_loads)
      throw std::invalid_argument(
          "SimConfig: explicit fleet size must match n_loads");
  }
};

/// Materializes the fleet in internal units (energy bounds in kW*step).
inline std::vector<LoadQoS> build_fleet(const SimConfig& cfg) {
  cfg.validate();
  if (cfg.fleet.kind == FleetSpec::Kind::Explicit) {
    std::vector<LoadQoS> fleet;
    fleet.reserve(cfg.fleet.loads.size());
    for (const auto& lb : cfg.fleet.loads)
      fleet.push_back(lb.to_load(cfg.ts_minutes));
    return fleet;
  }
  return linspace_fleet(cfg.n_loads, cfg.fleet.lo.to_load(cfg.ts_minutes),
                        cfg.fleet.hi.to_load(cfg.ts_minutes));
}

// ---------------------------------------------------------------------------
// JSON serialization
//
// Infinite bounds are stored as null; the field's unbounded direction is
// implied by its name (d_lo null => -inf, d_hi null => +inf, ...).

namespace detail {

inline nlohmann::json bound_to_json(double v) {
  if (std::isinf(v)) return nullptr;
  return v;
}

inline double bound_from_json(const nlohmann::json& j, double unbounded) {
  if (j.is_null()) return unbounded;
  return j.get<double>();
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const LoadBoundsKwh& b) {
  j = nlohmann::json{{"d_lo", detail::bound_to_json(b.d_lo)},
                     {"d_hi", detail::bound_to_json(b.d_hi)},
                     {"r_lo", detail::bound_to_json(b.r_lo)},
                     {"r_hi", detail::bound_to_json(b.r_hi)},
                     {"e_lo_kwh", detail::bound_to_json(b.e_lo_kwh)},
                     {"e_hi_kwh", detail::bound_to_json(b.e_hi_kwh)},
                     {"zeta", b.zeta}};
  if (b.zeta_bar) j["zeta_bar"] = *b.zeta_bar;
}

inline void from_json(const nlohmann::json& j, LoadBoundsKwh& b) {
  b.d_lo = detail::bound_from_json(j.at("d_lo"), -kInf);
  b.d_hi = detail::bound_from_json(j.at("d_hi"), kInf);
  b.r_lo = detail::bound_from_json(j.value("r_lo", nlohmann::json()), -kInf);
  b.r_hi = detail::bound_from_json(j.value("r_hi", nlohmann::json()), kInf);
  b.e_lo_kwh =
      detail::bound_from_json(j.value("e_lo_kwh", nlohmann::json()), -kInf);
  b.e_hi_kwh =
      detail::bound_from_json(j.value("e_hi_kwh", nlohmann::json()), kInf);
  b.zeta = j.at("zeta").get<double>();
  if (j.contains("zeta_bar") && !j["zeta_bar"].is_null())
    b.zeta_bar = j["zeta_bar"].get<double>();
  else
    b.zeta_bar.reset();
}

inline void to_json(nlohmann::json& j, const FleetSpec& f) {
  if (f.kind == FleetSpec::Kind::Linspace)
    j = nlohmann::json{{"kind", "linspace"}, {"lo", f.lo}, {"hi", f.hi}};
  else
    j = nlohmann::json{{"kind", "explicit"}, {"loads", f.loads}};
}

inline void from_json(const nlohmann::json& j, FleetSpec& f) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linspace") {
    f.kind = FleetSpec::Kind::Linspace;
    f.lo = j.at("lo").get<LoadBoundsKwh>();
    f.hi = j.at("hi").get<LoadBoundsKwh>();
    f.loads.clear();
  } else if (kind == "explicit") {
    f.kind = FleetSpec::Kind::Explicit;
    f.loads = j.at("loads").get<std::vector<LoadBoundsKwh>>();
    f.lo = f.hi = LoadBoundsKwh{};
  } else {
    throw std::invalid_argument("FleetSpec: unknown kind '" + kind + "'");
  }
}

inline void to_json(nlohmann::json& j, const SignalSpec& s) {
  switch (s.kind) {
    case SignalSpec::Kind::Step: {
      nlohmann::json levels = nlohmann::json::array();
      for (const auto& [start, kw] : s.step_levels)
        levels.push_back({{"from_tick", start}, {"kw", kw}});
      j = nlohmann::json{{"kind", "step"}, {"levels", levels}};
      break;
    }
    case SignalSpec::Kind::Synthetic:
      j = nlohmann::json{{"kind", "synthetic"},
                         {"amplitude", s.amplitude},
                         {"min_period", s.min_period},
                         {"max_period", s.max_period}};
      break;
    case SignalSpec::Kind::Csv:
      j = nlohmann::json{{"kind", "csv"},
                         {"path", s.path},
                         {"time_column", s.time_column},
                         {"value_column", s.value_column},
                         {"unit", s.unit}};
      break;
  }
  j["scale_to_capacity"] = s.scale_to_capacity;
  j["margin"] = s.margin;
  if (s.band_frac)
    j["band_frac"] = {s.band_frac->first, s.band_frac->second};
}

inline void from_json(const nlohmann::json& j, SignalSpec& s) {
  s = SignalSpec{};
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "step") {
    s.kind = SignalSpec::Kind::Step;
    for (const auto& lvl : j.at("levels"))
      s.step_levels.emplace_back(lvl.at("from_tick").get<std::int64_t>(),
                                 lvl.at("kw").get<double>());
  } else if (kind == "synthetic") {
    s.kind = SignalSpec::Kind::Synthetic;
    s.amplitude = j.value("amplitude", 1.0);
    s.min_period = j.value("min_period", 6);
    s.max_period = j.value("max_period", 96);
  } else if (kind == "csv") {
    s.kind = SignalSpec::Kind::Csv;
    s.path = j.at("path").get<std::string>();
    s.time_column = j.value("time_column", std::string("minutes"));
    s.value_column = j.value("value_column", std::string("kw"));
    s.unit = j.value("unit", std::string("kw"));
  } else {
    throw std::invalid_argument("SignalSpec: unknown kind '" + kind + "'");
  }
  s.scale_to_capacity = j.value("scale_to_capacity", false);
  s.margin = j.value("margin", 0.9);
  if (j.contains("band_frac") && !j["band_frac"].is_null()) {
    const auto& bf = j["band_frac"];
    s.band_frac = std::make_pair(bf.at(0).get<double>(), bf.at(1).get<double>());
  }
}

inline void to_json(nlohmann::json& j, const MonitorToggles& m) {
  j = nlohmann::json{{"oracle_gap", m.oracle_gap},
                     {"iss", m.iss},
                     {"lemma_bounds", m.lemma_bounds}};
}

inline void from_json(const nlohmann::json& j, MonitorToggles& m) {
  m.oracle_gap = j.value("oracle_gap", false);
  m.iss = j.value("iss", false);
  m.lemma_bounds = j.value("lemma_bounds", false);
}

inline std::string to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::Primal: return "primal";
    case ControllerKind::Dual: return "dual";
    case ControllerKind::Both: return "both";
  }
  return "primal";
}

inline ControllerKind controller_from_string(const std::string& s) {
  if (s == "primal") return ControllerKind::Primal;
  if (s == "dual") return ControllerKind::Dual;
  if (s == "both") return ControllerKind::Both;
  throw std::invalid_argument("controller must be primal|dual|both, got '" +
                              s + "'");
}

inline void to_json(nlohmann::json& j, const SimConfig& c) {
  j = nlohmann::json{{"n_loads", c.n_loads},
                     {"horizon", c.horizon},
                     {"ticks", c.ticks},
                     {"ts_minutes", c.ts_minutes},
                     {"lambda0", c.lambda0},
                     {"seed", c.seed},
                     {"controller", to_string(c.controller)},
                     {"fleet", c.fleet},
                     {"signal", c.signal},
                     {"monitors", c.monitors}};
  j["alpha"] = c.alpha ? nlohmann::json(*c.alpha) : nlohmann::json();
  j["gamma"] = c.gamma ? nlohmann::json(*c.gamma) : nlohmann::json();
  if (!c.out_dir.empty()) j["out_dir"] = c.out_dir;
}

inline void from_json(const nlohmann::json& j, SimConfig& c) {
  c = SimConfig{};
  c.n_loads = j.at("n_loads").get<int>();
  c.horizon = j.at("horizon").get<int>();
  c.ticks = j.at("ticks").get<std::int64_t>();
  c.ts_minutes = j.value("ts_minutes", 5.0);
  if (j.contains("alpha") && !j["alpha"].is_null())
    c.alpha = j["alpha"].get<double>();
  if (j.contains("gamma") && !j["gamma"].is_null())
    c.gamma = j["gamma"].get<double>();
  c.lambda0 = j.value("lambda0", 0.0);
  c.seed = j.value("seed", std::uint64_t{0});
  c.controller =
      controller_from_string(j.value("controller", std::string("primal")));
  c.fleet = j.at("fleet").get<FleetSpec>();
  c.signal = j.at("signal").get<SignalSpec>();
  if (j.contains("monitors")) c.monitors = j["monitors"].get<MonitorToggles>();
  c.out_dir = j.value("out_dir", std::string());
  c.validate();
}

inline SimConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config parse error in " + path + ": " +
                             e.what());
  }
  return j.get<SimConfig>();
}

inline void save_config(const SimConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file: " + path);
  out << nlohmann::json(cfg).dump(2) << '\n';
}

}  // namespace flexalloc
