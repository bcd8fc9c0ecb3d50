#pragma once

// Scenario wiring, the monitored simulation driver, metrics, and result
// emission (trace CSV + report JSON).
//
// Scenario S1 reproduces integrator windup: a step reference with an
// infeasible plateau at 1.2x fleet capacity, run through both the
// dual-ascent baseline and a box-only primal controller.  The primal
// controller uses horizon 1 with rate/energy bounds widened to infinity:
// the augmented-state machinery needs at least one forward slot, and with
// box-only sets the projection decouples per slot, so this is the
// zero-horizon variant in behavior.
//
// Scenario S2 tracks a band-limited synthetic reference with the full QoS
// constraint families active and all monitors on.
//
// The report's "summary" section is a pure function of the trace rows and
// the fleet capacity: recomputing it from the emitted CSV reproduces the
// JSON byte for byte.

#include <json.hpp>

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "flexalloc/algorithms.hpp"
#include "flexalloc/gradient.hpp"
#include "flexalloc/model.hpp"
#include "flexalloc/oracle.hpp"
#include "flexalloc/signals.hpp"
#include "flexalloc/types.hpp"

namespace flexalloc {

// ---------------------------------------------------------------------------
// scenarios

/// Integrator-windup scenario: capacity-interpolated 100-load fleet
/// (box constraints only), step reference 0.5x capacity -> 1.2x capacity
/// (ticks 100..179) -> 0.5x capacity, both controllers.
inline SimConfig scenario_s1(std::int64_t ticks = 400, std::uint64_t seed = 0) {
  if (ticks < 200)
    throw std::invalid_argument(
        "scenario_s1: need at least 200 ticks to cover the plateau");
  SimConfig cfg;
  cfg.n_loads = 100;
  cfg.horizon = 1;
  cfg.ticks = ticks;
  cfg.ts_minutes = 5.0;
  cfg.seed = seed;
  cfg.controller = ControllerKind::Both;
  cfg.fleet.kind = FleetSpec::Kind::Linspace;
  cfg.fleet.lo = LoadBoundsKwh{0.0, 0.0, -kInf, kInf, -kInf, kInf, 0.1, {}};
  cfg.fleet.hi = LoadBoundsKwh{0.0, 10.0, -kInf, kInf, -kInf, kInf, 4.0, {}};
  const double capacity = sum_d_hi(build_fleet(cfg));
  cfg.signal.kind = SignalSpec::Kind::Step;
  cfg.signal.step_levels = {{0, 0.5 * capacity},
                            {100, 1.2 * capacity},
                            {180, 0.5 * capacity}};
  return cfg;
}

/// Time-varying tracking scenario: full QoS constraint families, horizon 5,
/// synthetic band-limited reference scaled into the fleet's range, all
/// monitors enabled.
inline SimConfig scenario_s2(std::uint64_t seed = 1, std::int64_t ticks = 288) {
  SimConfig cfg;
  cfg.n_loads = 100;
  cfg.horizon = 5;
  cfg.ticks = ticks;
  cfg.ts_minutes = 5.0;
  cfg.seed = seed;
  cfg.controller = ControllerKind::Primal;
  cfg.fleet.kind = FleetSpec::Kind::Linspace;
  cfg.fleet.lo = LoadBoundsKwh{0.0, 0.0, -0.5, 0.5, 0.0, 0.0, 0.1, {}};
  cfg.fleet.hi = LoadBoundsKwh{0.0, 10.0, -0.5, 0.5, 0.0, 4.0, 4.0, {}};
  cfg.signal.kind = SignalSpec::Kind::Synthetic;
  cfg.signal.amplitude = 1.0;
  cfg.signal.min_period = 6;
  cfg.signal.max_period = 96;
  cfg.signal.scale_to_capacity = true;
  cfg.signal.margin = 0.9;
  cfg.monitors = MonitorToggles{true, true, true};
  return cfg;
}

// ---------------------------------------------------------------------------
// metrics

struct TraceSummary {
  std::int64_t ticks = 0;
  double sum_abs_err = 0.0;
  double sum_abs_ref = 0.0;
  double max_abs_err = 0.0;
  /// 100 * sum|e| / sum|s|; absent when the reference is identically zero
  std::optional<double> tracking_error_pct;
};

inline TraceSummary summarize_trace(const SimTrace& trace) {
  TraceSummary s;
  s.ticks = static_cast<std::int64_t>(trace.rows.size());
  for (const auto& r : trace.rows) {
    s.sum_abs_err += std::abs(r.err_kw);
    s.sum_abs_ref += std::abs(r.s_kw);
    s.max_abs_err = std::max(s.max_abs_err, std::abs(r.err_kw));
  }
  if (s.sum_abs_ref > 0.0)
    s.tracking_error_pct = 100.0 * s.sum_abs_err / s.sum_abs_ref;
  return s;
}

/// 1-norm tracking error as a percentage of the reference's 1-norm.
/// Undefined (nullopt) on an identically zero reference.
inline std::optional<double> tracking_error_pct(const SimTrace& trace) {
  if (trace.rows.empty())
    throw std::invalid_argument("tracking_error_pct: empty trace");
  return summarize_trace(trace).tracking_error_pct;
}

/// feasible[t] = the reference at tick t is within the fleet's static
/// aggregate power range.
inline std::vector<bool> feasibility_mask(const SimTrace& trace,
                                          double capacity_lo_kw,
                                          double capacity_hi_kw) {
  std::vector<bool> mask(trace.rows.size());
  for (size_t t = 0; t < trace.rows.size(); ++t)
    mask[t] = trace.rows[t].s_kw >= capacity_lo_kw - 1e-9 &&
              trace.rows[t].s_kw <= capacity_hi_kw + 1e-9;
  return mask;
}

/// Windup/recovery geometry of one trace against a feasibility mask.
/// The plateau is the first contiguous infeasible stretch.  Recovery area
/// integrates |e| from the tick feasibility returns until |e_t| < 1% of
/// |s_t|.  The recovery tick count starts one tick later: consumption at
/// the release tick was committed by the previous update, so the count
/// only charges ticks the controller could still influence.  Both
/// controllers share that one-tick pipeline.
struct RecoveryAnalysis {
  std::int64_t plateau_start = -1;  ///< -1: no infeasible tick
  std::int64_t plateau_len = 0;
  std::int64_t recovery_ticks = 0;
  bool recovered = true;      ///< false: criterion never met before trace end
  double plateau_area = 0.0;  ///< sum |e| over the plateau
  double recovery_area = 0.0; ///< sum |e| over the recovery window
};

inline RecoveryAnalysis windup_recovery(const SimTrace& trace,
                                        const std::vector<bool>& feasible) {
  if (feasible.size() != trace.rows.size())
    throw std::invalid_argument("windup_recovery: mask/trace size mismatch");
  RecoveryAnalysis a;
  const auto n = static_cast<std::int64_t>(trace.rows.size());
  std::int64_t t = 0;
  while (t < n && feasible[t]) ++t;
  if (t == n) return a;  // fully feasible: nothing to recover from
  a.plateau_start = t;
  while (t < n && !feasible[t]) {
    a.plateau_area += std::abs(trace.rows[t].err_kw);
    ++t;
    ++a.plateau_len;
  }
  const std::int64_t release = t;
  a.recovered = false;
  for (; t < n; ++t) {
    if (std::abs(trace.rows[t].err_kw) <
        0.01 * std::abs(trace.rows[t].s_kw)) {
      a.recovered = true;
      break;
    }
    a.recovery_area += std::abs(trace.rows[t].err_kw);
  }
  a.recovery_ticks = std::max<std::int64_t>(0, t - release - 1);
  return a;
}

// ---------------------------------------------------------------------------
// trace CSV (schema: tick,s_kw,total_kw,err_kw,aux)

inline void trace_to_csv(const SimTrace& trace, std::ostream& os) {
  os << "tick,s_kw,total_kw,err_kw,aux\n";
  char buf[128];
  for (const auto& r : trace.rows) {
    int len = std::snprintf(buf, sizeof buf,
                            "%" PRId64 ",%.17g,%.17g,%.17g,", r.tick, r.s_kw,
                            r.total_kw, r.err_kw);
    os.write(buf, len);
    if (r.aux) {
      len = std::snprintf(buf, sizeof buf, "%.17g", *r.aux);
      os.write(buf, len);
    }
    os.put('\n');
  }
}

inline SimTrace trace_from_csv(std::istream& is) {
  SimTrace trace;
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("trace csv: empty stream");
  if (line == "tick,s_kw,total_kw,err_kw,aux\r")
    line.pop_back();
  if (line != "tick,s_kw,total_kw,err_kw,aux")
    throw std::runtime_error("trace csv: unexpected header '" + line + "'");
  size_t lineno = 1;
  auto parse_double = [&](const std::string& tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || end != tok.c_str() + tok.size())
      throw std::runtime_error("trace csv line " + std::to_string(lineno) +
                               ": bad number '" + tok + "'");
    return v;
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 5)
      throw std::runtime_error("trace csv line " + std::to_string(lineno) +
                               ": expected 5 columns, got " +
                               std::to_string(cells.size()));
    TraceRow r;
    r.tick = static_cast<std::int64_t>(parse_double(cells[0]));
    r.s_kw = parse_double(cells[1]);
    r.total_kw = parse_double(cells[2]);
    r.err_kw = parse_double(cells[3]);
    if (!cells[4].empty()) r.aux = parse_double(cells[4]);
    trace.rows.push_back(r);
  }
  return trace;
}

inline void write_trace_csv(const SimTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trace file: " + path);
  trace_to_csv(trace, out);
}

inline SimTrace read_trace_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  return trace_from_csv(in);
}

// ---------------------------------------------------------------------------
// monitored simulation driver

struct MonitorData {
  std::vector<double> distance;     ///< ||z_t - z*_t|| per tick
  std::vector<double> fp_residual;  ///< optimum fixed-point residual per tick
  std::vector<double> g_bar;        ///< optimum drift bound, from t = 1
  std::vector<double> delta;        ///< ||P u_{t-1} - u*_t||, from t = 1
  std::vector<SensitivityBound> sensitivity;  ///< from t = 1
  std::vector<ShiftDriftBound> drift;         ///< from t = 1
  ISSEnvelope iss;
  std::int64_t sensitivity_violations = 0;
  std::int64_t drift_violations = 0;
  std::int64_t drift_unevaluated = 0;
  double fp_residual_max = 0.0;
  bool zero_feasible = false;
  bool oracle_converged = true;
};

struct MonitorVerdict {
  bool pass = true;
  std::vector<std::string> failures;
};

/// Thresholds the monitors enforce: the optimum must satisfy its
/// fixed-point identity to 1e-8, and the analytic bounds admit no
/// violations at all.
inline MonitorVerdict monitor_verdict(const MonitorToggles& toggles,
                                      const MonitorData& m) {
  MonitorVerdict v;
  auto fail = [&](std::string why) {
    v.pass = false;
    v.failures.push_back(std::move(why));
  };
  if (!m.oracle_converged) fail("oracle solve did not converge");
  if (toggles.oracle_gap && m.fp_residual_max > 1e-8)
    fail("fixed-point residual above 1e-8");
  if (toggles.lemma_bounds && m.sensitivity_violations > 0)
    fail("optimizer-sensitivity bound violated");
  if (toggles.lemma_bounds && m.drift_violations > 0)
    fail("shifted-optimum drift bound violated");
  if (toggles.iss) {
    if (!m.iss.applicable)
      fail("tracking envelope inapplicable (contraction factor >= 1)");
    else if (m.iss.violations > 0)
      fail("tracking envelope violated");
  }
  return v;
}

struct RunOutputs {
  SimConfig cfg;
  std::vector<LoadQoS> fleet;
  ReferenceSignal signal;
  std::optional<SimTrace> primal;
  std::optional<SimTrace> dual;
  std::optional<MonitorData> monitors;
  StepSizeBound bounds;
  double alpha_used = 0.0;
  double gamma_used = 0.0;
  double contraction = 0.0;  ///< M(alpha_used)
};

inline RunOutputs run_simulation(const SimConfig& cfg, int workers = 1) {
  cfg.validate();
  RunOutputs out;
  out.cfg = cfg;
  out.fleet = build_fleet(cfg);
  out.bounds = step_size_bound(out.fleet, cfg.horizon);
  out.alpha_used = cfg.alpha.value_or(0.99 * out.bounds.alpha_sufficient);
  out.gamma_used =
      cfg.gamma.value_or(0.99 / dual_response_lipschitz(out.fleet));
  out.signal = generate_signal(cfg.signal, out.fleet, cfg.ticks + cfg.horizon,
                               cfg.ts_minutes, cfg.seed);

  const bool want_primal = cfg.controller != ControllerKind::Dual;
  const bool want_dual = cfg.controller != ControllerKind::Primal;

  if (want_primal) {
    PrimalController ctrl = make_primal(out.fleet, cfg.horizon, out.alpha_used);
    out.contraction = contraction_factor(ctrl.hessian, out.alpha_used);

    PrimalHook hook;
    std::optional<OracleChain> chain;
    Eigen::VectorXd u_prev;
    if (cfg.monitors.any()) {
      chain.emplace(out.fleet, cfg.horizon, ctrl.state.prev_consumed);
      out.monitors.emplace();
      out.monitors->zero_feasible = chain->zero_feasible();
      MonitorData& m = *out.monitors;
      hook = [&, n = cfg.n_loads](std::int64_t t, const ReferenceWindow& w,
                                  PrimalController& c) {
        const Eigen::VectorXd z_t = c.state.stacked();
        const InputVector u_alg =
            input_vector(c.state.prev_consumed, w, c.fleet);
        const OracleChain::Step st = chain->step(w);
        const double dist = (z_t - st.sol.z).norm();
        m.distance.push_back(dist);
        m.oracle_converged = m.oracle_converged && st.sol.converged;
        if (t >= 1) {
          m.delta.push_back((shift_stacked(u_prev, n) - st.u).norm());
          m.g_bar.push_back(st.drift.g_bar);
          m.drift.push_back(st.drift);
          m.sensitivity.push_back(st.sensitivity);
          if (!st.drift.evaluated)
            ++m.drift_unevaluated;
          else if (!st.drift.holds)
            ++m.drift_violations;
          if (!st.sensitivity.holds) ++m.sensitivity_violations;
        }
        std::optional<double> aux;
        if (cfg.monitors.oracle_gap) {
          InputVector u_star;
          u_star.stacked = st.u;
          u_star.n_loads = n;
          u_star.horizon = cfg.horizon;
          const double fp =
              fixed_point_residual(chain->polytopes(), chain->hessian(),
                                   u_star, st.sol.z, out.alpha_used);
          m.fp_residual.push_back(fp);
          m.fp_residual_max = std::max(m.fp_residual_max, fp);
          aux = dist;
        }
        u_prev = u_alg.stacked;
        return aux;
      };
    }
    out.primal = run_primal(ctrl, out.signal, cfg.ticks, hook, workers);
    if (out.monitors && cfg.monitors.iss)
      out.monitors->iss = iss_envelope(
          out.contraction, out.alpha_used, out.bounds.lambda_min, cfg.n_loads,
          out.monitors->distance, out.monitors->g_bar, out.monitors->delta);
  }

  if (want_dual) {
    DualController ctrl = make_dual(out.fleet, out.gamma_used, cfg.lambda0);
    out.dual = run_dual(ctrl, out.signal, cfg.ticks);
  }
  return out;
}

// ---------------------------------------------------------------------------
// report emission

namespace detail {

/// Summary block for one trace; pure function of the rows and the fleet's
/// static capacity range, so it can be recomputed from the CSV alone.
inline nlohmann::json summary_json(const SimTrace& trace, double capacity_lo,
                                   double capacity_hi) {
  const TraceSummary s = summarize_trace(trace);
  const RecoveryAnalysis rec =
      windup_recovery(trace, feasibility_mask(trace, capacity_lo, capacity_hi));
  nlohmann::json j{{"ticks", s.ticks},
                   {"sum_abs_err_kw", s.sum_abs_err},
                   {"sum_abs_ref_kw", s.sum_abs_ref},
                   {"max_abs_err_kw", s.max_abs_err},
                   {"capacity_lo_kw", capacity_lo},
                   {"capacity_hi_kw", capacity_hi}};
  j["tracking_error_pct"] = s.tracking_error_pct
                                ? nlohmann::json(*s.tracking_error_pct)
                                : nlohmann::json();
  j["windup"] = nlohmann::json{{"plateau_start", rec.plateau_start},
                               {"plateau_len", rec.plateau_len},
                               {"recovery_ticks", rec.recovery_ticks},
                               {"recovered", rec.recovered},
                               {"plateau_area_kw", rec.plateau_area},
                               {"recovery_area_kw", rec.recovery_area}};
  return j;
}

inline nlohmann::json monitors_json(const MonitorToggles& toggles,
                                    const MonitorData& m) {
  const MonitorVerdict v = monitor_verdict(toggles, m);
  nlohmann::json j{{"verdict", v.pass ? "pass" : "fail"},
                   {"failures", v.failures},
                   {"ticks_monitored", m.distance.size()},
                   {"zero_feasible", m.zero_feasible},
                   {"oracle_converged", m.oracle_converged}};
  if (toggles.oracle_gap) {
    j["fixed_point"] = {{"residual_max", m.fp_residual_max},
                        {"threshold", 1e-8}};
    double dmax = 0.0;
    for (double d : m.distance) dmax = std::max(dmax, d);
    j["distance_max"] = dmax;
  }
  if (toggles.lemma_bounds)
    j["bounds"] = {{"sensitivity_violations", m.sensitivity_violations},
                   {"drift_violations", m.drift_violations},
                   {"drift_unevaluated", m.drift_unevaluated},
                   {"pairs_checked", m.sensitivity.size()}};
  if (toggles.iss)
    j["envelope"] = {{"applicable", m.iss.applicable},
                     {"contraction", m.iss.m},
                     {"gain_input", m.iss.u_bar},
                     {"drift_bound_max", m.iss.g_bar_max},
                     {"input_distance_max", m.iss.delta_max},
                     {"violations", m.iss.violations}};
  return j;
}

}  // namespace detail

inline nlohmann::json make_report(const RunOutputs& out) {
  nlohmann::json j;
  j["config"] = out.cfg;
  j["step_size"] = {{"alpha_used", out.alpha_used},
                    {"alpha_sufficient", out.bounds.alpha_sufficient},
                    {"alpha_exact_max", out.bounds.alpha_exact_max},
                    {"lambda_min", out.bounds.lambda_min},
                    {"lambda_max", out.bounds.lambda_max},
                    {"contraction_factor", out.contraction},
                    {"gamma_used", out.gamma_used}};
  const double cap_lo = sum_d_lo(out.fleet), cap_hi = sum_d_hi(out.fleet);
  nlohmann::json summary;
  if (out.primal)
    summary["primal"] = detail::summary_json(*out.primal, cap_lo, cap_hi);
  if (out.dual)
    summary["dual"] = detail::summary_json(*out.dual, cap_lo, cap_hi);
  j["summary"] = summary;
  if (out.monitors)
    j["monitors"] = detail::monitors_json(out.cfg.monitors, *out.monitors);
  nlohmann::json diag;
  if (out.primal) {
    diag["ramp_max_kw_per_step"] = out.primal->ramp_max;
    diag["anchor_gap_max_kw"] = out.primal->anchor_gap_max;
    diag["projection_iterations"] = out.primal->projection_iterations;
  }
  if (!out.signal.note.empty()) diag["signal_note"] = out.signal.note;
  j["diagnostics"] = diag;
  return j;
}

/// Writes trace.csv (+ trace_dual.csv when both controllers ran) and
/// report.json into `dir`, creating it if needed.
inline void write_artifacts(const RunOutputs& out, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path base(dir);
  if (out.primal) {
    write_trace_csv(*out.primal, (base / "trace.csv").string());
    if (out.dual)
      write_trace_csv(*out.dual, (base / "trace_dual.csv").string());
  } else if (out.dual) {
    write_trace_csv(*out.dual, (base / "trace.csv").string());
  }
  std::ofstream rep(base / "report.json", std::ios::binary);
  if (!rep)
    throw std::runtime_error("cannot write report.json under " + dir);
  rep << make_report(out).dump(2) << '\n';
}

}  // namespace flexalloc
