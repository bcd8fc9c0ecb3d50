#pragma once

// The two online allocation schemes.
//
// Primal: each tick applies one projected-gradient step to the stacked
// augmented trajectories, with the time shift threaded between gradient
// step and projection,
//     z_{t+1} = Pi_D( shift( z_t - alpha * grad eta_t(z_t) ) ).
// The projection decomposes per load, so the expensive part is N small
// QP projections per tick.
//
// Dual: integral control on a single price.  The price moves with the
// aggregate tracking error each tick and every load replies with its
// box-clipped best response; no per-load lookahead, no memory.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "flexalloc/gradient.hpp"
#include "flexalloc/model.hpp"
#include "flexalloc/parallel.hpp"
#include "flexalloc/qos.hpp"
#include "flexalloc/signals.hpp"
#include "flexalloc/types.hpp"

namespace flexalloc {

struct TraceRow {
  std::int64_t tick = 0;
  double s_kw = 0.0;      ///< reference this tick
  double total_kw = 0.0;  ///< aggregate consumed power this tick
  double err_kw = 0.0;    ///< s_kw - total_kw
  std::optional<double> aux;  ///< price (dual) or optimality gap (primal)
  double ramp_max = 0.0;  ///< largest per-load |consumed - previous consumed|
};

struct SimTrace {
  std::vector<TraceRow> rows;
  // run-level diagnostics (not part of the CSV schema)
  double ramp_max = 0.0;        ///< largest per-load ramp seen anywhere
  double anchor_gap_max = 0.0;  ///< largest |memory slot - realized consumption|
  std::int64_t projection_iterations = 0;
};

// ---------------------------------------------------------------------------
// primal controller

struct PrimalController {
  std::vector<LoadQoS> fleet;
  std::vector<QoSPolytope> polytopes;
  HessianOperator hessian;
  double alpha = 0.0;
  EnsembleState state;
  /// per-load active sets carried across ticks to warm-start projections
  std::vector<std::vector<int>> warm_active;
};

/// Result of one primal tick; `total_kw` is the power consumed during the
/// tick (from the state the controller held while the tick elapsed).
struct PrimalTickInfo {
  double total_kw = 0.0;
  double ramp_max = 0.0;
  /// largest |new memory slot - realized consumption| across loads; the
  /// memory slot is only a surrogate for the realized value, so this gap
  /// is reported rather than constrained
  double anchor_gap = 0.0;
  Eigen::VectorXd u;  ///< stacked input vector used for the gradient
  int projection_iterations = 0;
};

/// Builds a controller with feasible initial trajectories (each load starts
/// on a constant-power point of its own constraint set).  Throws with the
/// offending load index if any load's constraint set is empty.
inline PrimalController make_primal(std::vector<LoadQoS> fleet, int horizon,
                                    std::optional<double> alpha = std::nullopt) {
  if (fleet.empty()) throw std::invalid_argument("make_primal: empty fleet");
  if (horizon < 1) throw std::invalid_argument("make_primal: horizon < 1");
  HessianOperator hessian = assemble_hessian(fleet, horizon);
  PrimalController c{std::move(fleet), {}, std::move(hessian), 0.0, {}, {}};
  c.alpha = alpha ? *alpha : default_alpha(c.fleet, horizon);
  if (!(c.alpha > 0.0))
    throw std::invalid_argument("make_primal: alpha must be > 0");
  const auto n = static_cast<std::int64_t>(c.fleet.size());
  c.state.trajectories.resize(n);
  c.state.prev_consumed.resize(n);
  c.warm_active.resize(n);
  c.polytopes.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    c.polytopes.push_back(build_polytope(c.fleet[i], horizon));
    const auto feas = check_nonempty(c.polytopes[i]);
    if (!feas.nonempty)
      throw std::runtime_error("make_primal: load " + std::to_string(i) +
                               " has an empty constraint set");
    c.state.trajectories[i] = feas.witness;
    c.state.prev_consumed[i] = consumed_power(c.state.trajectories[i]);
  }
  return c;
}

/// One projected-gradient tick against the given reference window.
/// Mutates the controller state in place and reports what was consumed.
inline PrimalTickInfo primal_tick(PrimalController& c,
                                  const ReferenceWindow& window,
                                  int workers = 1) {
  const auto n = static_cast<std::int64_t>(c.fleet.size());
  const std::int64_t np = c.hessian.horizon();
  if (window.horizon() != np)
    throw std::invalid_argument("primal_tick: window horizon mismatch");

  PrimalTickInfo info;
  info.total_kw = 0.0;
  info.ramp_max = 0.0;
  std::vector<double> consumed_now(n);
  for (std::int64_t i = 0; i < n; ++i) {
    consumed_now[i] = consumed_power(c.state.trajectories[i]);
    info.total_kw += consumed_now[i];
    info.ramp_max = std::max(
        info.ramp_max, std::abs(consumed_now[i] - c.state.prev_consumed[i]));
  }

  const InputVector u = input_vector(c.state.prev_consumed, window, c.fleet);
  Eigen::VectorXd z = c.state.stacked();
  Eigen::VectorXd y = z - c.alpha * (c.hessian.apply(z) - u.stacked);

  std::vector<int> iters(n, 0);
  parallel_for(n, workers, [&](std::int64_t i) {
    AugmentedTrajectory step(y.segment(i * (np + 1), np + 1));
    step = shift(step);
    const auto proj = project(c.polytopes[i], step, 1e-9, &c.warm_active[i]);
    c.state.trajectories[i] = proj.point;
    c.warm_active[i] = proj.active_rows;
    iters[i] = proj.iterations;
  });
  for (std::int64_t i = 0; i < n; ++i) {
    info.projection_iterations += iters[i];
    info.anchor_gap =
        std::max(info.anchor_gap,
                 std::abs(c.state.trajectories[i].values[0] - consumed_now[i]));
    c.state.prev_consumed[i] = consumed_now[i];
  }
  c.state.tick += 1;
  info.u = u.stacked;
  return info;
}

/// Pre-update observer: runs before the tick's gradient step, so it sees
/// the state whose consumption the tick realizes.  The returned value (if
/// any) becomes the trace row's aux column.
using PrimalHook = std::function<std::optional<double>(
    std::int64_t tick, const ReferenceWindow& window, PrimalController& ctrl)>;

inline ReferenceWindow window_at(const ReferenceSignal& sig, std::int64_t tick,
                                 std::int64_t horizon) {
  ReferenceWindow w;
  w.s_prev = sig.samples[tick > 0 ? tick - 1 : 0];
  w.s_future = sig.samples.segment(tick, horizon);
  return w;
}

inline SimTrace run_primal(PrimalController& c, const ReferenceSignal& sig,
                           std::int64_t ticks, const PrimalHook& hook = nullptr,
                           int workers = 1) {
  const std::int64_t np = c.hessian.horizon();
  if (ticks < 0) throw std::invalid_argument("run_primal: ticks < 0");
  if (ticks > 0 && sig.size() < ticks + np - 1)
    throw std::invalid_argument("run_primal: signal too short for horizon");
  SimTrace trace;
  trace.rows.reserve(ticks);
  for (std::int64_t t = 0; t < ticks; ++t) {
    const ReferenceWindow w = window_at(sig, t, np);
    std::optional<double> aux;
    if (hook) aux = hook(t, w, c);
    const PrimalTickInfo info = primal_tick(c, w, workers);
    TraceRow row;
    row.tick = t;
    row.s_kw = w.s_future[0];
    row.total_kw = info.total_kw;
    row.err_kw = row.s_kw - row.total_kw;
    row.ramp_max = info.ramp_max;
    row.aux = aux;
    trace.rows.push_back(row);
    trace.ramp_max = std::max(trace.ramp_max, info.ramp_max);
    trace.anchor_gap_max = std::max(trace.anchor_gap_max, info.anchor_gap);
    trace.projection_iterations += info.projection_iterations;
  }
  return trace;
}

// ---------------------------------------------------------------------------
// dual controller

struct DualController {
  std::vector<LoadQoS> fleet;
  double gamma = 0.0;
  double lambda = 0.0;
};

inline DualController make_dual(std::vector<LoadQoS> fleet,
                                std::optional<double> gamma = std::nullopt,
                                double lambda0 = 0.0) {
  if (fleet.empty()) throw std::invalid_argument("make_dual: empty fleet");
  DualController c;
  c.fleet = std::move(fleet);
  c.gamma = gamma ? *gamma : 0.99 / dual_response_lipschitz(c.fleet);
  if (!(c.gamma > 0.0))
    throw std::invalid_argument("make_dual: gamma must be > 0");
  c.lambda = lambda0;
  return c;
}

/// Price response of one load: minimizer of its running cost minus the
/// price-weighted power, clipped to the power box.  Raising the price
/// raises consumption, so the integral error feedback is stabilizing.
inline double dual_response(const LoadQoS& q, double lambda) {
  const double unclipped = lambda / q.zeta;
  return std::min(std::max(unclipped, q.d_lo), q.d_hi);
}

struct DualTickInfo {
  double total_kw = 0.0;
  double lambda_used = 0.0;    ///< price the loads responded to this tick
  Eigen::VectorXd powers;      ///< per-load emitted powers
};

inline DualTickInfo dual_tick(DualController& c, double s_kw) {
  DualTickInfo info;
  info.lambda_used = c.lambda;
  info.powers.resize(static_cast<Eigen::Index>(c.fleet.size()));
  for (size_t i = 0; i < c.fleet.size(); ++i) {
    info.powers[i] = dual_response(c.fleet[i], c.lambda);
    info.total_kw += info.powers[i];
  }
  c.lambda += c.gamma * (s_kw - info.total_kw);
  return info;
}

inline SimTrace run_dual(DualController& c, const ReferenceSignal& sig,
                         std::int64_t ticks) {
  if (ticks < 0) throw std::invalid_argument("run_dual: ticks < 0");
  if (sig.size() < ticks)
    throw std::invalid_argument("run_dual: signal too short");
  SimTrace trace;
  trace.rows.reserve(ticks);
  for (std::int64_t t = 0; t < ticks; ++t) {
    TraceRow row;
    row.tick = t;
    row.s_kw = sig.samples[t];
    const DualTickInfo info = dual_tick(c, row.s_kw);
    row.total_kw = info.total_kw;
    row.err_kw = row.s_kw - row.total_kw;
    row.aux = info.lambda_used;
    trace.rows.push_back(row);
  }
  return trace;
}

}  // namespace flexalloc
