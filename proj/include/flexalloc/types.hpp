#pragma once

// Core value types shared by every other flexalloc header.
//
// Conventions used throughout the library:
//   * power is in kW, per-step energy in kW*step, ramps in kW/step
//   * an augmented trajectory has Np+1 slots; slot 0 is the memory slot
//     holding the surrogate for the previously consumed power, slots 1..Np
//     are the planned consumption over the preview horizon
//   * stacked ensemble vectors are load-major: load i occupies entries
//     [i*(Np+1), (i+1)*(Np+1))

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace flexalloc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Quality-of-service description of a single flexible load.
///
/// Bounds may be infinite on the unbounded side (d_lo = -inf, d_hi = +inf,
/// etc.).  Energy bounds are already converted to kW*step units; use
/// kwh_to_kw_step() when reading configs that carry kWh.
struct LoadQoS {
  double d_lo = 0.0;      ///< minimum instantaneous power [kW]
  double d_hi = 0.0;      ///< maximum instantaneous power [kW]
  double r_lo = -kInf;    ///< minimum step-to-step change [kW/step]
  double r_hi = kInf;     ///< maximum step-to-step change [kW/step]
  double e_lo = -kInf;    ///< minimum window energy [kW*step]
  double e_hi = kInf;     ///< maximum window energy [kW*step]
  double zeta = 1.0;      ///< curvature weight on planned slots
  double zeta_bar = 1.0;  ///< curvature weight on the memory slot

  /// Throws std::invalid_argument when bounds are inverted, a weight is
  /// not strictly positive, or any field is NaN.
  void validate() const {
    auto bad = [](double v) { return std::isnan(v); };
    if (bad(d_lo) || bad(d_hi) || bad(r_lo) || bad(r_hi) || bad(e_lo) ||
        bad(e_hi) || bad(zeta) || bad(zeta_bar))
      throw std::invalid_argument("LoadQoS: NaN field");
    if (d_lo > d_hi) throw std::invalid_argument("LoadQoS: d_lo > d_hi");
    if (r_lo > r_hi) throw std::invalid_argument("LoadQoS: r_lo > r_hi");
    if (e_lo > e_hi) throw std::invalid_argument("LoadQoS: e_lo > e_hi");
    if (!(zeta > 0.0) || std::isinf(zeta))
      throw std::invalid_argument("LoadQoS: zeta must be finite and > 0");
    if (!(zeta_bar > 0.0) || std::isinf(zeta_bar))
      throw std::invalid_argument("LoadQoS: zeta_bar must be finite and > 0");
  }
};

/// Converts a window-energy bound from kWh to kW*step for a given sampling
/// period.  Infinite bounds pass through unchanged.
inline double kwh_to_kw_step(double kwh, double ts_minutes) {
  if (!(ts_minutes > 0.0))
    throw std::invalid_argument("kwh_to_kw_step: ts_minutes must be > 0");
  if (std::isinf(kwh)) return kwh;
  return kwh * 60.0 / ts_minutes;
}

/// Augmented per-load trajectory: memory slot plus Np planned slots.
struct AugmentedTrajectory {
  Eigen::VectorXd values;  ///< size Np+1, slot 0 = memory

  AugmentedTrajectory() = default;
  explicit AugmentedTrajectory(Eigen::VectorXd v) : values(std::move(v)) {
    if (values.size() < 2)
      throw std::invalid_argument("AugmentedTrajectory: need at least 2 slots");
  }
  static AugmentedTrajectory zero(int horizon) {
    if (horizon < 1)
      throw std::invalid_argument("AugmentedTrajectory: horizon must be >= 1");
    return AugmentedTrajectory(Eigen::VectorXd::Zero(horizon + 1));
  }

  int horizon() const { return static_cast<int>(values.size()) - 1; }
};

/// Power the load commits to consume at the current tick (first planned slot).
inline double consumed_power(const AugmentedTrajectory& traj) {
  return traj.values[1];
}

/// Joint state of the whole ensemble at one tick.
struct EnsembleState {
  std::vector<AugmentedTrajectory> trajectories;
  Eigen::VectorXd prev_consumed;  ///< realised consumption at the previous tick
  std::int64_t tick = 0;

  int n_loads() const { return static_cast<int>(trajectories.size()); }
  int horizon() const {
    return trajectories.empty() ? 0 : trajectories.front().horizon();
  }

  /// Load-major flattening of all trajectories.
  Eigen::VectorXd stacked() const {
    const int np1 = horizon() + 1;
    Eigen::VectorXd out(static_cast<Eigen::Index>(n_loads()) * np1);
    for (int i = 0; i < n_loads(); ++i)
      out.segment(static_cast<Eigen::Index>(i) * np1, np1) =
          trajectories[i].values;
    return out;
  }

  static EnsembleState from_stacked(const Eigen::VectorXd& z, int n_loads,
                                    Eigen::VectorXd prev_consumed,
                                    std::int64_t tick = 0) {
    if (n_loads < 1 || z.size() % n_loads != 0)
      throw std::invalid_argument("EnsembleState: size mismatch");
    const Eigen::Index np1 = z.size() / n_loads;
    if (np1 < 2)
      throw std::invalid_argument("EnsembleState: horizon must be >= 1");
    if (prev_consumed.size() != n_loads)
      throw std::invalid_argument("EnsembleState: prev_consumed size mismatch");
    EnsembleState st;
    st.trajectories.reserve(n_loads);
    for (int i = 0; i < n_loads; ++i)
      st.trajectories.emplace_back(z.segment(i * np1, np1));
    st.prev_consumed = std::move(prev_consumed);
    st.tick = tick;
    return st;
  }
};

/// Reference data visible to the controller at one tick: the value the
/// aggregate tracked at the previous tick plus the Np-step preview.
struct ReferenceWindow {
  double s_prev = 0.0;
  Eigen::VectorXd s_future;  ///< size Np, s_future[0] is the current target

  int horizon() const { return static_cast<int>(s_future.size()); }

  /// The (Np+1)-vector [s_prev, s_future...] aligned with trajectory slots.
  Eigen::VectorXd slots() const {
    Eigen::VectorXd out(s_future.size() + 1);
    out[0] = s_prev;
    out.tail(s_future.size()) = s_future;
    return out;
  }
};

}  // namespace flexalloc
