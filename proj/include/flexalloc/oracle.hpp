#pragma once

// Centralized optimum of one tick's tracking objective over the full QoS
// product set, plus the analytic bounds the stability monitors check
// against it.
//
// The solver exploits the aggregative structure: with mu the per-slot
// aggregate, each load's best response
//     z_i(mu) = argmin_{D_i} 1/2 z'Q_i z - (u_i - mu)' z
// is a tiny QP, and the optimum is the unique root of
//     G(mu) = sum_i z_i(mu) - mu.
// G is piecewise affine and strongly monotone (Jacobian -(I + sum_i P_i)
// with P_i the constrained inverse of Q_i), so a semismooth Newton
// iteration with per-load warm starts finds the root in a handful of
// steps.  The result is then certified the way the plain method would
// stop: a projected-gradient step at 1/lambda_max must move the iterate
// by no more than the tolerance.  If certification fails the solver
// falls back to accelerated projected-gradient rounds until it passes.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "flexalloc/gradient.hpp"
#include "flexalloc/qos.hpp"
#include "flexalloc/types.hpp"

namespace flexalloc {

struct OptimalSolution {
  Eigen::VectorXd z;          ///< stacked optimal ensemble vector
  Eigen::VectorXd consensus;  ///< per-slot aggregate of z
  double objective = 0.0;     ///< 1/2 z'Hz - u'z (constant terms omitted)
  /// distance moved by one projected-gradient step at 1/lambda_max from z;
  /// this is the certificate that z is the fixed point
  double pg_residual = std::numeric_limits<double>::infinity();
  std::int64_t iterations = 0;
  bool converged = false;
  std::vector<std::vector<int>> active_sets;  ///< per-load active rows at z
};

struct SolveOptions {
  double tol = 1e-10;  ///< successive-iterate stopping distance
  std::int64_t max_iter = 1000000;
  const OptimalSolution* warm = nullptr;  ///< previous tick's solution
};

namespace detail {

/// Row index of a labelled constraint in the canonical layout.
inline int row_index(QoSRowKind kind, int slot, int np) {
  switch (kind) {
    case QoSRowKind::PowerHi: return slot - 1;
    case QoSRowKind::PowerLo: return np + slot - 1;
    case QoSRowKind::RateHi: return 2 * np + slot - 1;
    case QoSRowKind::RateLo: return 3 * np + slot - 1;
    case QoSRowKind::EnergyHi: return 4 * np;
    case QoSRowKind::EnergyLo: return 4 * np + 1;
  }
  return -1;
}

/// Predicts the active set after the time shift: a constraint binding at
/// slot k usually binds at slot k-1 one tick later.  Slot-1 rows fall off
/// the front; equality rows are always kept.
inline std::vector<int> rotate_active_set(const QoSPolytope& p,
                                          const std::vector<int>& active) {
  const int np = p.horizon();
  std::vector<int> out;
  for (int row : active) {
    const QoSRowLabel& l = p.labels[row];
    if (l.kind == QoSRowKind::EnergyHi || l.kind == QoSRowKind::EnergyLo) {
      out.push_back(row);
    } else if (l.slot >= 2) {
      out.push_back(row_index(l.kind, l.slot - 1, np));
    }
  }
  for (int j = 0; j < p.rows(); ++j)
    if (p.roles[j] == RowRole::Equality) out.push_back(j);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Best response of one load: warm equality solve when the hinted active
/// set already satisfies the KKT conditions, full active-set solve
/// otherwise.  Throws when the load's constraint set is empty.
inline QpResult best_response(const QoSPolytope& p, const Eigen::VectorXd& q,
                              const Eigen::VectorXd& c,
                              const std::vector<int>* warm, int load) {
  if (warm && !warm->empty()) {
    QpResult w = solve_eqp(q, c, p.A, p.b, *warm);
    if (w.status == QpStatus::Converged) {
      bool dual_ok = true;
      for (int j : *warm)
        if (p.roles[j] == RowRole::Inequality && w.mu[j] < -1e-12)
          dual_ok = false;
      if (dual_ok) {
        const double res = kkt_residual(q, c, p.A, p.b, p.roles, w.x, w.mu);
        if (res <= 1e-10 * (1.0 + c.lpNorm<Eigen::Infinity>())) {
          w.active = *warm;
          w.kkt_residual = res;
          return w;
        }
      }
    }
  }
  QpResult r = solve_qp(q, c, p.A, p.b, p.roles);
  if (r.status == QpStatus::Infeasible)
    throw std::runtime_error("solve_optimal: load " + std::to_string(load) +
                             " has an empty constraint set");
  return r;
}

}  // namespace detail

inline OptimalSolution solve_optimal(const std::vector<LoadQoS>& fleet,
                                     const std::vector<QoSPolytope>& polys,
                                     const HessianOperator& H,
                                     const InputVector& u,
                                     const SolveOptions& opt = {}) {
  const int n = H.n_loads();
  const int np1 = H.horizon() + 1;
  if (static_cast<int>(fleet.size()) != n ||
      static_cast<int>(polys.size()) != n || u.stacked.size() != H.dim())
    throw std::invalid_argument("solve_optimal: size mismatch");
  if (!(opt.tol > 0.0))
    throw std::invalid_argument("solve_optimal: tol must be > 0");

  OptimalSolution out;
  std::vector<std::vector<int>> sets(n);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(np1);
  if (opt.warm && opt.warm->consensus.size() == np1 &&
      static_cast<int>(opt.warm->active_sets.size()) == n) {
    // the aggregate one tick later is roughly the old aggregate shifted
    mu.head(np1 - 1) = opt.warm->consensus.tail(np1 - 1);
    mu[np1 - 1] = opt.warm->consensus[0];
    for (int i = 0; i < n; ++i)
      sets[i] = detail::rotate_active_set(polys[i], opt.warm->active_sets[i]);
  }

  std::int64_t outer = 0;
  Eigen::VectorXd z(H.dim());
  auto eval_big_g = [&](const Eigen::VectorXd& m) {
    Eigen::VectorXd agg = Eigen::VectorXd::Zero(np1);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd c = u.block(i) - m;
      const QpResult r = detail::best_response(
          polys[i], H.block_diagonal(i), c, &sets[i], i);
      sets[i] = r.active;
      z.segment(static_cast<Eigen::Index>(i) * np1, np1) = r.x;
      agg += r.x;
    }
    ++outer;
    return Eigen::VectorXd(agg - m);
  };

  // --- semismooth Newton on the aggregate -------------------------------
  Eigen::VectorXd big_g = eval_big_g(mu);
  for (int it = 0; it < 100; ++it) {
    const double gnorm = big_g.lpNorm<Eigen::Infinity>();
    if (gnorm <= 1e-11 * (1.0 + mu.lpNorm<Eigen::Infinity>())) break;
    Eigen::MatrixXd J = Eigen::MatrixXd::Identity(np1, np1);
    for (int i = 0; i < n; ++i)
      J += constrained_inverse(H.block_diagonal(i), polys[i].A, sets[i]);
    const Eigen::VectorXd dmu = J.ldlt().solve(big_g);
    bool accepted = false;
    double step = 1.0;
    for (int half = 0; half < 14; ++half, step *= 0.5) {
      const Eigen::VectorXd trial = mu + step * dmu;
      const Eigen::VectorXd gt = eval_big_g(trial);
      if (gt.lpNorm<Eigen::Infinity>() <= (1.0 - 0.25 * step) * gnorm) {
        mu = trial;
        big_g = gt;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;  // numerical floor reached
  }

  // --- certification: plain projected-gradient stopping rule ------------
  const double beta = 1.0 / H.spectrum().lambda_max;
  auto pg_step = [&](const Eigen::VectorXd& zc,
                     std::vector<std::vector<int>>& s) {
    const Eigen::VectorXd g = H.apply(zc) - u.stacked;
    Eigen::VectorXd znext(zc.size());
    for (int i = 0; i < n; ++i) {
      const AugmentedTrajectory target(
          Eigen::VectorXd(zc.segment(static_cast<Eigen::Index>(i) * np1, np1) -
                          beta * g.segment(static_cast<Eigen::Index>(i) * np1,
                                           np1)));
      const auto proj = project(polys[i], target, opt.tol, &s[i]);
      znext.segment(static_cast<Eigen::Index>(i) * np1, np1) = proj.point.values;
      s[i] = proj.active_rows;
    }
    ++outer;
    return znext;
  };

  Eigen::VectorXd zc = z;
  std::vector<std::vector<int>> setsc = sets;
  while (true) {
    std::vector<std::vector<int>> snext = setsc;
    const Eigen::VectorXd znext = pg_step(zc, snext);
    const double moved = (znext - zc).norm();
    if (moved <= opt.tol) {
      out.converged = true;
      out.pg_residual = moved;
      break;
    }
    if (outer >= opt.max_iter) {
      out.pg_residual = moved;
      break;
    }
    // accelerated rounds until the plain step certifies
    Eigen::VectorXd zk = znext, zprev = znext;
    double tk = 1.0;
    for (int k = 0; k < 200 && outer < opt.max_iter; ++k) {
      const double tnext = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
      const Eigen::VectorXd y = zk + ((tk - 1.0) / tnext) * (zk - zprev);
      const Eigen::VectorXd znew = pg_step(y, snext);
      if ((y - znew).dot(znew - zk) > 0.0) tk = 1.0;  // adaptive restart
      else tk = tnext;
      zprev = zk;
      zk = znew;
    }
    zc = zk;
    setsc = snext;
  }

  out.z = zc;
  out.active_sets = setsc;
  out.consensus = Eigen::VectorXd::Zero(np1);
  for (int i = 0; i < n; ++i)
    out.consensus += zc.segment(static_cast<Eigen::Index>(i) * np1, np1);
  out.objective = 0.5 * zc.dot(H.apply(zc)) - u.stacked.dot(zc);
  out.iterations = outer;
  return out;
}

/// || z - Pi_D(z - alpha (Hz - u)) ||_2 with fresh (cold) projections:
/// zero exactly at the constrained optimum, for every positive alpha.
inline double fixed_point_residual(const std::vector<QoSPolytope>& polys,
                                   const HessianOperator& H,
                                   const InputVector& u,
                                   const Eigen::VectorXd& z, double alpha) {
  if (z.size() != H.dim() || u.stacked.size() != H.dim())
    throw std::invalid_argument("fixed_point_residual: size mismatch");
  if (!(alpha > 0.0))
    throw std::invalid_argument("fixed_point_residual: alpha must be > 0");
  const int np1 = H.horizon() + 1;
  const Eigen::VectorXd g = H.apply(z) - u.stacked;
  double acc = 0.0;
  for (int i = 0; i < H.n_loads(); ++i) {
    const Eigen::Index off = static_cast<Eigen::Index>(i) * np1;
    const AugmentedTrajectory target(
        Eigen::VectorXd(z.segment(off, np1) - alpha * g.segment(off, np1)));
    const auto proj = project(polys[i], target);
    acc += (z.segment(off, np1) - proj.point.values).squaredNorm();
  }
  return std::sqrt(acc);
}

/// True when the all-zero trajectory satisfies every load's constraints.
inline bool contains_zero(const std::vector<QoSPolytope>& polys,
                          double tol = 1e-12) {
  for (const auto& p : polys) {
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(p.A.cols());
    if (p.violation(zero) > tol) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// analytic bounds used by the monitors

/// How far the constrained optimum can move per unit change of the input
/// vector:  ||z_a - z_b|| / N  <=  ||u_a - u_b|| / lambda_min.
struct SensitivityBound {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = true;
};

inline SensitivityBound solution_sensitivity_bound(
    double lambda_min, int n_loads, const Eigen::VectorXd& z_a,
    const Eigen::VectorXd& z_b, const Eigen::VectorXd& u_a,
    const Eigen::VectorXd& u_b) {
  SensitivityBound b;
  b.lhs = (z_a - z_b).norm() / n_loads;
  b.rhs = (u_a - u_b).norm() / lambda_min;
  b.holds = b.lhs <= b.rhs * (1.0 + 1e-6) + 1e-9;
  return b;
}

/// Drift between the shifted previous optimum and the current one:
///   (1/N) || P z*_prev - z*_now ||  <=  g_bar / lambda_min,
///   g_bar = ||u_now - u_prev|| + 2 ||u_prev||.
/// The g_bar expression relies on the origin being feasible (the optimum
/// under zero input is then the origin); `evaluated` is false otherwise
/// and the bound is reported as vacuously holding.
struct ShiftDriftBound {
  double lhs = 0.0;
  double rhs = 0.0;
  double g_bar = 0.0;
  bool evaluated = false;
  bool holds = true;
};

inline ShiftDriftBound shifted_drift_bound(double lambda_min, int n_loads,
                                           bool zero_feasible,
                                           const Eigen::VectorXd& z_prev,
                                           const Eigen::VectorXd& z_now,
                                           const Eigen::VectorXd& u_prev,
                                           const Eigen::VectorXd& u_now) {
  ShiftDriftBound b;
  b.g_bar = (u_now - u_prev).norm() + 2.0 * u_prev.norm();
  if (!zero_feasible) return b;
  b.evaluated = true;
  b.lhs = (shift_stacked(z_prev, n_loads) - z_now).norm() / n_loads;
  b.rhs = b.g_bar / lambda_min;
  b.holds = b.lhs <= b.rhs * (1.0 + 1e-6) + 1e-9;
  return b;
}

// ---------------------------------------------------------------------------
// input-to-state stability envelope

/// Geometric envelope on the distance to the moving optimum:
///   B_t = m^t D_0 + alpha * u_bar / (1 - m),
///   u_bar = N * g_bar_max / (alpha * lambda_min) + delta_max,
/// with m the contraction factor of the run's step size, g_bar_max the
/// largest observed optimum drift bound and delta_max the largest observed
/// distance between the shifted input and the optimal input.
struct ISSEnvelope {
  double m = 0.0;
  double u_bar = 0.0;
  double g_bar_max = 0.0;
  double delta_max = 0.0;
  std::vector<double> distance;
  std::vector<double> envelope;
  std::int64_t violations = 0;
  bool applicable = false;  ///< m < 1 and at least one sample
};

inline ISSEnvelope iss_envelope(double m, double alpha, double lambda_min,
                                int n_loads,
                                const std::vector<double>& distance,
                                const std::vector<double>& g_bars,
                                const std::vector<double>& deltas) {
  ISSEnvelope e;
  e.m = m;
  e.distance = distance;
  e.applicable = m < 1.0 && !distance.empty();
  for (double g : g_bars) e.g_bar_max = std::max(e.g_bar_max, g);
  for (double d : deltas) e.delta_max = std::max(e.delta_max, d);
  if (!e.applicable) return e;
  e.u_bar = n_loads * e.g_bar_max / (alpha * lambda_min) + e.delta_max;
  const double tail = alpha * e.u_bar / (1.0 - m);
  e.envelope.resize(distance.size());
  double mt = 1.0;
  for (size_t t = 0; t < distance.size(); ++t) {
    e.envelope[t] = mt * distance[0] + tail;
    if (distance[t] > e.envelope[t] * (1.0 + 1e-9) + 1e-9) ++e.violations;
    mt *= m;
  }
  return e;
}

// ---------------------------------------------------------------------------
// oracle chain: the self-consistent sequence of per-tick optima

/// Tracks the sequence of centralized optima a clairvoyant controller
/// would realize: each tick's input vector is built from the *previous
/// optimum's* consumed power, so the chain is the moving target the
/// stability results compare the online algorithm against.
class OracleChain {
 public:
  OracleChain(std::vector<LoadQoS> fleet, int horizon,
              Eigen::VectorXd prev_consumed0, SolveOptions opt = {})
      : fleet_(std::move(fleet)),
        hessian_(assemble_hessian(fleet_, horizon)),
        opt_(opt),
        prev_consumed_(std::move(prev_consumed0)) {
    if (prev_consumed_.size() != static_cast<Eigen::Index>(fleet_.size()))
      throw std::invalid_argument("OracleChain: prev_consumed size mismatch");
    opt_.warm = nullptr;  // managed internally
    polys_.reserve(fleet_.size());
    for (size_t i = 0; i < fleet_.size(); ++i)
      polys_.push_back(build_polytope(fleet_[i], horizon));
    zero_feasible_ = contains_zero(polys_);
  }

  struct Step {
    OptimalSolution sol;
    Eigen::VectorXd u;      ///< input vector of this tick's instance
    ShiftDriftBound drift;  ///< vs. the previous optimum (unevaluated at t=0)
    SensitivityBound sensitivity;  ///< vs. the previous optimum (t >= 1)
  };

  Step step(const ReferenceWindow& window) {
    const InputVector u = input_vector(prev_consumed_, window, fleet_);
    SolveOptions o = opt_;
    if (prev_) o.warm = &*prev_;
    Step s;
    s.sol = solve_optimal(fleet_, polys_, hessian_, u, o);
    s.u = u.stacked;
    if (prev_) {
      s.drift = shifted_drift_bound(hessian_.spectrum().lambda_min,
                                    hessian_.n_loads(), zero_feasible_,
                                    prev_->z, s.sol.z, u_prev_, s.u);
      s.sensitivity = solution_sensitivity_bound(
          hessian_.spectrum().lambda_min, hessian_.n_loads(), prev_->z,
          s.sol.z, u_prev_, s.u);
    }
    const int np1 = hessian_.horizon() + 1;
    for (int i = 0; i < hessian_.n_loads(); ++i)
      prev_consumed_[i] = s.sol.z[static_cast<Eigen::Index>(i) * np1 + 1];
    u_prev_ = s.u;
    prev_ = s.sol;
    return s;
  }

  const HessianOperator& hessian() const { return hessian_; }
  const std::vector<QoSPolytope>& polytopes() const { return polys_; }
  const std::vector<LoadQoS>& fleet() const { return fleet_; }
  bool zero_feasible() const { return zero_feasible_; }

 private:
  std::vector<LoadQoS> fleet_;
  std::vector<QoSPolytope> polys_;
  HessianOperator hessian_;
  SolveOptions opt_;
  Eigen::VectorXd prev_consumed_;
  std::optional<OptimalSolution> prev_;
  Eigen::VectorXd u_prev_;
  bool zero_feasible_ = false;
};

}  // namespace flexalloc
