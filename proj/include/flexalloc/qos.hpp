#pragma once

// Half-space representation of a load's time-invariant QoS set and exact
// Euclidean projection onto it.
//
// Row layout for horizon N_p (augmented trajectory y of length N_p+1,
// y[0] = memory slot, never boxed directly):
//   rows 0      .. N_p-1   :  y[k]        <=  d_hi      (power-hi, k=1..N_p)
//   rows N_p    .. 2N_p-1  : -y[k]        <= -d_lo      (power-lo)
//   rows 2N_p   .. 3N_p-1  :  y[k]-y[k-1] <=  r_hi      (rate-hi, k=1..N_p)
//   rows 3N_p   .. 4N_p-1  :  y[k-1]-y[k] <= -r_lo      (rate-lo)
//   row  4N_p              :  sum_{k>=1} y[k] <=  e_hi  (energy-hi)
//   row  4N_p+1            : -sum_{k>=1} y[k] <= -e_lo  (energy-lo)
//
// The k=1 rate rows couple the first planned slot to the memory slot; this
// is what keeps the set time-invariant and the memory slot bounded.

#include <Eigen/Dense>

#include <algorithm>
#include <ostream>
#include <string>
#include <vector>

#include "flexalloc/qp.hpp"
#include "flexalloc/types.hpp"

namespace flexalloc {

enum class QoSRowKind { PowerHi, PowerLo, RateHi, RateLo, EnergyHi, EnergyLo };

struct QoSRowLabel {
  QoSRowKind kind;
  int slot;  ///< 1..N_p for power/rate rows, 0 for energy rows
};

inline std::string to_string(const QoSRowLabel& l) {
  const char* base = nullptr;
  switch (l.kind) {
    case QoSRowKind::PowerHi: base = "power-hi"; break;
    case QoSRowKind::PowerLo: base = "power-lo"; break;
    case QoSRowKind::RateHi: base = "rate-hi"; break;
    case QoSRowKind::RateLo: base = "rate-lo"; break;
    case QoSRowKind::EnergyHi: base = "energy-hi"; break;
    case QoSRowKind::EnergyLo: base = "energy-lo"; break;
  }
  if (l.kind == QoSRowKind::EnergyHi || l.kind == QoSRowKind::EnergyLo)
    return base;
  return std::string(base) + "[" + std::to_string(l.slot) + "]";
}

struct QoSPolytope {
  Eigen::MatrixXd A;  ///< (4 N_p + 2) x (N_p + 1)
  Eigen::VectorXd b;
  std::vector<QoSRowLabel> labels;
  /// Solver-facing role per row.  Paired rows whose bounds coincide (within
  /// 1e-10) are collapsed: the hi row becomes an equality, the lo row a skip.
  std::vector<RowRole> roles;
  LoadQoS q;  ///< the bounds this polytope was built from

  int horizon() const { return static_cast<int>(A.cols()) - 1; }
  int rows() const { return static_cast<int>(A.rows()); }

  /// Max constraint violation of y (rows with infinite bound never violate).
  double violation(const Eigen::VectorXd& y) const {
    double worst = 0.0;
    for (int j = 0; j < rows(); ++j) {
      if (std::isinf(b[j])) continue;
      worst = std::max(worst, A.row(j).dot(y) - b[j]);
    }
    return worst;
  }
};

struct ProjectionResult {
  AugmentedTrajectory point;
  std::vector<int> active_rows;
  int iterations = 0;
  double residual = std::numeric_limits<double>::infinity();
  bool converged = false;
};

inline QoSPolytope build_polytope(const LoadQoS& q, int np) {
  q.validate();
  if (np < 1) throw std::invalid_argument("build_polytope: N_p must be >= 1");
  const int n = np + 1;
  QoSPolytope p;
  p.q = q;
  p.A = Eigen::MatrixXd::Zero(4 * np + 2, n);
  p.b = Eigen::VectorXd::Zero(4 * np + 2);
  p.labels.resize(4 * np + 2);
  p.roles.assign(4 * np + 2, RowRole::Inequality);

  for (int k = 1; k <= np; ++k) {
    p.A(k - 1, k) = 1.0;
    p.b[k - 1] = q.d_hi;
    p.labels[k - 1] = {QoSRowKind::PowerHi, k};

    p.A(np + k - 1, k) = -1.0;
    p.b[np + k - 1] = -q.d_lo;
    p.labels[np + k - 1] = {QoSRowKind::PowerLo, k};

    p.A(2 * np + k - 1, k) = 1.0;
    p.A(2 * np + k - 1, k - 1) = -1.0;
    p.b[2 * np + k - 1] = q.r_hi;
    p.labels[2 * np + k - 1] = {QoSRowKind::RateHi, k};

    p.A(3 * np + k - 1, k) = -1.0;
    p.A(3 * np + k - 1, k - 1) = 1.0;
    p.b[3 * np + k - 1] = -q.r_lo;
    p.labels[3 * np + k - 1] = {QoSRowKind::RateLo, k};
  }
  p.A.row(4 * np).tail(np).setOnes();
  p.b[4 * np] = q.e_hi;
  p.labels[4 * np] = {QoSRowKind::EnergyHi, 0};
  p.A.row(4 * np + 1).tail(np).setConstant(-1.0);
  p.b[4 * np + 1] = -q.e_lo;
  p.labels[4 * np + 1] = {QoSRowKind::EnergyLo, 0};

  // collapse equality-thin bound pairs so the active-set solver sees them
  // as hard equalities instead of a degenerate sliver
  constexpr double kDegenerateTol = 1e-10;
  auto collapse = [&](int hi_row, int lo_row, double lo, double hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi)) return;
    if (hi - lo > kDegenerateTol) return;
    p.roles[hi_row] = RowRole::Equality;
    p.roles[lo_row] = RowRole::Skip;
  };
  for (int k = 1; k <= np; ++k) {
    collapse(k - 1, np + k - 1, q.d_lo, q.d_hi);
    collapse(2 * np + k - 1, 3 * np + k - 1, q.r_lo, q.r_hi);
  }
  collapse(4 * np, 4 * np + 1, q.e_lo, q.e_hi);
  return p;
}

struct FeasibilityResult {
  bool nonempty = false;
  AugmentedTrajectory witness;
  bool via_precheck = false;  ///< true when the constant-trajectory test fired
};

/// Tests whether the polytope has any feasible point.  A constant trajectory
/// y = [c, c, ..., c] is feasible iff 0 in [r_lo, r_hi] and c lies in
/// [max(d_lo, e_lo/N_p), min(d_hi, e_hi/N_p)]; when that interval is nonempty
/// the midpoint is returned as witness.  Otherwise the box-midpoint constant
/// trajectory is projected and the solver's exact infeasibility verdict is
/// reported.
inline FeasibilityResult check_nonempty(const QoSPolytope& p) {
  const int np = p.horizon();
  const LoadQoS& q = p.q;
  FeasibilityResult out;

  const double c_lo = std::max(q.d_lo, q.e_lo / np);
  const double c_hi = std::min(q.d_hi, q.e_hi / np);
  if (q.r_lo <= 0.0 && 0.0 <= q.r_hi && c_lo <= c_hi) {
    double c;
    if (std::isfinite(c_lo) && std::isfinite(c_hi))
      c = 0.5 * (c_lo + c_hi);
    else if (std::isfinite(c_lo))
      c = std::max(c_lo, 0.0);
    else if (std::isfinite(c_hi))
      c = std::min(c_hi, 0.0);
    else
      c = 0.0;
    out.nonempty = true;
    out.witness =
        AugmentedTrajectory(Eigen::VectorXd::Constant(np + 1, c));
    out.via_precheck = true;
    return out;
  }

  // fall back to an exact projection attempt from the box-midpoint trajectory
  double mid;
  if (std::isfinite(q.d_lo) && std::isfinite(q.d_hi))
    mid = 0.5 * (q.d_lo + q.d_hi);
  else if (std::isfinite(q.d_lo))
    mid = std::max(q.d_lo, 0.0);
  else if (std::isfinite(q.d_hi))
    mid = std::min(q.d_hi, 0.0);
  else
    mid = 0.0;
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(np + 1, mid);
  const QpResult r = solve_qp(Eigen::VectorXd::Ones(np + 1), x, p.A, p.b,
                              p.roles);
  if (r.status == QpStatus::Converged) {
    out.nonempty = true;
    out.witness = AugmentedTrajectory(r.x);
  }
  return out;
}

/// Exact Euclidean projection onto the polytope:
/// argmin ||y - x||^2 s.t. A y <= b, via the dual active-set solver.
/// `warm_start` (optional) seeds the working set with a previous solve's
/// active rows; when the seeded equality solve already satisfies the KKT
/// conditions the solver is skipped entirely.
inline ProjectionResult project(const QoSPolytope& p,
                                const AugmentedTrajectory& x,
                                double tol = 1e-9,
                                const std::vector<int>* warm_start = nullptr) {
  if (x.values.size() != p.A.cols())
    throw std::invalid_argument("project: trajectory/polytope size mismatch");
  if (!(tol > 0.0)) throw std::invalid_argument("project: tol must be > 0");
  const Eigen::VectorXd q = Eigen::VectorXd::Ones(p.A.cols());

  ProjectionResult out;
  if (warm_start && !warm_start->empty()) {
    QpResult warm = solve_eqp(q, x.values, p.A, p.b, *warm_start);
    if (warm.status == QpStatus::Converged) {
      bool dual_ok = true;
      for (int j : *warm_start)
        if (p.roles[j] == RowRole::Inequality && warm.mu[j] < -1e-12)
          dual_ok = false;
      if (dual_ok &&
          detail::kkt_residual(q, x.values, p.A, p.b, p.roles, warm.x,
                               warm.mu) <= tol) {
        out.point = AugmentedTrajectory(warm.x);
        out.active_rows = *warm_start;
        std::sort(out.active_rows.begin(), out.active_rows.end());
        out.iterations = 0;
        out.residual = p.violation(warm.x);
        out.converged = true;
        return out;
      }
    }
  }

  const QpResult r = solve_qp(q, x.values, p.A, p.b, p.roles);
  if (r.status == QpStatus::Infeasible)
    throw std::runtime_error("project: polytope is empty");
  out.point = AugmentedTrajectory(r.x);
  out.active_rows = r.active;
  out.iterations = r.iterations;
  out.residual = p.violation(r.x);
  out.converged = r.status == QpStatus::Converged && r.kkt_residual <= tol;
  return out;
}

// ---------------------------------------------------------------------------
// Dykstra alternating projections (independent cross-check oracle)
//
// The polytope is the intersection of
//   * the slot box       { d_lo <= y[k] <= d_hi, k = 1..N_p }
//   * N_p rate slabs     { r_lo <= y[k] - y[k-1] <= r_hi }
//   * the energy slab    { e_lo <= sum y[k] <= e_hi }
// each of which has a closed-form projection.  Dykstra's corrections make
// the cyclic scheme converge to the exact intersection projection.

namespace detail {

inline void project_box(const LoadQoS& q, Eigen::VectorXd& y) {
  for (Eigen::Index k = 1; k < y.size(); ++k)
    y[k] = std::min(std::max(y[k], q.d_lo), q.d_hi);
}

/// Projection onto { lo <= a'y <= hi } for a fixed row a.
inline void project_slab(const Eigen::VectorXd& a, double a_sq, double lo,
                         double hi, Eigen::VectorXd& y) {
  const double v = a.dot(y);
  double target = v;
  if (v > hi)
    target = hi;
  else if (v < lo)
    target = lo;
  if (target != v) y += ((target - v) / a_sq) * a;
}

}  // namespace detail

/// Alternating-projection computation of the same point as project();
/// converges linearly, so it is only suitable as a test oracle and for
/// debugging.  Stops once neither the iterate nor any correction vector
/// moves by more than tol over three consecutive cycles; the iterate alone
/// can sit still for long stretches while corrections shift mass between
/// sets, so watching it is not enough.
inline ProjectionResult dykstra_project(const QoSPolytope& p,
                                        const AugmentedTrajectory& x,
                                        double tol = 1e-10,
                                        int max_iter = 200000) {
  if (max_iter < 0)
    throw std::invalid_argument("dykstra_project: max_iter must be >= 0");
  if (!(tol > 0.0))
    throw std::invalid_argument("dykstra_project: tol must be > 0");
  // max_iter = 0 falls straight through to the exhaustion report below
  const int np = p.horizon();
  const LoadQoS& q = p.q;

  // correction vectors: box, rate slab k=1..N_p, energy slab
  const int n_sets = np + 2;
  std::vector<Eigen::VectorXd> corr(
      n_sets, Eigen::VectorXd::Zero(np + 1));
  std::vector<Eigen::VectorXd> rate_rows(np);
  for (int k = 1; k <= np; ++k) {
    rate_rows[k - 1] = Eigen::VectorXd::Zero(np + 1);
    rate_rows[k - 1][k] = 1.0;
    rate_rows[k - 1][k - 1] = -1.0;
  }
  Eigen::VectorXd energy_row = Eigen::VectorXd::Zero(np + 1);
  energy_row.tail(np).setOnes();

  Eigen::VectorXd y = x.values;
  int calm_cycles = 0;
  ProjectionResult out;
  for (int cycle = 0; cycle < max_iter; ++cycle) {
    const Eigen::VectorXd y_before = y;
    double corr_moved = 0.0;
    for (int s = 0; s < n_sets; ++s) {
      const Eigen::VectorXd corr_before = corr[s];
      Eigen::VectorXd w = y + corr[s];
      if (s == 0) {
        Eigen::VectorXd proj = w;
        detail::project_box(q, proj);
        corr[s] = w - proj;
        y = proj;
      } else if (s <= np) {
        Eigen::VectorXd proj = w;
        detail::project_slab(rate_rows[s - 1], 2.0, q.r_lo, q.r_hi, proj);
        corr[s] = w - proj;
        y = proj;
      } else {
        Eigen::VectorXd proj = w;
        detail::project_slab(energy_row, static_cast<double>(np), q.e_lo,
                             q.e_hi, proj);
        corr[s] = w - proj;
        y = proj;
      }
      corr_moved = std::max(
          corr_moved, (corr[s] - corr_before).lpNorm<Eigen::Infinity>());
    }
    out.iterations = cycle + 1;
    const double moved =
        std::max((y - y_before).lpNorm<Eigen::Infinity>(), corr_moved);
    calm_cycles = moved <= tol ? calm_cycles + 1 : 0;
    if (calm_cycles >= 3) {
      out.converged = true;
      break;
    }
  }
  out.point = AugmentedTrajectory(y);
  out.residual = p.violation(y);
  return out;
}

/// Debug dump: one CSV row per constraint (label, coefficients, bound, role).
inline void polytope_to_csv(const QoSPolytope& p, std::ostream& os) {
  os << "label";
  for (int c = 0; c <= p.horizon(); ++c) os << ",a" << c;
  os << ",b,role\n";
  for (int j = 0; j < p.rows(); ++j) {
    os << to_string(p.labels[j]);
    for (int c = 0; c <= p.horizon(); ++c) os << ',' << p.A(j, c);
    os << ',' << p.b[j] << ',';
    switch (p.roles[j]) {
      case RowRole::Inequality: os << "inequality"; break;
      case RowRole::Equality: os << "equality"; break;
      case RowRole::Skip: os << "skip"; break;
    }
    os << '\n';
  }
}

}  // namespace flexalloc
