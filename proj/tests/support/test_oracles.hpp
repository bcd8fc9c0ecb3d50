#pragma once

// Independent reference implementations the tests check the library
// against: finite-difference gradients, brute-force KKT enumeration for
// projections, and random problem generators.  Everything here is written
// for clarity over speed and shares no code with the implementations under
// test.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <flexalloc/gradient.hpp>
#include <flexalloc/qos.hpp>
#include <flexalloc/types.hpp>

namespace testsup {

// ---------------------------------------------------------------------------
// finite differences

/// Central finite differences of the scalar tracking objective.
inline Eigen::VectorXd fd_gradient(const std::vector<flexalloc::LoadQoS>& fleet,
                                   const Eigen::VectorXd& prev_consumed,
                                   const flexalloc::ReferenceWindow& ref,
                                   const Eigen::VectorXd& z,
                                   double h = 1e-5) {
  Eigen::VectorXd g(z.size());
  Eigen::VectorXd zp = z, zm = z;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    const double step = h * std::max(1.0, std::abs(z[j]));
    zp[j] = z[j] + step;
    zm[j] = z[j] - step;
    const double fp = flexalloc::objective_value(fleet, prev_consumed, ref, zp);
    const double fm = flexalloc::objective_value(fleet, prev_consumed, ref, zm);
    g[j] = (fp - fm) / (2.0 * step);
    zp[j] = z[j];
    zm[j] = z[j];
  }
  return g;
}

// ---------------------------------------------------------------------------
// brute-force projection by KKT enumeration

/// Projects x onto {y : A y <= b (inequality rows), A y = b (equality rows)}
/// by enumerating candidate active sets and checking the KKT conditions of
///   min 1/2 ||y - x||^2.
/// Exponential in the number of rows; intended for tiny instances only.
inline Eigen::VectorXd enumerate_projection(const flexalloc::QoSPolytope& p,
                                            const Eigen::VectorXd& x,
                                            double tol = 1e-9) {
  using flexalloc::RowRole;
  const Eigen::Index dim = p.A.cols();

  std::vector<int> always;      // equality rows, forced active
  std::vector<int> candidates;  // finite inequality rows
  for (int j = 0; j < p.rows(); ++j) {
    if (p.roles[j] == RowRole::Skip || !std::isfinite(p.b[j])) continue;
    if (p.roles[j] == RowRole::Equality)
      always.push_back(j);
    else
      candidates.push_back(j);
  }

  double best_dist = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best = x;
  bool found = false;

  const int m = static_cast<int>(candidates.size());
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << m); ++bits) {
    std::vector<int> active = always;
    for (int k = 0; k < m; ++k)
      if (bits & (std::uint64_t{1} << k)) active.push_back(candidates[k]);
    if (static_cast<Eigen::Index>(active.size()) > dim) continue;

    Eigen::VectorXd y = x;
    Eigen::VectorXd mu;
    if (!active.empty()) {
      Eigen::MatrixXd Aw(active.size(), dim);
      Eigen::VectorXd bw(active.size());
      for (size_t r = 0; r < active.size(); ++r) {
        Aw.row(static_cast<Eigen::Index>(r)) = p.A.row(active[r]);
        bw[static_cast<Eigen::Index>(r)] = p.b[active[r]];
      }
      const Eigen::MatrixXd gram = Aw * Aw.transpose();
      Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
      if (!lu.isInvertible()) continue;  // dependent rows: another subset covers it
      mu = lu.solve(Aw * x - bw);
      y = x - Aw.transpose() * mu;
      // dual feasibility for the inequality members of the working set
      bool dual_ok = true;
      for (size_t r = 0; r < active.size(); ++r)
        if (p.roles[active[r]] == RowRole::Inequality &&
            mu[static_cast<Eigen::Index>(r)] < -tol)
          dual_ok = false;
      if (!dual_ok) continue;
    }
    if (p.violation(y) > tol) continue;  // primal feasibility of every row

    const double dist = (y - x).norm();
    if (dist < best_dist - 1e-14 || !found) {
      best_dist = dist;
      best = y;
      found = true;
    }
  }
  if (!found)
    throw std::runtime_error("enumerate_projection: no KKT point found");
  return best;
}

// ---------------------------------------------------------------------------
// random problem generators

/// Random QoS set guaranteed nonempty: a constant trajectory at `anchor`
/// satisfies every family by construction.
inline flexalloc::LoadQoS random_load(std::mt19937_64& rng, int np,
                                      bool zero_feasible = false) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  flexalloc::LoadQoS q;
  if (zero_feasible) {
    q.d_lo = -0.5 - 2.5 * unit(rng);
    q.d_hi = 0.5 + 5.5 * unit(rng);
  } else {
    q.d_lo = -2.0 + 3.0 * unit(rng);
    q.d_hi = q.d_lo + 0.2 + 4.0 * unit(rng);
  }
  q.r_hi = 0.3 + 1.7 * unit(rng);
  q.r_lo = -(0.3 + 1.7 * unit(rng));
  const double anchor =
      zero_feasible ? 0.0 : q.d_lo + (q.d_hi - q.d_lo) * unit(rng);
  q.e_lo = np * anchor - (0.5 + 4.5 * unit(rng));
  q.e_hi = np * anchor + (0.5 + 4.5 * unit(rng));
  q.zeta = 0.1 + 3.9 * unit(rng);
  q.zeta_bar = 0.1 + 3.9 * unit(rng);
  return q;
}

inline std::vector<flexalloc::LoadQoS> random_fleet(std::mt19937_64& rng,
                                                    int n, int np,
                                                    bool zero_feasible = false) {
  std::vector<flexalloc::LoadQoS> fleet;
  fleet.reserve(n);
  for (int i = 0; i < n; ++i) fleet.push_back(random_load(rng, np, zero_feasible));
  return fleet;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n,
                                     double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

inline flexalloc::ReferenceWindow random_window(std::mt19937_64& rng, int np,
                                                double scale = 1.0) {
  flexalloc::ReferenceWindow w;
  std::normal_distribution<double> gauss(0.0, scale);
  w.s_prev = gauss(rng);
  w.s_future = random_vector(rng, np, scale);
  return w;
}

}  // namespace testsup
