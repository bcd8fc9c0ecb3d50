#pragma once

// Dense dual active-set solver for small strictly convex QPs
//
//   min  1/2 y' diag(q) y  -  c' y
//   s.t. A y <= b            (rows may be marked Equality or Skip)
//
// The method starts from the unconstrained minimizer (always dual feasible)
// and adds one violated constraint at a time, taking full or partial steps
// and dropping blocking constraints, until primal feasibility is reached.
// It terminates in finitely many steps and detects infeasible systems
// exactly (dual ray found).  All instances here are tiny (dimension
// N_p+1 <= ~50, a few hundred rows), so the working-set system is refactored
// from scratch each step.
//
// Determinism: the most violated row wins, exact ties go to the lowest row
// index; partial-step blocking ties also go to the lowest index.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "flexalloc/types.hpp"

namespace flexalloc {

enum class RowRole {
  Inequality,  ///< a'y <= b with multiplier >= 0
  Equality,    ///< a'y  = b, unrestricted multiplier, never dropped
  Skip         ///< row ignored by the solver (e.g. redundant twin of an equality)
};

enum class QpStatus { Converged, IterationLimit, Infeasible };

struct QpOptions {
  double feas_tol = 1e-10;  ///< constraint violation treated as zero
  double dep_tol = 1e-12;   ///< row treated as dependent on the working set
  int max_iter = 0;         ///< 0 = automatic (scales with problem size)
};

struct QpResult {
  Eigen::VectorXd x;     ///< primal point (best iterate on failure)
  Eigen::VectorXd mu;    ///< full-length multipliers, zero off the active set
  std::vector<int> active;  ///< working set at termination, ascending
  int iterations = 0;
  double kkt_residual = std::numeric_limits<double>::infinity();
  QpStatus status = QpStatus::IterationLimit;
};

namespace detail {

/// Max violation of the non-skipped rows; rows with b = +inf never violate.
inline double max_violation(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                            const std::vector<RowRole>& roles,
                            const Eigen::VectorXd& x) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < A.rows(); ++j) {
    if (roles[j] == RowRole::Skip || std::isinf(b[j])) continue;
    const double g = A.row(j).dot(x) - b[j];
    const double v = roles[j] == RowRole::Equality ? std::abs(g) : g;
    if (v > worst) worst = v;
  }
  return worst;
}

inline double kkt_residual(const Eigen::VectorXd& q, const Eigen::VectorXd& c,
                           const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                           const std::vector<RowRole>& roles,
                           const Eigen::VectorXd& x,
                           const Eigen::VectorXd& mu) {
  const Eigen::VectorXd stat =
      q.cwiseProduct(x) - c + A.transpose() * mu;
  double res = stat.lpNorm<Eigen::Infinity>();
  res = std::max(res, max_violation(A, b, roles, x));
  for (Eigen::Index j = 0; j < A.rows(); ++j) {
    if (mu[j] == 0.0 || roles[j] == RowRole::Equality) continue;
    res = std::max(res, std::abs(mu[j] * (A.row(j).dot(x) - b[j])));
  }
  return res;
}

}  // namespace detail

/// Solves the equality-constrained problem min 1/2 y'diag(q)y - c'y subject
/// to A(rows W) y = b(rows W).  No feasibility or sign checks are performed;
/// callers use this for warm starts and final tightening.
inline QpResult solve_eqp(const Eigen::VectorXd& q, const Eigen::VectorXd& c,
                          const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                          const std::vector<int>& working_set) {
  QpResult res;
  res.active = working_set;
  const Eigen::VectorXd qinv = q.cwiseInverse();
  res.mu = Eigen::VectorXd::Zero(A.rows());
  if (working_set.empty()) {
    res.x = qinv.cwiseProduct(c);
    res.status = QpStatus::Converged;
    return res;
  }
  const int k = static_cast<int>(working_set.size());
  Eigen::MatrixXd Aw(k, A.cols());
  Eigen::VectorXd bw(k);
  for (int i = 0; i < k; ++i) {
    Aw.row(i) = A.row(working_set[i]);
    bw[i] = b[working_set[i]];
  }
  // S mu_w = Aw q^-1 c - bw;  x = q^-1 (c - Aw' mu_w)
  const Eigen::MatrixXd S =
      Aw * qinv.asDiagonal() * Aw.transpose();
  const Eigen::VectorXd rhs = Aw * qinv.cwiseProduct(c) - bw;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  if (ldlt.info() != Eigen::Success) {
    res.status = QpStatus::IterationLimit;  // degenerate working set
    res.x = qinv.cwiseProduct(c);
    return res;
  }
  const Eigen::VectorXd mu_w = ldlt.solve(rhs);
  res.x = qinv.cwiseProduct(c - Aw.transpose() * mu_w);
  for (int i = 0; i < k; ++i) res.mu[working_set[i]] = mu_w[i];
  res.status = QpStatus::Converged;
  return res;
}

/// Dual active-set solve.  `roles` marks each row; pass an empty vector for
/// all-inequality systems.  Infinite b entries (+inf) are legal and inert.
inline QpResult solve_qp(const Eigen::VectorXd& q, const Eigen::VectorXd& c,
                         const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                         std::vector<RowRole> roles = {},
                         const QpOptions& opt = {}) {
  const Eigen::Index n = q.size();
  const Eigen::Index m = A.rows();
  if (A.cols() != n || c.size() != n || b.size() != m)
    throw std::invalid_argument("solve_qp: dimension mismatch");
  if ((q.array() <= 0.0).any())
    throw std::invalid_argument("solve_qp: q must be strictly positive");
  if (roles.empty()) roles.assign(m, RowRole::Inequality);
  if (static_cast<Eigen::Index>(roles.size()) != m)
    throw std::invalid_argument("solve_qp: roles size mismatch");

  QpResult res;
  const Eigen::VectorXd qinv = q.cwiseInverse();
  Eigen::VectorXd x = qinv.cwiseProduct(c);  // unconstrained minimizer
  res.mu = Eigen::VectorXd::Zero(m);
  std::vector<int> W;           // working set
  std::vector<double> mu_w;     // multipliers aligned with W
  const int max_iter =
      opt.max_iter > 0 ? opt.max_iter
                       : 200 + 30 * static_cast<int>(m + n);

  for (Eigen::Index j = 0; j < m; ++j)
    if (roles[j] != RowRole::Skip && b[j] == -kInf) {
      res.status = QpStatus::Infeasible;
      res.x = x;
      res.kkt_residual = detail::kkt_residual(q, c, A, b, roles, x, res.mu);
      return res;
    }

  auto finish = [&](QpStatus st) {
    res.x = x;
    res.mu.setZero();
    for (size_t i = 0; i < W.size(); ++i) res.mu[W[i]] = mu_w[i];
    res.kkt_residual = detail::kkt_residual(q, c, A, b, roles, res.x, res.mu);
    if (st == QpStatus::Converged && !W.empty()) {
      // one exact re-solve of the terminal working set removes accumulated
      // drift; keep it only when it actually improves the KKT residual
      QpResult tight = solve_eqp(q, c, A, b, W);
      if (tight.status == QpStatus::Converged) {
        const double rt =
            detail::kkt_residual(q, c, A, b, roles, tight.x, tight.mu);
        if (rt < res.kkt_residual) {
          res.x = tight.x;
          res.mu = tight.mu;
          res.kkt_residual = rt;
        }
      }
    }
    res.active = W;
    std::sort(res.active.begin(), res.active.end());
    res.status = st;
    return res;
  };

  // Queue: equality rows first (in index order), then repeated scans for the
  // most violated inequality.
  std::vector<int> pending_eq;
  for (Eigen::Index j = 0; j < m; ++j)
    if (roles[j] == RowRole::Equality) pending_eq.push_back(static_cast<int>(j));
  size_t eq_cursor = 0;

  int iter = 0;
  while (true) {
    // --- select the next row to enforce -----------------------------------
    int v = -1;
    double sigma = 1.0;  // +1: decrease a'x toward b, -1: increase
    if (eq_cursor < pending_eq.size()) {
      v = pending_eq[eq_cursor++];
      const double g = A.row(v).dot(x) - b[v];
      sigma = g >= 0.0 ? 1.0 : -1.0;
    } else {
      double worst = opt.feas_tol;
      for (Eigen::Index j = 0; j < m; ++j) {
        if (roles[j] != RowRole::Inequality || std::isinf(b[j])) continue;
        const double g = A.row(j).dot(x) - b[j];
        if (g > worst) {
          worst = g;
          v = static_cast<int>(j);
        }
      }
      if (v < 0) return finish(QpStatus::Converged);
      sigma = 1.0;
    }

    const Eigen::VectorXd a_v = sigma * A.row(v).transpose();
    double mu_v = 0.0;  // multiplier of the incoming row, in sigma units

    // --- inner loop: step toward the new face, dropping blockers ----------
    while (true) {
      if (++iter > max_iter) return finish(QpStatus::IterationLimit);

      const int k = static_cast<int>(W.size());
      Eigen::VectorXd r(k), z(n);
      const Eigen::VectorXd qinv_av = qinv.cwiseProduct(a_v);
      if (k == 0) {
        z = qinv_av;
      } else {
        Eigen::MatrixXd Aw(k, n);
        for (int i = 0; i < k; ++i) Aw.row(i) = A.row(W[i]);
        const Eigen::MatrixXd S = Aw * qinv.asDiagonal() * Aw.transpose();
        r = Eigen::LDLT<Eigen::MatrixXd>(S).solve(Aw * qinv_av);
        z = qinv_av - qinv.cwiseProduct(Aw.transpose() * r);
      }

      const double denom = a_v.dot(z);  // = a_v' H a_v >= 0
      const double dep_scale = opt.dep_tol * (1.0 + a_v.dot(qinv_av));
      const bool dependent = denom <= dep_scale;

      const double gap = a_v.dot(x) - sigma * b[v];  // signed violation >= ~0
      double t_full = std::numeric_limits<double>::infinity();
      if (!dependent) t_full = gap / denom;

      // blocking constraints: inequality rows whose multiplier would cross 0
      double t_block = std::numeric_limits<double>::infinity();
      int drop = -1;
      for (int i = 0; i < k; ++i) {
        if (roles[W[i]] != RowRole::Inequality) continue;
        if (r[i] > 0.0) {
          const double t = mu_w[i] / r[i];
          if (t < t_block) {
            t_block = t;
            drop = i;
          }
        }
      }

      if (dependent && drop < 0) {
        // no primal direction and no dual room: row v cannot be satisfied
        if (gap <= opt.feas_tol) {
          // redundant row, already satisfied: skip it (common for the
          // energy row when all power rows are pinned)
          break;
        }
        return finish(QpStatus::Infeasible);
      }

      const double t = std::min(t_full, t_block);
      if (!dependent) x -= t * z;
      for (int i = 0; i < k; ++i) mu_w[i] -= t * r[i];
      mu_v += t;

      if (t_block < t_full) {
        W.erase(W.begin() + drop);
        mu_w.erase(mu_w.begin() + drop);
        continue;  // same v, reduced working set
      }
      // full step: v joins the working set
      W.push_back(v);
      mu_w.push_back(sigma * mu_v);
      break;
    }
  }
}

/// Inverse of diag(q) restricted to the nullspace of the active rows:
/// returns the n x n matrix P with P = q^-1 (I - A_act' S^-1 A_act q^-1),
/// i.e. the sensitivity dy*/dc of the equality-constrained minimizer.
inline Eigen::MatrixXd constrained_inverse(const Eigen::VectorXd& q,
                                           const Eigen::MatrixXd& A,
                                           const std::vector<int>& active) {
  const Eigen::Index n = q.size();
  const Eigen::VectorXd qinv = q.cwiseInverse();
  Eigen::MatrixXd P = qinv.asDiagonal();
  if (active.empty()) return P;
  const int k = static_cast<int>(active.size());
  Eigen::MatrixXd Aw(k, n);
  for (int i = 0; i < k; ++i) Aw.row(i) = A.row(active[i]);
  const Eigen::MatrixXd S = Aw * qinv.asDiagonal() * Aw.transpose();
  const Eigen::MatrixXd AwQ = Aw * qinv.asDiagonal();
  P -= AwQ.transpose() *
       Eigen::LDLT<Eigen::MatrixXd>(S).solve(AwQ);
  return P;
}

}  // namespace flexalloc
