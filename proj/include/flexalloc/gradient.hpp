#pragma once

// The quadratic tracking objective in structured form: constant Hessian,
// per-tick input vector, gradient evaluation, the cyclic shift operator,
// and step-size bounds.
//
// The full objective over the stacked ensemble vector z is
//
//   eta(z) = 1/2 [ sum_{k=1..Np} ( sum_i zeta_i z_i[k]^2
//                                  + (sum_i z_i[k] - s_{t+k-1})^2 )
//                + sum_i zeta_bar_i (z_i[0] - p_i)^2
//                + (sum_i z_i[0] - s_{t-1})^2 ]
//
// with p_i the power load i consumed at the previous tick.  Its Hessian is
// the constant matrix  H = (1 1') (x) I_{Np+1} + blkdiag_i diag(zeta_bar_i,
// zeta_i, ..., zeta_i), and the gradient is H z - u with the input vector u
// defined below.  Only the coordinator's per-slot aggregate errors couple
// the loads, which is what makes the decentralized update possible.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "flexalloc/types.hpp"

namespace flexalloc {

/// Matrix-free Hessian of the tracking objective.  The action on a stacked
/// vector costs one pass for the per-slot load sums plus a diagonal scale;
/// dense materialization is available for tests up to dimension 2000.
class HessianOperator {
 public:
  HessianOperator(Eigen::VectorXd zetas, Eigen::VectorXd zeta_bars,
                  int horizon)
      : zetas_(std::move(zetas)),
        zeta_bars_(std::move(zeta_bars)),
        np_(horizon) {
    if (zetas_.size() == 0 || zetas_.size() != zeta_bars_.size())
      throw std::invalid_argument("HessianOperator: weight size mismatch");
    if (np_ < 1)
      throw std::invalid_argument("HessianOperator: horizon must be >= 1");
    if ((zetas_.array() <= 0.0).any() || (zeta_bars_.array() <= 0.0).any())
      throw std::invalid_argument("HessianOperator: weights must be > 0");
  }

  int n_loads() const { return static_cast<int>(zetas_.size()); }
  int horizon() const { return np_; }
  Eigen::Index dim() const {
    return static_cast<Eigen::Index>(n_loads()) * (np_ + 1);
  }
  const Eigen::VectorXd& zetas() const { return zetas_; }
  const Eigen::VectorXd& zeta_bars() const { return zeta_bars_; }

  /// Diagonal of load i's block: (zeta_bar_i, zeta_i, ..., zeta_i).
  Eigen::VectorXd block_diagonal(int i) const {
    Eigen::VectorXd d = Eigen::VectorXd::Constant(np_ + 1, zetas_[i]);
    d[0] = zeta_bars_[i];
    return d;
  }

  /// H v for a load-major stacked vector.
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    check_size(v);
    const int np1 = np_ + 1;
    Eigen::VectorXd slot_sum = Eigen::VectorXd::Zero(np1);
    for (int i = 0; i < n_loads(); ++i)
      slot_sum += v.segment(static_cast<Eigen::Index>(i) * np1, np1);
    Eigen::VectorXd out(v.size());
    for (int i = 0; i < n_loads(); ++i) {
      auto vi = v.segment(static_cast<Eigen::Index>(i) * np1, np1);
      auto oi = out.segment(static_cast<Eigen::Index>(i) * np1, np1);
      oi = slot_sum + zetas_[i] * vi;
      oi[0] += (zeta_bars_[i] - zetas_[i]) * vi[0];
    }
    return out;
  }

  /// H^-1 v, exact in O(dim) via the rank-(Np+1) update identity: with
  /// H = B + C'C, B block-diagonal and C the slot-wise summation map,
  /// H^-1 = B^-1 - B^-1 C' (I + C B^-1 C')^-1 C B^-1 and C B^-1 C' is
  /// diagonal.
  Eigen::VectorXd apply_inverse(const Eigen::VectorXd& v) const {
    check_size(v);
    const int np1 = np_ + 1;
    Eigen::VectorXd w(v.size());
    Eigen::VectorXd cw = Eigen::VectorXd::Zero(np1);   // C B^-1 v
    Eigen::VectorXd g = Eigen::VectorXd::Zero(np1);    // diag(C B^-1 C')
    for (int i = 0; i < n_loads(); ++i) {
      const Eigen::VectorXd d = block_diagonal(i);
      auto vi = v.segment(static_cast<Eigen::Index>(i) * np1, np1);
      auto wi = w.segment(static_cast<Eigen::Index>(i) * np1, np1);
      wi = vi.cwiseQuotient(d);
      cw += wi;
      g += d.cwiseInverse();
    }
    const Eigen::VectorXd y =
        cw.cwiseQuotient(Eigen::VectorXd::Ones(np1) + g);
    Eigen::VectorXd out(v.size());
    for (int i = 0; i < n_loads(); ++i) {
      const Eigen::VectorXd d = block_diagonal(i);
      auto wi = w.segment(static_cast<Eigen::Index>(i) * np1, np1);
      auto oi = out.segment(static_cast<Eigen::Index>(i) * np1, np1);
      oi = wi - y.cwiseQuotient(d);
    }
    return out;
  }

  /// Explicit matrix, test-only; guarded against accidental large builds.
  Eigen::MatrixXd dense() const {
    if (dim() > 2000)
      throw std::invalid_argument(
          "HessianOperator::dense: materialization capped at dimension 2000");
    const int np1 = np_ + 1;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim(), dim());
    for (int i = 0; i < n_loads(); ++i)
      for (int j = 0; j < n_loads(); ++j)
        H.block(static_cast<Eigen::Index>(i) * np1,
                static_cast<Eigen::Index>(j) * np1, np1, np1) =
            Eigen::MatrixXd::Identity(np1, np1);
    for (int i = 0; i < n_loads(); ++i)
      H.block(static_cast<Eigen::Index>(i) * np1,
              static_cast<Eigen::Index>(i) * np1, np1, np1) +=
          block_diagonal(i).asDiagonal();
    return H;
  }

  struct Spectrum {
    double lambda_min = 0.0;
    double lambda_max = 0.0;
    bool exact = true;  ///< false when estimated iteratively
  };

  /// Extreme eigenvalues.  When zeta_bar = zeta for every load the Hessian
  /// is (1 1' + diag(zeta)) (x) I, so the spectrum reduces to an N x N
  /// symmetric eigenproblem and is exact at any scale.  Otherwise a dense
  /// solve is used up to dimension 2000 and power/inverse iteration beyond.
  const Spectrum& spectrum() const {
    if (spectrum_) return *spectrum_;
    Spectrum sp;
    if (zetas_ == zeta_bars_) {
      Eigen::MatrixXd K =
          Eigen::MatrixXd::Ones(n_loads(), n_loads());
      K += Eigen::MatrixXd(zetas_.asDiagonal());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
      sp.lambda_min = es.eigenvalues().minCoeff();
      sp.lambda_max = es.eigenvalues().maxCoeff();
      sp.exact = true;
    } else if (dim() <= 2000) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense());
      sp.lambda_min = es.eigenvalues().minCoeff();
      sp.lambda_max = es.eigenvalues().maxCoeff();
      sp.exact = true;
    } else {
      sp.lambda_max = extreme_eigenvalue(false);
      sp.lambda_min = extreme_eigenvalue(true);
      sp.exact = false;
    }
    spectrum_ = sp;
    return *spectrum_;
  }

 private:
  void check_size(const Eigen::VectorXd& v) const {
    if (v.size() != dim())
      throw std::invalid_argument("HessianOperator: vector size mismatch");
  }

  /// Power iteration on H (or on H^-1 for the smallest eigenvalue),
  /// deterministic start, relative tolerance 1e-8.
  double extreme_eigenvalue(bool smallest) const {
    Eigen::VectorXd v(dim());
    for (Eigen::Index j = 0; j < dim(); ++j)
      v[j] = 1.0 + static_cast<double>(j % 13) / 13.0;
    v.normalize();
    double prev = 0.0;
    for (int it = 0; it < 20000; ++it) {
      const Eigen::VectorXd w = smallest ? apply_inverse(v) : apply(v);
      const double rayleigh = v.dot(w);
      v = w.normalized();
      if (it > 2 && std::abs(rayleigh - prev) <=
                        1e-8 * std::max(1.0, std::abs(rayleigh))) {
        prev = rayleigh;
        break;
      }
      prev = rayleigh;
    }
    return smallest ? 1.0 / prev : prev;
  }

  Eigen::VectorXd zetas_, zeta_bars_;
  int np_;
  mutable std::optional<Spectrum> spectrum_;
};

inline HessianOperator assemble_hessian(const std::vector<LoadQoS>& fleet,
                                        int horizon) {
  if (fleet.empty())
    throw std::invalid_argument("assemble_hessian: empty fleet");
  Eigen::VectorXd z(fleet.size()), zb(fleet.size());
  for (size_t i = 0; i < fleet.size(); ++i) {
    fleet[i].validate();
    z[i] = fleet[i].zeta;
    zb[i] = fleet[i].zeta_bar;
  }
  return HessianOperator(std::move(z), std::move(zb), horizon);
}

/// Per-tick linear term of the objective.  Block i is
///   u_i = [ zeta_bar_i * p_i + s_{t-1},  s_t, ..., s_{t+Np-1} ]
/// with p_i the power load i consumed at the previous tick.  The memory
/// entry carries the zeta_bar factor that differentiating the memory
/// penalty produces; gradient(H, z, u) = H z - u holds exactly with this
/// form (finite-difference verified).
struct InputVector {
  Eigen::VectorXd stacked;
  int n_loads = 0;
  int horizon = 0;

  Eigen::VectorBlock<const Eigen::VectorXd> block(int i) const {
    return stacked.segment(static_cast<Eigen::Index>(i) * (horizon + 1),
                           horizon + 1);
  }
};

inline InputVector input_vector(const Eigen::VectorXd& prev_consumed,
                                const ReferenceWindow& ref,
                                const std::vector<LoadQoS>& fleet) {
  const int n = static_cast<int>(fleet.size());
  if (prev_consumed.size() != n)
    throw std::invalid_argument("input_vector: prev_consumed size mismatch");
  const int np = ref.horizon();
  if (np < 1) throw std::invalid_argument("input_vector: empty window");
  InputVector u;
  u.n_loads = n;
  u.horizon = np;
  u.stacked.resize(static_cast<Eigen::Index>(n) * (np + 1));
  for (int i = 0; i < n; ++i) {
    auto ui = u.stacked.segment(static_cast<Eigen::Index>(i) * (np + 1), np + 1);
    ui[0] = fleet[i].zeta_bar * prev_consumed[i] + ref.s_prev;
    ui.tail(np) = ref.s_future;
  }
  return u;
}

/// Full gradient H z - u on the stacked ensemble vector.
inline Eigen::VectorXd gradient(const HessianOperator& H,
                                const Eigen::VectorXd& z,
                                const InputVector& u) {
  if (u.stacked.size() != H.dim())
    throw std::invalid_argument("gradient: input vector size mismatch");
  return H.apply(z) - u.stacked;
}

inline Eigen::VectorXd gradient(const HessianOperator& H,
                                const EnsembleState& state,
                                const InputVector& u) {
  return gradient(H, state.stacked(), u);
}

/// Load-local gradient block from the coordinator broadcast:
///   agg_err[k] = sum_j z_j[k] - s(k)   for slots k = 0..Np.
/// Equals the matching block of gradient(H, z, u); this is the only
/// cross-load information a load needs per tick.
inline Eigen::VectorXd local_gradient(const AugmentedTrajectory& traj,
                                      const Eigen::VectorXd& agg_err,
                                      const LoadQoS& q, double prev_i) {
  const int np1 = static_cast<int>(traj.values.size());
  if (agg_err.size() != np1)
    throw std::invalid_argument("local_gradient: aggregate size mismatch");
  Eigen::VectorXd g = q.zeta * traj.values + agg_err;
  g[0] += (q.zeta_bar - q.zeta) * traj.values[0] - q.zeta_bar * prev_i;
  return g;
}

// ---------------------------------------------------------------------------
// shift operator

/// Cyclic left rotation of one trajectory: [a, b, ..., c] -> [b, ..., c, a].
/// Slot k+1 moves to slot k and the memory slot wraps to the last planned
/// slot; applying it Np+1 times is the identity.
inline AugmentedTrajectory shift(const AugmentedTrajectory& traj) {
  AugmentedTrajectory out;
  const Eigen::Index n = traj.values.size();
  out.values.resize(n);
  out.values.head(n - 1) = traj.values.tail(n - 1);
  out.values[n - 1] = traj.values[0];
  return out;
}

/// Ensemble form: the rotation applied block-wise to a stacked vector.
inline Eigen::VectorXd shift_stacked(const Eigen::VectorXd& z, int n_loads) {
  if (n_loads < 1 || z.size() % n_loads != 0)
    throw std::invalid_argument("shift_stacked: size mismatch");
  const Eigen::Index np1 = z.size() / n_loads;
  Eigen::VectorXd out(z.size());
  for (int i = 0; i < n_loads; ++i) {
    auto zi = z.segment(static_cast<Eigen::Index>(i) * np1, np1);
    auto oi = out.segment(static_cast<Eigen::Index>(i) * np1, np1);
    oi.head(np1 - 1) = zi.tail(np1 - 1);
    oi[np1 - 1] = zi[0];
  }
  return out;
}

// ---------------------------------------------------------------------------
// step sizes and related constants

struct StepSizeBound {
  double alpha_sufficient = 0.0;  ///< 1 / (max curvature weight + N)
  double alpha_exact_max = 0.0;   ///< 1 / lambda_max(H)
  double lambda_min = 0.0;
  double lambda_max = 0.0;
};

/// Step-size bounds for the projected-gradient controller.
///
/// alpha_sufficient uses the largest curvature weight across *both* the
/// planned-slot and memory-slot weights; with zeta_bar = zeta this is the
/// usual 1/(zeta_max + N) rule, and taking the max keeps the contraction
/// guarantee valid for zeta_bar > zeta as well (Gershgorin row bound).
inline StepSizeBound step_size_bound(const std::vector<LoadQoS>& fleet,
                                     int horizon) {
  const HessianOperator H = assemble_hessian(fleet, horizon);
  double wmax = 0.0;
  for (const auto& q : fleet) wmax = std::max({wmax, q.zeta, q.zeta_bar});
  StepSizeBound b;
  b.alpha_sufficient = 1.0 / (wmax + static_cast<double>(fleet.size()));
  const auto& sp = H.spectrum();
  b.lambda_min = sp.lambda_min;
  b.lambda_max = sp.lambda_max;
  b.alpha_exact_max = 1.0 / sp.lambda_max;
  return b;
}

/// Contraction factor M(alpha) = ||I - alpha H|| = max |1 - alpha lambda|.
inline double contraction_factor(const HessianOperator& H, double alpha) {
  const auto& sp = H.spectrum();
  return std::max(std::abs(1.0 - alpha * sp.lambda_min),
                  std::abs(1.0 - alpha * sp.lambda_max));
}

/// Default primal step: 0.99 of the sufficient bound.
inline double default_alpha(const std::vector<LoadQoS>& fleet, int horizon) {
  return 0.99 * step_size_bound(fleet, horizon).alpha_sufficient;
}

/// Spectral norm of P H - H P where P is the ensemble shift.  Zero exactly
/// when zeta_bar = zeta for every load; the shift then commutes with the
/// Hessian and warm starts inherit the contraction. Dense computation,
/// test-scale only.
inline double commutator_norm(const HessianOperator& H) {
  const Eigen::MatrixXd Hd = H.dense();
  const int np1 = H.horizon() + 1;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(Hd.rows(), Hd.cols());
  for (int i = 0; i < H.n_loads(); ++i) {
    const Eigen::Index off = static_cast<Eigen::Index>(i) * np1;
    for (int k = 0; k + 1 < np1; ++k) P(off + k, off + k + 1) = 1.0;
    P(off + np1 - 1, off) = 1.0;
  }
  const Eigen::MatrixXd C = P * Hd - Hd * P;
  return C.bdcSvd().singularValues()(0);
}

// ---------------------------------------------------------------------------
// scalar objective (direct summation form)

/// eta(z) evaluated from the definition, independent of the Hessian/input
/// assembly; used by optimality checks and the finite-difference tests.
inline double objective_value(const std::vector<LoadQoS>& fleet,
                              const Eigen::VectorXd& prev_consumed,
                              const ReferenceWindow& ref,
                              const Eigen::VectorXd& z) {
  const int n = static_cast<int>(fleet.size());
  const int np = ref.horizon();
  const int np1 = np + 1;
  if (z.size() != static_cast<Eigen::Index>(n) * np1)
    throw std::invalid_argument("objective_value: size mismatch");
  const Eigen::VectorXd s = ref.slots();
  double acc = 0.0;
  for (int k = 0; k < np1; ++k) {
    double slot_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double zik = z[static_cast<Eigen::Index>(i) * np1 + k];
      slot_sum += zik;
      if (k == 0) {
        const double dev = zik - prev_consumed[i];
        acc += fleet[i].zeta_bar * dev * dev;
      } else {
        acc += fleet[i].zeta * zik * zik;
      }
    }
    const double err = slot_sum - s[k];
    acc += err * err;
  }
  return 0.5 * acc;
}

}  // namespace flexalloc
