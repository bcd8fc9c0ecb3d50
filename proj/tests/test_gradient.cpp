#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <random>

#include <flexalloc/gradient.hpp>
#include <flexalloc/model.hpp>

#include "support/test_oracles.hpp"

using namespace flexalloc;

namespace {

std::vector<LoadQoS> weights_only(std::initializer_list<double> zetas,
                                  std::initializer_list<double> zeta_bars) {
  std::vector<LoadQoS> fleet;
  auto zb = zeta_bars.begin();
  for (double z : zetas) {
    LoadQoS q;
    q.d_lo = -kInf;
    q.d_hi = kInf;
    q.zeta = z;
    q.zeta_bar = *zb++;
    fleet.push_back(q);
  }
  return fleet;
}

}  // namespace

TEST_CASE("matrix-free Hessian application matches the dense form") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 5);
    const int np = 1 + static_cast<int>(rng() % 3);
    const auto fleet = testsup::random_fleet(rng, n, np);
    const HessianOperator H = assemble_hessian(fleet, np);
    const Eigen::MatrixXd D = H.dense();
    const Eigen::VectorXd v = testsup::random_vector(rng, H.dim());
    CHECK((H.apply(v) - D * v).norm() <= 1e-12 * (1.0 + v.norm()));
    CHECK((H.apply_inverse(H.apply(v)) - v).norm() <= 1e-10 * (1.0 + v.norm()));
    CHECK((D - D.transpose()).norm() == 0.0);
  }
}

TEST_CASE("analytic gradient matches central finite differences") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 5);
    const int np = 1 + static_cast<int>(rng() % 3);
    const auto fleet = testsup::random_fleet(rng, n, np);
    const HessianOperator H = assemble_hessian(fleet, np);
    const Eigen::VectorXd prev = testsup::random_vector(rng, n, 2.0);
    const ReferenceWindow w = testsup::random_window(rng, np, 3.0);
    const Eigen::VectorXd z = testsup::random_vector(rng, H.dim(), 3.0);

    const Eigen::VectorXd g = gradient(H, z, input_vector(prev, w, fleet));
    const Eigen::VectorXd fd = testsup::fd_gradient(fleet, prev, w, z);
    CHECK((g - fd).norm() <= 1e-6 * (1.0 + g.norm()));
  }
}

TEST_CASE("objective equals its quadratic form up to the constant term") {
  std::mt19937_64 rng(19);
  const int n = 3, np = 2;
  const auto fleet = testsup::random_fleet(rng, n, np);
  const HessianOperator H = assemble_hessian(fleet, np);
  const Eigen::VectorXd prev = testsup::random_vector(rng, n);
  const ReferenceWindow w = testsup::random_window(rng, np);
  const InputVector u = input_vector(prev, w, fleet);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(H.dim());
  const double c0 = objective_value(fleet, prev, w, zero);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd z = testsup::random_vector(rng, H.dim(), 2.0);
    const double direct = objective_value(fleet, prev, w, z);
    const double quad = 0.5 * z.dot(H.apply(z)) - u.stacked.dot(z) + c0;
    CHECK(direct == Catch::Approx(quad).margin(1e-9));
  }
}

TEST_CASE("input vector anchors the memory slot to history") {
  const auto fleet = weights_only({1.0, 2.0}, {3.0, 0.5});
  ReferenceWindow w;
  w.s_prev = 4.0;
  w.s_future = Eigen::Vector2d(5.0, 6.0);
  Eigen::VectorXd prev(2);
  prev << 1.5, -2.0;
  const InputVector u = input_vector(prev, w, fleet);
  REQUIRE(u.stacked.size() == 6);
  CHECK(u.block(0)[0] == Catch::Approx(3.0 * 1.5 + 4.0));
  CHECK(u.block(0)[1] == 5.0);
  CHECK(u.block(0)[2] == 6.0);
  CHECK(u.block(1)[0] == Catch::Approx(0.5 * -2.0 + 4.0));
}

TEST_CASE("homogeneous fleet spectrum is known in closed form") {
  const int n = 6, np = 2;
  const double c = 1.7;
  std::vector<LoadQoS> fleet(n);
  for (auto& q : fleet) {
    q.zeta = c;
    q.zeta_bar = c;
  }
  const HessianOperator H = assemble_hessian(fleet, np);
  CHECK(H.spectrum().lambda_min == Catch::Approx(c).margin(1e-9));
  CHECK(H.spectrum().lambda_max == Catch::Approx(c + n).margin(1e-9));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H.dense());
  const Eigen::VectorXd ev = es.eigenvalues();
  // c + N appears N_p+1 times, c fills the rest
  for (Eigen::Index i = 0; i < ev.size() - (np + 1); ++i)
    CHECK(ev[i] == Catch::Approx(c).margin(1e-9));
  for (Eigen::Index i = ev.size() - (np + 1); i < ev.size(); ++i)
    CHECK(ev[i] == Catch::Approx(c + n).margin(1e-9));
}

TEST_CASE("curvature bound dominates the true spectrum") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 8);
    const int np = 1 + static_cast<int>(rng() % 3);
    const auto fleet = testsup::random_fleet(rng, n, np);
    const HessianOperator H = assemble_hessian(fleet, np);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H.dense());
    const double bound = max_curvature(fleet) + n;
    CHECK(es.eigenvalues().maxCoeff() <= bound + 1e-9);
    CHECK(H.spectrum().lambda_max <= bound + 1e-9);
    CHECK(H.spectrum().lambda_min >= es.eigenvalues().minCoeff() - 1e-9);
  }
}

TEST_CASE("shift rotates the plan forward") {
  AugmentedTrajectory t(Eigen::Vector3d(1.0, 2.0, 3.0));
  const AugmentedTrajectory s = shift(t);
  CHECK(s.values[0] == 2.0);
  CHECK(s.values[1] == 3.0);
  CHECK(s.values[2] == 1.0);

  Eigen::VectorXd z(6);
  z << 1, 2, 3, 4, 5, 6;
  const Eigen::VectorXd zs = shift_stacked(z, 2);
  CHECK(zs[0] == 2.0);
  CHECK(zs[2] == 1.0);
  CHECK(zs[3] == 5.0);
  CHECK(zs[5] == 4.0);
}

TEST_CASE("shift commutes with the Hessian exactly when weights agree") {
  std::vector<LoadQoS> same = weights_only({0.7, 2.2, 1.1}, {0.7, 2.2, 1.1});
  CHECK(commutator_norm(assemble_hessian(same, 3)) <= 1e-12);

  std::vector<LoadQoS> differ = weights_only({1.0}, {5.0});
  CHECK(commutator_norm(assemble_hessian(differ, 1)) == Catch::Approx(4.0));
}

TEST_CASE("local gradient blocks reproduce the centralized gradient") {
  std::mt19937_64 rng(41);
  const int n = 4, np = 2;
  const auto fleet = testsup::random_fleet(rng, n, np);
  const HessianOperator H = assemble_hessian(fleet, np);
  const Eigen::VectorXd prev = testsup::random_vector(rng, n);
  const ReferenceWindow w = testsup::random_window(rng, np);
  const Eigen::VectorXd z = testsup::random_vector(rng, H.dim(), 2.0);
  const Eigen::VectorXd g = gradient(H, z, input_vector(prev, w, fleet));

  // the coordinator's broadcast: per-slot aggregate minus the reference
  Eigen::VectorXd agg = Eigen::VectorXd::Zero(np + 1);
  for (int i = 0; i < n; ++i) agg += z.segment(i * (np + 1), np + 1);
  agg -= w.slots();

  for (int i = 0; i < n; ++i) {
    const AugmentedTrajectory traj(z.segment(i * (np + 1), np + 1));
    const Eigen::VectorXd gi = local_gradient(traj, agg, fleet[i], prev[i]);
    CHECK((gi - g.segment(i * (np + 1), np + 1)).norm() <= 1e-12);
  }
}

TEST_CASE("step-size bounds and the contraction factor") {
  const auto fleet = weights_only({3.0, 1.0}, {3.0, 1.0});
  const StepSizeBound b = step_size_bound(fleet, 1);
  CHECK(b.alpha_sufficient == Catch::Approx(1.0 / 5.0));
  // eigenvalues of diag(3,1) + ones: 3 +- sqrt(2)
  CHECK(b.lambda_max == Catch::Approx(3.0 + std::sqrt(2.0)).margin(1e-9));
  CHECK(b.lambda_min == Catch::Approx(3.0 - std::sqrt(2.0)).margin(1e-9));
  CHECK(b.alpha_exact_max == Catch::Approx(1.0 / b.lambda_max));
  CHECK(1.0 / b.alpha_sufficient >= b.lambda_max);

  const HessianOperator H = assemble_hessian(fleet, 1);
  const double alpha = 0.99 * b.alpha_sufficient;
  const double m = contraction_factor(H, alpha);
  CHECK(m == Catch::Approx(std::max(std::abs(1.0 - alpha * b.lambda_min),
                                    std::abs(1.0 - alpha * b.lambda_max))));
  CHECK(m < 1.0);
  CHECK(default_alpha(fleet, 1) == Catch::Approx(alpha));
}

TEST_CASE("memory-slot weight enters the curvature bound") {
  // the memory weight exceeds every planned weight here; ignoring it would
  // understate the curvature and overstate the safe step
  const auto fleet = weights_only({0.5, 0.2}, {6.0, 0.2});
  const StepSizeBound b = step_size_bound(fleet, 2);
  CHECK(b.alpha_sufficient == Catch::Approx(1.0 / 8.0));
  CHECK(b.lambda_max <= 8.0 + 1e-9);
}
