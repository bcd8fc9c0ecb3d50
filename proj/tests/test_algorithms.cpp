#include <catch2/catch_amalgamated.hpp>

#include <random>

#include <flexalloc/algorithms.hpp>
#include <flexalloc/oracle.hpp>

#include "support/test_oracles.hpp"

using namespace flexalloc;

namespace {

LoadQoS box_load(double lo, double hi, double zeta, double zeta_bar) {
  LoadQoS q;
  q.d_lo = lo;
  q.d_hi = hi;
  q.zeta = zeta;
  q.zeta_bar = zeta_bar;
  return q;
}

ReferenceSignal constant_signal(double kw, std::int64_t total) {
  return step_signal({{0, kw}}, total);
}

}  // namespace

TEST_CASE("controller construction seeds a feasible state") {
  const std::vector<LoadQoS> fleet{box_load(0.0, 10.0, 1.0, 1.0),
                                   box_load(2.0, 4.0, 0.5, 0.5)};
  const PrimalController c = make_primal(fleet, 2);
  REQUIRE(c.state.n_loads() == 2);
  for (int i = 0; i < 2; ++i)
    CHECK(c.polytopes[i].violation(c.state.trajectories[i].values) <= 1e-10);
  CHECK(c.state.prev_consumed[1] == Catch::Approx(3.0));  // box midpoint
  CHECK(c.alpha == Catch::Approx(0.99 / (1.0 + 2.0)));
}

TEST_CASE("construction names the offending load when its QoS set is empty") {
  LoadQoS bad = box_load(1.0, 2.0, 1.0, 1.0);
  bad.e_hi = 0.5;  // unreachable window energy
  const std::vector<LoadQoS> fleet{box_load(0.0, 1.0, 1.0, 1.0), bad};
  CHECK_THROWS_WITH(make_primal(fleet, 2),
                    Catch::Matchers::ContainsSubstring("load 1"));
}

TEST_CASE("zero gradient and interior state reduce the tick to a shift") {
  // wide box, zero weights are not allowed, so pick the input that zeroes
  // the gradient instead: u = H z at the current state
  const std::vector<LoadQoS> fleet{box_load(-100.0, 100.0, 1.0, 1.0)};
  PrimalController c = make_primal(fleet, 2);
  c.state.trajectories[0].values = Eigen::Vector3d(1.0, 2.0, 3.0);
  c.state.prev_consumed[0] = 2.0;

  // H = I_3 + diag(1,1,1) = 2 I; gradient vanishes iff u = 2 z
  // u = [zeta_bar * prev + s_prev, s_1, s_2] so s_prev = 2z0 - prev = 0
  ReferenceWindow w;
  w.s_prev = 2.0 * 1.0 - 2.0;
  w.s_future = Eigen::Vector2d(4.0, 6.0);
  const PrimalTickInfo info = primal_tick(c, w);

  CHECK(info.total_kw == Catch::Approx(2.0));  // consumption realized this tick
  const Eigen::Vector3d expect(2.0, 3.0, 1.0);
  CHECK((c.state.trajectories[0].values - expect).norm() <= 1e-12);
  CHECK(c.state.prev_consumed[0] == Catch::Approx(2.0));
}

TEST_CASE("one tick of the single-load chain matches a hand-stepped oracle") {
  // N_p = 1, box [0, 10], everything else wide, zeta = zeta_bar = 1,
  // s_prev = s = 2, previous consumption 0, state z = [0, 1]
  const std::vector<LoadQoS> fleet{box_load(0.0, 10.0, 1.0, 1.0)};
  const double alpha = 0.25;
  PrimalController c = make_primal(fleet, 1, alpha);
  c.state.trajectories[0].values = Eigen::Vector2d(0.0, 1.0);
  c.state.prev_consumed[0] = 0.0;

  ReferenceWindow w;
  w.s_prev = 2.0;
  w.s_future = Eigen::VectorXd::Constant(1, 2.0);
  const PrimalTickInfo info = primal_tick(c, w);

  // by hand: H = 2 I, u = [1*0 + 2, 2] = [2, 2]
  //   grad = H z - u = [-2, 0]
  //   psi  = z - alpha * grad = [2 alpha, 1]
  //   shift(psi) = [1, 2 alpha], interior of the box, projection is identity
  CHECK(info.total_kw == Catch::Approx(1.0));
  CHECK(c.state.trajectories[0].values[0] == Catch::Approx(1.0));
  CHECK(c.state.trajectories[0].values[1] == Catch::Approx(2.0 * alpha));
  CHECK(c.state.prev_consumed[0] == Catch::Approx(1.0));
  CHECK(info.anchor_gap == Catch::Approx(0.0).margin(1e-15));
  CHECK(info.ramp_max == Catch::Approx(1.0));  // consumed 1 after 0
}

TEST_CASE("stationary tick map contracts at the analytic rate") {
  const std::vector<LoadQoS> fleet{box_load(0.0, 6.0, 2.0, 2.0),
                                   box_load(0.0, 4.0, 0.8, 0.8),
                                   box_load(1.0, 3.0, 1.5, 1.5)};
  const int np = 2;
  PrimalController c = make_primal(fleet, np);
  const double m = contraction_factor(c.hessian, c.alpha);
  REQUIRE(m < 1.0);

  // freeze the problem: constant window and a pinned consumption anchor,
  // so every tick applies the same contraction map
  ReferenceWindow w;
  w.s_prev = 7.0;
  w.s_future = Eigen::Vector2d(7.0, 7.0);
  const Eigen::VectorXd anchor = c.state.prev_consumed;

  auto frozen_tick = [&](PrimalController& ctrl) {
    primal_tick(ctrl, w);
    ctrl.state.prev_consumed = anchor;
  };

  for (int t = 0; t < 400; ++t) frozen_tick(c);
  const Eigen::VectorXd fixed_point = c.state.stacked();
  frozen_tick(c);
  REQUIRE((c.state.stacked() - fixed_point).norm() <= 1e-12);

  std::mt19937_64 rng(55);
  PrimalController other = make_primal(fleet, np);
  other.state = EnsembleState::from_stacked(
      fixed_point + testsup::random_vector(rng, fixed_point.size(), 2.0), 3,
      anchor);
  double dist = (other.state.stacked() - fixed_point).norm();
  for (int t = 0; t < 15; ++t) {
    frozen_tick(other);
    const double next = (other.state.stacked() - fixed_point).norm();
    CHECK(next <= m * dist + 1e-12);
    dist = next;
  }
}

TEST_CASE("constant reference settles to the closed-loop stationary point") {
  const std::vector<LoadQoS> fleet{box_load(0.0, 6.0, 2.0, 2.0),
                                   box_load(0.0, 4.0, 0.8, 0.8),
                                   box_load(0.0, 3.0, 1.5, 1.5)};
  PrimalController c = make_primal(fleet, 2);
  const ReferenceSignal sig = constant_signal(7.0, 260);
  const SimTrace trace = run_primal(c, sig, 250);
  REQUIRE(trace.rows.size() == 250);

  // The tick map rotates the trajectory before descending, so its fixed
  // point keeps a small structural offset instead of driving the error to
  // zero.  The settled value is frozen from an independent reimplementation
  // of the recursion.
  CHECK(std::abs(trace.rows[249].err_kw - trace.rows[200].err_kw) <= 1e-9);
  CHECK(trace.rows[249].err_kw == Catch::Approx(1.868433406).epsilon(1e-7));

  const Eigen::VectorXd settled = c.state.stacked();
  primal_tick(c, window_at(sig, 250, 2));
  CHECK((c.state.stacked() - settled).norm() <= 1e-9);

  // monotone decay of |e| once the transient has passed
  for (size_t t = 100; t + 1 < trace.rows.size(); ++t)
    CHECK(std::abs(trace.rows[t + 1].err_kw) <=
          std::abs(trace.rows[t].err_kw) + 1e-12);
}

TEST_CASE("every stored trajectory stays feasible through a varying run") {
  std::mt19937_64 rng(99);
  const auto fleet = testsup::random_fleet(rng, 6, 3, true);
  PrimalController c = make_primal(fleet, 3);
  const ReferenceSignal sig = synthetic_brd(4, 64, {6, 24}, 2.0);

  for (std::int64_t t = 0; t < 60; ++t) {
    primal_tick(c, window_at(sig, t, 3));
    for (size_t i = 0; i < fleet.size(); ++i)
      CHECK(c.polytopes[i].violation(c.state.trajectories[i].values) <= 1e-8);
  }
}

TEST_CASE("zero ticks produce an empty trace") {
  const std::vector<LoadQoS> fleet{box_load(0.0, 5.0, 1.0, 1.0)};
  PrimalController pc = make_primal(fleet, 1);
  const ReferenceSignal sig = constant_signal(1.0, 10);
  CHECK(run_primal(pc, sig, 0).rows.empty());

  DualController dc = make_dual(fleet);
  CHECK(run_dual(dc, sig, 0).rows.empty());

  CHECK_THROWS_AS(run_primal(pc, sig, -1), std::invalid_argument);
  CHECK_THROWS_AS(run_primal(pc, sig, 100), std::invalid_argument);
}

TEST_CASE("worker count does not change the trajectory bytes") {
  std::mt19937_64 rng(123);
  const auto fleet = testsup::random_fleet(rng, 8, 2, true);
  const ReferenceSignal sig = synthetic_brd(8, 64, {6, 24}, 1.5);

  PrimalController serial = make_primal(fleet, 2);
  PrimalController threaded = make_primal(fleet, 2);
  const SimTrace a = run_primal(serial, sig, 50, nullptr, 1);
  const SimTrace b = run_primal(threaded, sig, 50, nullptr, 4);
  REQUIRE(a.rows.size() == b.rows.size());
  for (size_t t = 0; t < a.rows.size(); ++t) {
    CHECK(a.rows[t].total_kw == b.rows[t].total_kw);
    CHECK(a.rows[t].err_kw == b.rows[t].err_kw);
  }
  CHECK((serial.state.stacked() - threaded.state.stacked()).norm() == 0.0);
}

TEST_CASE("dual response clips the price signal to the box") {
  CHECK(dual_response(box_load(0.0, 10.0, 0.5, 0.5), 2.0) ==
        Catch::Approx(4.0));
  CHECK(dual_response(box_load(0.0, 10.0, 0.5, 0.5), 9.0) == 10.0);
  CHECK(dual_response(box_load(1.0, 10.0, 2.0, 2.0), -4.0) == 1.0);
}

TEST_CASE("one dual step follows the multiplier recursion") {
  // lambda = 0, gamma = 0.1, tracking error -5 -> new lambda = -0.5
  DualController c = make_dual({box_load(0.0, 10.0, 0.5, 0.5)}, 0.1);
  const DualTickInfo info = dual_tick(c, -5.0);  // response is 0, so e = -5
  CHECK(info.lambda_used == 0.0);
  CHECK(info.total_kw == 0.0);
  CHECK(c.lambda == Catch::Approx(-0.5));
}

TEST_CASE("sustained infeasibility accumulates the multiplier linearly") {
  // saturated box: every tick adds exactly gamma * (s - capacity)
  DualController c = make_dual({box_load(0.0, 10.0, 1.0, 1.0)}, 0.05, 10.0);
  const double s = 12.0;
  const int ticks = 50;
  for (int t = 0; t < ticks; ++t) {
    const DualTickInfo info = dual_tick(c, s);
    CHECK(info.total_kw == 10.0);  // stays pinned to the box ceiling
  }
  CHECK(c.lambda == Catch::Approx(10.0 + ticks * 0.05 * 2.0).margin(1e-12));
}

TEST_CASE("dual default step is just inside the stability bound") {
  const std::vector<LoadQoS> fleet{box_load(0.0, 10.0, 0.5, 0.5),
                                   box_load(0.0, 10.0, 2.0, 2.0)};
  DualController c = make_dual(fleet);
  CHECK(c.gamma == Catch::Approx(0.99 / (1.0 / 0.5 + 1.0 / 2.0)));
}
