#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include <flexalloc/model.hpp>
#include <flexalloc/signals.hpp>

using namespace flexalloc;

namespace {

std::vector<LoadQoS> box_fleet(double lo_kw, double hi_kw, int n) {
  std::vector<LoadQoS> fleet(n);
  for (auto& q : fleet) {
    q.d_lo = lo_kw;
    q.d_hi = hi_kw;
  }
  return fleet;
}

}  // namespace

TEST_CASE("step signal holds each level until the next start tick") {
  const auto sig = step_signal({{0, 2.0}, {3, 5.0}, {4, 1.0}}, 6);
  REQUIRE(sig.size() == 6);
  CHECK(sig.samples[0] == 2.0);
  CHECK(sig.samples[2] == 2.0);
  CHECK(sig.samples[3] == 5.0);
  CHECK(sig.samples[4] == 1.0);
  CHECK(sig.samples[5] == 1.0);

  // ticks before the first level default to zero
  const auto padded = step_signal({{2, 7.0}}, 4);
  CHECK(padded.samples[0] == 0.0);
  CHECK(padded.samples[1] == 0.0);
  CHECK(padded.samples[2] == 7.0);
}

TEST_CASE("step signal validates its level list") {
  CHECK_THROWS_AS(step_signal({{0, 1.0}, {0, 2.0}}, 5), std::invalid_argument);
  CHECK_THROWS_AS(step_signal({{9, 1.0}}, 5), std::invalid_argument);
  CHECK_THROWS_AS(step_signal({{-1, 1.0}}, 5), std::invalid_argument);
}

TEST_CASE("synthetic reference is seeded and deterministic") {
  const auto a = synthetic_brd(5, 300, {6, 96}, 2.5);
  const auto b = synthetic_brd(5, 300, {6, 96}, 2.5);
  const auto c = synthetic_brd(6, 300, {6, 96}, 2.5);
  REQUIRE(a.size() == 300);
  CHECK(a.samples == b.samples);
  CHECK(a.samples != c.samples);
}

TEST_CASE("synthetic reference is zero-mean with the requested peak") {
  const auto sig = synthetic_brd(17, 400, {12, 96}, 3.0);
  CHECK(std::abs(sig.samples.mean()) <= 1e-9);
  CHECK(sig.samples.cwiseAbs().maxCoeff() == Catch::Approx(3.0));
  CHECK_THROWS_AS(synthetic_brd(1, 50, {6, 96}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(synthetic_brd(1, 300, {96, 6}, 1.0), std::invalid_argument);
}

TEST_CASE("csv ingestion resamples onto the tick grid") {
  const std::string path = "test_signals_in.csv";
  {
    std::ofstream out(path);
    out << "minutes,kw\n0,10\n10,20\n20,10\n";
  }
  const auto sig = ingest_csv(path, "minutes", "kw", 5.0);
  REQUIRE(sig.size() == 5);  // 0,5,10,15,20 minutes
  CHECK(sig.samples[0] == 10.0);
  CHECK(sig.samples[1] == Catch::Approx(15.0));
  CHECK(sig.samples[2] == 20.0);
  CHECK(sig.samples[4] == 10.0);

  const auto mw = ingest_csv(path, "minutes", "kw", 5.0, "mw");
  CHECK(mw.samples[0] == Catch::Approx(10000.0));
  std::remove(path.c_str());
}

TEST_CASE("csv ingestion rejects malformed input") {
  const std::string path = "test_signals_bad.csv";
  {
    std::ofstream out(path);
    out << "minutes,kw\n10,1\n5,2\n";  // timestamps not increasing
  }
  CHECK_THROWS_AS(ingest_csv(path, "minutes", "kw", 5.0), std::runtime_error);
  std::remove(path.c_str());
  CHECK_THROWS_AS(ingest_csv("missing.csv", "minutes", "kw", 5.0),
                  std::runtime_error);
}

TEST_CASE("capacity scaling maps the signal into the trackable range") {
  const auto fleet = box_fleet(0.0, 5.0, 10);  // aggregate range [0, 50]
  auto raw = synthetic_brd(3, 300, {6, 48}, 1.0);
  const auto scaled = scale_to_capacity(raw, fleet, 0.8);
  // midpoint 25, half-width 25 * 0.8 = 20
  CHECK(scaled.samples.minCoeff() == Catch::Approx(5.0));
  CHECK(scaled.samples.maxCoeff() == Catch::Approx(45.0));

  const auto banded = scale_to_band(raw, fleet, 0.4, 0.6);
  CHECK(banded.samples.minCoeff() == Catch::Approx(20.0));
  CHECK(banded.samples.maxCoeff() == Catch::Approx(30.0));
}

TEST_CASE("scaling a constant signal falls back to the midpoint") {
  const auto fleet = box_fleet(0.0, 10.0, 4);  // aggregate range [0, 40]
  ReferenceSignal flat;
  flat.samples = Eigen::VectorXd::Constant(20, 3.3);
  const auto scaled = scale_to_capacity(flat, fleet, 0.9);
  CHECK(scaled.samples.minCoeff() == Catch::Approx(20.0));
  CHECK(scaled.samples.maxCoeff() == Catch::Approx(20.0));
  CHECK_FALSE(scaled.note.empty());
}

TEST_CASE("generate_signal dispatches on the spec kind") {
  const auto fleet = box_fleet(0.0, 4.0, 5);  // aggregate range [0, 20]
  SignalSpec spec;
  spec.kind = SignalSpec::Kind::Step;
  spec.step_levels = {{0, 3.0}};
  const auto step = generate_signal(spec, fleet, 10, 5.0, 1);
  CHECK(step.samples[9] == 3.0);

  spec.kind = SignalSpec::Kind::Synthetic;
  spec.amplitude = 1.0;
  spec.min_period = 6;
  spec.max_period = 24;
  spec.scale_to_capacity = true;
  spec.margin = 0.5;
  const auto syn = generate_signal(spec, fleet, 200, 5.0, 9);
  CHECK(syn.samples.minCoeff() >= 5.0 - 1e-9);
  CHECK(syn.samples.maxCoeff() <= 15.0 + 1e-9);

  // band override wins over the margin rule
  spec.band_frac = std::make_pair(0.1, 0.2);
  const auto banded = generate_signal(spec, fleet, 200, 5.0, 9);
  CHECK(banded.samples.minCoeff() == Catch::Approx(2.0));
  CHECK(banded.samples.maxCoeff() == Catch::Approx(4.0));
}

TEST_CASE("signals serialize to CSV") {
  const auto sig = step_signal({{0, 1.5}}, 3);
  std::ostringstream os;
  signal_to_csv(sig, os);
  CHECK(os.str() == "tick,kw\n0,1.5\n1,1.5\n2,1.5\n");
}
