#include "nproj/classical_sim.hpp"
#include "nproj/predictor.hpp"
#include "nproj/rng.hpp"

#include <doctest.h>

#include <cstring>

using namespace nproj;

namespace {

SystemState make_state(std::initializer_list<double> xs, std::initializer_list<int> pinned = {}) {
  SystemState s;
  s.dim = 2;
  s.positions.resize(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double v : xs) s.positions[i++] = v;
  s.pin_mask.assign(static_cast<std::size_t>(s.positions.size() / 2), 0);
  for (int p : pinned) s.pin_mask[static_cast<std::size_t>(p)] = 1;
  return s;
}

ConstraintNet zero_net(int input) {
  NetArch arch;
  arch.widths = {input, 8, 1};
  ConstraintNet net = net_init(arch, 1);
  for (auto& w : net.weights) w.setZero();
  for (auto& b : net.biases) b.setZero();
  return net;
}

}  // namespace

TEST_CASE("linear prediction at rest stays put") {
  const SystemState s = make_state({1, 2, 3, 4});
  const SystemState out = linear_predict(s, s, 0.1, Vector2d(0, 0));
  CHECK((out.positions - s.positions).norm() == 0.0);
}

TEST_CASE("linear prediction extrapolates uniform motion") {
  const SystemState prev = make_state({0, 0});
  const SystemState curr = make_state({1, 0});
  const SystemState out = linear_predict(prev, curr, 0.1, Vector2d(0, 0));
  CHECK(out.positions[0] == 2.0);
  CHECK(out.positions[1] == 0.0);
}

TEST_CASE("gravity contributes g dt^2") {
  const SystemState s = make_state({0, 0});
  const SystemState out = linear_predict(s, s, 0.1, Vector2d(0, -9.8));
  CHECK(out.positions[1] == doctest::Approx(-0.098).epsilon(1e-14));
}

TEST_CASE("pinned particles copy the current frame") {
  const SystemState prev = make_state({0, 0, 0, 0}, {0});
  const SystemState curr = make_state({1, 1, 1, 1}, {0});
  const SystemState out = linear_predict(prev, curr, 0.1, Vector2d(0, -9.8));
  CHECK(out.positions[0] == 1.0);
  CHECK(out.positions[1] == 1.0);
  CHECK(out.positions[2] == 2.0);
}

TEST_CASE("a zero network rolls out as pure extrapolation") {
  const ConstraintNet net = zero_net(4);
  const NetConstraint fn(net);
  RolloutOptions opts;
  const SystemState x0 = make_state({0, 0, 1, 1});
  const SystemState x1 = make_state({0.1, 0, 1.1, 1});
  const RolloutResult result = rollout(fn, x0, x1, 10, opts);
  REQUIRE(result.trajectory.frames.size() == 10);
  for (int f = 0; f < 10; ++f) {
    const double expected = 0.1 * f;
    CHECK(result.trajectory.frames[static_cast<std::size_t>(f)].positions[0] ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("analytic rigid rollout keeps pairwise distances") {
  ScenarioSpec spec = scenario_preset(Scenario::rigid1);
  spec.gravity = Vector2d(0, 0);
  spec.impulse_lo = -0.2;
  spec.impulse_hi = 0.2;
  std::vector<int> all = {0, 1, 2, 3};
  const TrajectoryDataset d = generate_dataset(spec, 1, 3, 5, 0.0, all);

  const AnalyticConstraint fn = analytic_constraint_adapter(spec);
  RolloutOptions opts;
  opts.projection.iterations = 20;
  const RolloutResult result =
      rollout(fn, d.samples[0].frames[0], d.samples[0].frames[1], 50, opts);
  for (const auto& frame : result.trajectory.frames) {
    for (const auto& c : spec.distances) {
      CHECK(std::abs(distance_residual(frame.positions, c)) <= 1e-8);
    }
  }
}

TEST_CASE("rollout is deterministic") {
  NetArch arch;
  arch.widths = {4, 32, 32, 1};
  const ConstraintNet net = net_init(arch, 77);
  const NetConstraint fn(net);
  RolloutOptions opts;
  const SystemState x0 = make_state({0, 0, 1, 0});
  const SystemState x1 = make_state({0.05, 0.01, 1.02, -0.03});
  const RolloutResult a = rollout(fn, x0, x1, 30, opts);
  const RolloutResult b = rollout(fn, x0, x1, 30, opts);
  for (std::size_t f = 0; f < a.trajectory.frames.size(); ++f) {
    CHECK(std::memcmp(a.trajectory.frames[f].positions.data(),
                      b.trajectory.frames[f].positions.data(), 8 * 4) == 0);
  }
}

TEST_CASE("translation-invariant constraints commute with global translation") {
  const ScenarioSpec spec = scenario_preset(Scenario::rigid1);
  const AnalyticConstraint fn = analytic_constraint_adapter(spec);
  RolloutOptions opts;
  opts.projection.iterations = 10;

  const SystemState x0 = make_state({0, 0, 1, 0, 1, 1, 0, 1.1});
  SystemState x1 = x0;
  x1.positions[1] += 0.03;
  x1.positions[4] -= 0.02;

  const Vector2d shift(3.0, -2.0);
  auto translate = [&](SystemState s) {
    for (int p = 0; p < s.particle_count(); ++p) {
      s.positions[2 * p] += shift.x();
      s.positions[2 * p + 1] += shift.y();
    }
    return s;
  };

  const RolloutResult base = rollout(fn, x0, x1, 20, opts);
  const RolloutResult moved = rollout(fn, translate(x0), translate(x1), 20, opts);
  for (std::size_t f = 0; f < base.trajectory.frames.size(); ++f) {
    const SystemState expected = translate(base.trajectory.frames[f]);
    CHECK((moved.trajectory.frames[f].positions - expected.positions)
              .lpNorm<Eigen::Infinity>() <= 1e-9);
  }
}

TEST_CASE("rollout records per-frame traces when asked") {
  const ConstraintNet net = zero_net(4);
  const NetConstraint fn(net);
  RolloutOptions opts;
  opts.record_traces = true;
  opts.projection.iterations = 3;
  const SystemState x0 = make_state({0, 0, 1, 1});
  const RolloutResult result = rollout(fn, x0, x0, 6, opts);
  CHECK(result.traces.size() == 4);  // one per predicted frame
  CHECK(result.traces.front().front().iterations.size() == 3);
}

TEST_CASE("rollout requires at least the two seed frames") {
  const ConstraintNet net = zero_net(4);
  const NetConstraint fn(net);
  RolloutOptions opts;
  const SystemState x0 = make_state({0, 0, 1, 1});
  CHECK_THROWS_AS(rollout(fn, x0, x0, 1, opts), std::invalid_argument);
}
