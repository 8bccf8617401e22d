#include "nproj/classical_sim.hpp"
#include "nproj/rng.hpp"
#include "nproj/training.hpp"

#include <doctest.h>

#include <cstring>

using namespace nproj;

namespace {

TrajectoryDataset synthetic_linear_dataset(int samples, int frames, int particles,
                                           std::uint64_t seed) {
  TrajectoryDataset d;
  d.scenario = Scenario::rigid1;
  Rng rng(seed);
  for (int s = 0; s < samples; ++s) {
    TrajectorySample sample;
    sample.dt = 0.1;
    VectorXd x0(2 * particles), v(2 * particles);
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
      x0[i] = rng.uniform(-1, 1);
      v[i] = rng.uniform(-0.5, 0.5);
    }
    for (int f = 0; f < frames; ++f) {
      SystemState frame;
      frame.dim = 2;
      frame.positions = x0 + f * 0.1 * v;
      frame.pin_mask.assign(static_cast<std::size_t>(particles), 0);
      sample.frames.push_back(std::move(frame));
    }
    d.samples.push_back(std::move(sample));
  }
  d.observation_indices.resize(static_cast<std::size_t>(particles));
  for (int i = 0; i < particles; ++i) d.observation_indices[static_cast<std::size_t>(i)] = i;
  return d;
}

ConstraintNet zero_net(int input) {
  NetArch arch;
  arch.widths = {input, 8, 1};
  ConstraintNet net = net_init(arch, 1);
  for (auto& w : net.weights) w.setZero();
  for (auto& b : net.biases) b.setZero();
  return net;
}

bool nets_equal(const ConstraintNet& a, const ConstraintNet& b) {
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (std::memcmp(a.weights[l].data(), b.weights[l].data(),
                    sizeof(double) * static_cast<std::size_t>(a.weights[l].size())) != 0)
      return false;
    if (std::memcmp(a.biases[l].data(), b.biases[l].data(),
                    sizeof(double) * static_cast<std::size_t>(a.biases[l].size())) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("a 20-frame sample yields 18 triples") {
  const TrajectoryDataset d = synthetic_linear_dataset(1, 20, 4, 1);
  CHECK(make_training_triples(d).size() == 18);
}

TEST_CASE("the full-scale sample count yields 36864 triples") {
  const TrajectoryDataset d = synthetic_linear_dataset(2048, 20, 1, 2);
  CHECK(make_training_triples(d).size() == 2048u * 18u);
}

TEST_CASE("a 3-frame sample yields exactly one triple") {
  const TrajectoryDataset d = synthetic_linear_dataset(2, 3, 4, 3);
  const auto triples = make_training_triples(d);
  CHECK(triples.size() == 2);
  CHECK(triples[0].center_frame == 1);
}

TEST_CASE("triples require at least three frames") {
  TrajectoryDataset d = synthetic_linear_dataset(1, 3, 2, 4);
  for (auto& s : d.samples) s.frames.resize(2);
  CHECK_THROWS_AS(make_training_triples(d), std::invalid_argument);
}

TEST_CASE("loss vanishes for a satisfied predictor on linear data") {
  const TrajectoryDataset d = synthetic_linear_dataset(4, 6, 3, 5);
  const ConstraintNet net = zero_net(6);
  TrainConfig cfg = TrainConfig::preset(Scenario::rigid1);
  cfg.gravity_on = false;
  const auto triples = make_training_triples(d);
  const LossResult result = projection_loss(net, d, triples, cfg, false);
  CHECK(result.loss <= 1e-28);
}

TEST_CASE("zero-iteration ablation reduces the loss to the extrapolation error") {
  ScenarioSpec spec = scenario_preset(Scenario::rigid1);
  spec.impulse_lo = -1;
  spec.impulse_hi = 1;
  const TrajectoryDataset d = generate_dataset(spec, 4, 8, 11, 0.0, {});
  const auto triples = make_training_triples(d);

  const ConstraintNet net = zero_net(8);
  TrainConfig cfg = TrainConfig::preset(Scenario::rigid1);
  cfg.gravity_on = false;
  cfg.projection.iterations = 0;
  const LossResult ablated = projection_loss(net, d, triples, cfg, false);

  // independent hand computation of the extrapolation error
  double expected = 0.0;
  for (const auto& t : triples) {
    const auto& frames = d.samples[static_cast<std::size_t>(t.sample)].frames;
    const VectorXd pred =
        2.0 * frames[static_cast<std::size_t>(t.center_frame)].positions -
        frames[static_cast<std::size_t>(t.center_frame - 1)].positions;
    expected +=
        (pred - frames[static_cast<std::size_t>(t.center_frame + 1)].positions).squaredNorm() /
        8.0;
  }
  expected /= static_cast<double>(triples.size());
  CHECK(ablated.loss == doctest::Approx(expected).epsilon(1e-12));
  CHECK(ablated.loss > 1e-8);  // kicked rigid bodies do not extrapolate exactly
}

TEST_CASE("loss parameter gradients match finite differences") {
  ScenarioSpec spec = scenario_preset(Scenario::rigid1);
  const TrajectoryDataset d = generate_dataset(spec, 2, 5, 21, 0.0, {});
  std::vector<Triple> batch = {{0, 1}, {0, 2}, {1, 3}};

  NetArch arch;
  arch.widths = {8, 16, 16, 1};
  ConstraintNet net = net_init(arch, 31);
  Rng rng(32);
  for (auto& b : net.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(-0.2, 0.2);

  TrainConfig cfg = TrainConfig::preset(Scenario::rigid1);
  cfg.gravity_on = false;
  cfg.projection.iterations = 3;
  const LossResult with_grad = projection_loss(net, d, batch, cfg, true);

  const double h = 1e-6;
  std::vector<double> ad, fd;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    for (int k = 0; k < 8; ++k) {
      const Eigen::Index r =
          static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(net.weights[l].rows())));
      const Eigen::Index c =
          static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(net.weights[l].cols())));
      ConstraintNet up = net, dn = net;
      up.weights[l](r, c) += h;
      dn.weights[l](r, c) -= h;
      ad.push_back(with_grad.grad_w[l](r, c));
      fd.push_back((projection_loss(up, d, batch, cfg, false).loss -
                    projection_loss(dn, d, batch, cfg, false).loss) /
                   (2 * h));
    }
  }
  const Eigen::Map<VectorXd> adv(ad.data(), static_cast<Eigen::Index>(ad.size()));
  const Eigen::Map<VectorXd> fdv(fd.data(), static_cast<Eigen::Index>(fd.size()));
  CHECK((adv - fdv).norm() / std::max(adv.norm(), 1e-12) < 1e-4);
}

TEST_CASE("gradients flow through the inner input-gradient path") {
  // With the recorded backward frozen, the parameter gradient of a projection
  // loss must change: the second-order path carries real signal.
  NetArch arch;
  arch.widths = {4, 12, 1};
  ConstraintNet net = net_init(arch, 41);
  Rng rng(42);
  for (auto& b : net.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(-0.2, 0.2);
  VectorXd x_hat(4), target(4);
  for (int i = 0; i < 4; ++i) {
    x_hat[i] = rng.uniform(-1, 1);
    target[i] = rng.uniform(-1, 1);
  }

  auto run = [&](bool frozen) {
    Tape tape;
    NetVars vars = net_to_tape(tape, net, true);
    Var x = tape.leaf(x_hat);
    NetTapeForward fwd = net_forward_tape(tape, vars, arch, x);
    if (frozen) tape.push_stop_gradient();
    Var g = net_input_grad_tape(tape, vars, arch, fwd);
    if (frozen) tape.pop_stop_gradient();
    Var s = tape.col_dot(g, g);
    Var lambda = tape.ew_div(fwd.output, s);
    Var out = tape.add(x, tape.col_scale(g, tape.scale(lambda, -1.0)));
    Var diff = tape.sub(out, tape.leaf(target));
    Var loss = tape.col_dot(diff, diff);
    tape.backward(loss, Mat::Ones(1, 1));
    std::vector<Mat> gw;
    std::vector<VectorXd> gb;
    collect_param_grads(tape, vars, gw, gb);
    return gw;
  };

  const auto full = run(false);
  const auto frozen = run(true);
  double diff = 0.0;
  for (std::size_t l = 0; l < full.size(); ++l) diff += (full[l] - frozen[l]).norm();
  CHECK(diff > 1e-8);
}

TEST_CASE("a short training run reduces the loss and is reproducible") {
  ScenarioSpec spec = scenario_preset(Scenario::rigid1);
  const TrajectoryDataset d = generate_dataset(spec, 24, 6, 51, 0.0, {});

  TrainConfig cfg = TrainConfig::preset(Scenario::rigid1);
  cfg.gravity_on = false;
  cfg.epochs = 6;
  cfg.batch_size = 32;
  cfg.seed = 3;
  cfg.arch.widths = {8, 32, 32, 1};
  cfg.projection.iterations = 3;
  cfg.threads = 2;

  const TrainResult a = train(d, cfg);
  CHECK(a.log.back().train_loss < a.log.front().train_loss);
  CHECK(a.best_epoch >= 0);

  const TrainResult b = train(d, cfg);
  CHECK(nets_equal(a.net, b.net));

  cfg.threads = 1;
  const TrainResult c = train(d, cfg);
  CHECK(nets_equal(a.net, c.net));  // chunked reduction is thread-count independent
}

TEST_CASE("baseline training reduces the correction loss on linear data") {
  const TrajectoryDataset d = synthetic_linear_dataset(16, 6, 2, 61);
  TrainConfig cfg = TrainConfig::preset(Scenario::rigid1);
  cfg.gravity_on = false;
  cfg.epochs = 150;
  cfg.batch_size = 16;
  cfg.schedule.init_lr = 3e-2;
  cfg.schedule.step_epochs = 50;
  cfg.arch.widths = {4, 16, 16, 4};
  const TrainResult result = train_baseline_mlp(d, cfg);
  CHECK(result.log.back().train_loss < result.log.front().train_loss);
  CHECK(result.best_val_loss < 1e-4);  // the correction needed is exactly zero
}

TEST_CASE("multigroup training shares one module across equal groups") {
  const TrajectoryDataset d = synthetic_linear_dataset(8, 5, 4, 71);
  TrainConfig cfg = TrainConfig::preset(Scenario::rigid1);
  cfg.gravity_on = false;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.arch.widths = {4, 16, 1};

  const GroupPartition shared = GroupPartition::make({{0, 1}, {2, 3}}, {"m", "m"});
  const auto results = train_multigroup(d, shared, cfg);
  REQUIRE(results.size() == 1);
  REQUIRE(results.count("m") == 1);

  // weight sharing = one net trained on both groups' concatenated slices
  TrajectoryDataset concat = slice_dataset(d, {0, 1});
  const TrajectoryDataset second = slice_dataset(d, {2, 3});
  for (const auto& s : second.samples) concat.samples.push_back(s);
  const TrainResult reference = train(concat, cfg);
  CHECK(nets_equal(results.at("m").net, reference.net));
}

TEST_CASE("disjoint modules train independently") {
  const TrajectoryDataset d = synthetic_linear_dataset(8, 5, 4, 81);
  TrainConfig cfg = TrainConfig::preset(Scenario::rigid1);
  cfg.gravity_on = false;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.arch.widths = {4, 16, 1};

  const GroupPartition split = GroupPartition::make({{0, 1}, {2, 3}}, {"a", "b"});
  const auto results = train_multigroup(d, split, cfg);
  REQUIRE(results.size() == 2);

  const TrainResult ra = train(slice_dataset(d, {0, 1}), cfg);
  const TrainResult rb = train(slice_dataset(d, {2, 3}), cfg);
  CHECK(nets_equal(results.at("a").net, ra.net));
  CHECK(nets_equal(results.at("b").net, rb.net));
}

TEST_CASE("train rejects an arch that does not match the data") {
  const TrajectoryDataset d = synthetic_linear_dataset(4, 5, 3, 91);
  TrainConfig cfg = TrainConfig::preset(Scenario::rigid1);
  cfg.arch.widths = {8, 16, 1};  // data is 3 particles * 2 = 6 wide
  cfg.epochs = 1;
  CHECK_THROWS_AS(train(d, cfg), std::invalid_argument);
}

TEST_CASE("samples_limit truncates the dataset") {
  const TrajectoryDataset d = synthetic_linear_dataset(10, 5, 2, 95);
  TrainConfig cfg = TrainConfig::preset(Scenario::rigid1);
  cfg.gravity_on = false;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.arch.widths = {4, 8, 1};
  cfg.samples_limit = 4;
  const TrainResult r = train(d, cfg);
  CHECK(r.log.size() == 1);
}
