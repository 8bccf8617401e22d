#include "nproj/net.hpp"
#include "nproj/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>

using namespace nproj;

namespace {

NetArch arch_of(std::vector<int> widths, double slope = 0.01) {
  NetArch a;
  a.widths = std::move(widths);
  a.lrelu_slope = slope;
  return a;
}

ConstraintNet random_net(const NetArch& arch, std::uint64_t seed) {
  ConstraintNet net = net_init(arch, seed);
  // shake the biases too so nothing degenerate survives
  Rng rng(seed ^ 0xb1a5);
  for (auto& b : net.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(-0.3, 0.3);
  }
  return net;
}

VectorXd random_vec(int n, Rng& rng, double lo = -1.5, double hi = 1.5) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

double fd_rel_error(const VectorXd& analytic, const VectorXd& numeric) {
  const double denom = std::max(analytic.norm(), 1e-12);
  return (analytic - numeric).norm() / denom;
}

}  // namespace

TEST_CASE("zero-weight network returns its output bias") {
  ConstraintNet net = net_init(arch_of({3, 4, 1}), 1);
  for (auto& w : net.weights) w.setZero();
  net.biases[1][0] = 2.5;
  Rng rng(9);
  for (int k = 0; k < 5; ++k) {
    CHECK(net_forward(net, random_vec(3, rng)) == 2.5);
  }
}

TEST_CASE("single linear layer passes its input through") {
  ConstraintNet net = net_init(arch_of({1, 1}, 1.0), 1);
  net.weights[0](0, 0) = 1.0;
  net.biases[0][0] = 0.0;
  VectorXd x(1);
  x << 3.0;
  CHECK(net_forward(net, x) == 3.0);
}

TEST_CASE("forward pass matches an independent matrix-chain recomputation") {
  const NetArch arch = arch_of({4, 8, 6, 1});
  const ConstraintNet net = random_net(arch, 3);
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const VectorXd x = random_vec(4, rng);
    // plain recomputation, written independently of the library path
    VectorXd a = x;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      VectorXd z = net.weights[l] * a + net.biases[l];
      if (l + 1 < net.weights.size()) {
        for (Eigen::Index i = 0; i < z.size(); ++i) {
          if (z[i] < 0) z[i] *= arch.lrelu_slope;
        }
      }
      a = z;
    }
    CHECK(std::abs(net_forward(net, x) - a[0]) <= 1e-15);
  }
}

TEST_CASE("input gradient of a zero network is zero") {
  ConstraintNet net = net_init(arch_of({3, 4, 1}), 1);
  for (auto& w : net.weights) w.setZero();
  VectorXd grad;
  net_value_and_input_grad(net, VectorXd::Ones(3), grad);
  CHECK(grad.isZero(0.0));
}

TEST_CASE("linear network input gradient is the weight row") {
  ConstraintNet net = net_init(arch_of({5, 1}), 2);
  VectorXd grad;
  Rng rng(5);
  const VectorXd x = random_vec(5, rng);
  net_value_and_input_grad(net, x, grad);
  CHECK((grad.transpose() - net.weights[0].row(0)).norm() == 0.0);
}

TEST_CASE("input gradients match central finite differences") {
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    const int in = 2 + static_cast<int>(rng.below(10));
    const int hidden = 4 + static_cast<int>(rng.below(61));  // widths up to 64
    const NetArch arch = arch_of({in, hidden, hidden, 1});
    const ConstraintNet net = random_net(arch, 1000 + static_cast<std::uint64_t>(trial));
    const VectorXd x = random_vec(in, rng);

    VectorXd grad;
    net_value_and_input_grad(net, x, grad);

    const double h = 1e-6;
    VectorXd fd(in);
    for (int i = 0; i < in; ++i) {
      VectorXd xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      fd[i] = (net_forward(net, xp) - net_forward(net, xm)) / (2 * h);
    }
    CHECK(fd_rel_error(grad, fd) < 1e-6);
  }
}

TEST_CASE("tape forward and input gradient agree with the plain path") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const NetArch arch = arch_of({6, 16, 16, 1});
    const ConstraintNet net = random_net(arch, 50 + static_cast<std::uint64_t>(trial));
    const VectorXd x = random_vec(6, rng);

    Tape tape;
    NetVars vars = net_to_tape(tape, net, false);
    Var xv = tape.leaf(x);
    NetTapeForward fwd = net_forward_tape(tape, vars, arch, xv);
    Var g = net_input_grad_tape(tape, vars, arch, fwd);

    VectorXd plain_grad;
    const double plain_value = net_value_and_input_grad(net, x, plain_grad);
    CHECK(std::abs(tape.value(fwd.output)(0, 0) - plain_value) <= 1e-15);
    CHECK((VectorXd(tape.value(g).col(0)) - plain_grad).norm() <= 1e-14);
  }
}

TEST_CASE("gradient-norm loss on a linear net differentiates to 2w") {
  // C(x) = w.x + b, loss = |grad C|^2 = |w|^2, so dloss/dw = 2w exactly.
  ConstraintNet net = net_init(arch_of({4, 1}), 3);
  Tape tape;
  NetVars vars = net_to_tape(tape, net, true);
  Var x = tape.leaf(VectorXd::Ones(4));
  NetTapeForward fwd = net_forward_tape(tape, vars, net.arch, x);
  Var g = net_input_grad_tape(tape, vars, net.arch, fwd);
  Var loss = tape.col_dot(g, g);
  tape.backward(loss, Mat::Ones(1, 1));
  const Mat dw = tape.grad(vars.weights[0]);
  CHECK((dw - 2.0 * net.weights[0]).norm() <= 1e-14);
}

TEST_CASE("double-backward is consistent with first-order on C^2") {
  const NetArch arch = arch_of({5, 12, 12, 1});
  const ConstraintNet net = random_net(arch, 11);
  Rng rng(12);
  const VectorXd x = random_vec(5, rng);

  // route A: loss = C^2 via ew_mul of forward with itself
  Tape ta;
  NetVars va = net_to_tape(ta, net, true);
  NetTapeForward fa = net_forward_tape(ta, va, arch, ta.leaf(x));
  Var la = ta.ew_mul(fa.output, fa.output);
  ta.backward(la, Mat::Ones(1, 1));

  // route B: d(C^2)/dtheta = 2*C*dC/dtheta via a plain backward seeded with 2C
  Tape tb;
  NetVars vb = net_to_tape(tb, net, true);
  NetTapeForward fb = net_forward_tape(tb, vb, arch, tb.leaf(x));
  tb.backward(fb.output, Mat::Constant(1, 1, 2.0 * tb.value(fb.output)(0, 0)));

  for (std::size_t l = 0; l < va.weights.size(); ++l) {
    CHECK((ta.grad(va.weights[l]) - tb.grad(vb.weights[l])).norm() <= 1e-12);
    CHECK((ta.grad(va.biases[l]) - tb.grad(vb.biases[l])).norm() <= 1e-12);
  }
}

namespace {

/// Loss through one guarded fast-projection step, used for parameter FD checks.
double projection_step_loss(const ConstraintNet& net, const VectorXd& x_hat,
                            const VectorXd& target, int iterations) {
  VectorXd x = x_hat;
  for (int i = 0; i < iterations; ++i) {
    VectorXd grad;
    const double value = net_value_and_input_grad(net, x, grad);
    const double s = grad.squaredNorm();
    if (s < 1e-12) continue;
    x += -(value / s) * grad;
  }
  return (x - target).squaredNorm();
}

}  // namespace

TEST_CASE("parameter gradients through the projection match finite differences") {
  Rng rng(21);
  for (int trial = 0; trial < 6; ++trial) {
    const int in = 4 + 2 * static_cast<int>(rng.below(3));
    const NetArch arch = arch_of({in, 16, 16, 1});
    const ConstraintNet net = random_net(arch, 300 + static_cast<std::uint64_t>(trial));
    const VectorXd x_hat = random_vec(in, rng);
    const VectorXd target = random_vec(in, rng);
    const int iterations = 1 + static_cast<int>(rng.below(3));

    // tape gradient
    Tape tape;
    NetVars vars = net_to_tape(tape, net, true);
    Var x = tape.leaf(x_hat);
    for (int i = 0; i < iterations; ++i) {
      NetTapeForward fwd = net_forward_tape(tape, vars, arch, x);
      Var g = net_input_grad_tape(tape, vars, arch, fwd);
      Var s = tape.col_dot(g, g);
      REQUIRE(tape.value(s)(0, 0) >= 1e-12);
      Var lambda = tape.ew_div(fwd.output, s);
      x = tape.add(x, tape.col_scale(g, tape.scale(lambda, -1.0)));
    }
    Var diff = tape.sub(x, tape.leaf(target));
    Var loss = tape.col_dot(diff, diff);
    tape.backward(loss, Mat::Ones(1, 1));

    std::vector<Mat> grad_w;
    std::vector<VectorXd> grad_b;
    collect_param_grads(tape, vars, grad_w, grad_b);

    // finite differences over a deterministic sample of parameters
    const double h = 1e-6;
    std::vector<double> ad, fd;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      for (int k = 0; k < 6; ++k) {
        const Eigen::Index r = static_cast<Eigen::Index>(rng.below(
            static_cast<std::uint64_t>(net.weights[l].rows())));
        const Eigen::Index c = static_cast<Eigen::Index>(rng.below(
            static_cast<std::uint64_t>(net.weights[l].cols())));
        ConstraintNet up = net, dn = net;
        up.weights[l](r, c) += h;
        dn.weights[l](r, c) -= h;
        ad.push_back(grad_w[l](r, c));
        fd.push_back((projection_step_loss(up, x_hat, target, iterations) -
                      projection_step_loss(dn, x_hat, target, iterations)) /
                     (2 * h));
      }
      const Eigen::Index bi = static_cast<Eigen::Index>(rng.below(
          static_cast<std::uint64_t>(net.biases[l].size())));
      ConstraintNet up = net, dn = net;
      up.biases[l][bi] += h;
      dn.biases[l][bi] -= h;
      ad.push_back(grad_b[l][bi]);
      fd.push_back((projection_step_loss(up, x_hat, target, iterations) -
                    projection_step_loss(dn, x_hat, target, iterations)) /
                   (2 * h));
    }
    const Eigen::Map<VectorXd> adv(ad.data(), static_cast<Eigen::Index>(ad.size()));
    const Eigen::Map<VectorXd> fdv(fd.data(), static_cast<Eigen::Index>(fd.size()));
    CAPTURE(trial);
    CHECK(fd_rel_error(adv, fdv) < 1e-4);
  }
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  ConstraintNet net = random_net(arch_of({3, 4, 1}), 6);
  const ConstraintNet before = net;
  AdamState state = AdamState::like(net);
  std::vector<Mat> gw = {Mat::Zero(4, 3), Mat::Zero(1, 4)};
  std::vector<VectorXd> gb = {VectorXd::Zero(4), VectorXd::Zero(1)};
  adam_step(net, gw, gb, state, 1e-3);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    CHECK(net.weights[l] == before.weights[l]);
    CHECK(net.biases[l] == before.biases[l]);
  }
}

TEST_CASE("first adam step matches the hand formula") {
  ConstraintNet net = net_init(arch_of({1, 1}), 3);
  net.weights[0](0, 0) = 0.7;
  net.biases[0][0] = -0.2;
  AdamState state = AdamState::like(net);
  const double g = 0.35, gb = -1.2, lr = 1e-3;
  std::vector<Mat> gw = {Mat::Constant(1, 1, g)};
  std::vector<VectorXd> gbv = {VectorXd::Constant(1, gb)};
  adam_step(net, gw, gbv, state, lr);

  auto expected = [&](double theta, double grad) {
    const double m = 0.1 * grad, v = 0.001 * grad * grad;
    const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
    return theta - lr * mhat / (std::sqrt(vhat) + 1e-8);
  };
  CHECK(net.weights[0](0, 0) == doctest::Approx(expected(0.7, g)).epsilon(1e-12));
  CHECK(net.biases[0][0] == doctest::Approx(expected(-0.2, gb)).epsilon(1e-12));
}

TEST_CASE("learning rate schedule steps by gamma") {
  const LrSchedule sched{1e-3, 20, 0.8};
  CHECK(sched.at_epoch(0) == 1e-3);
  CHECK(sched.at_epoch(19) == 1e-3);
  CHECK(sched.at_epoch(20) == doctest::Approx(8e-4).epsilon(1e-12));
  CHECK(sched.at_epoch(40) == doctest::Approx(1e-3 * 0.64).epsilon(1e-12));
}

TEST_CASE("initialization is deterministic and bounded") {
  const NetArch arch = arch_of({8, 256, 256, 256, 256, 1});
  CHECK(arch.output_width() == 1);
  const ConstraintNet a = net_init(arch, 99);
  const ConstraintNet b = net_init(arch, 99);
  for (std::size_t l = 0; l < a.weights.size(); ++l) CHECK(a.weights[l] == b.weights[l]);
  const ConstraintNet c = net_init(arch, 100);
  CHECK(a.weights[0] != c.weights[0]);

  const double bound = kaiming_uniform_bound(256, arch.lrelu_slope);
  CHECK(bound == doctest::Approx(std::sqrt(6.0 / (1.0001 * 256))).epsilon(1e-12));
  // the 256-fan-in layers respect the documented bound and fill its range
  const Mat& W = a.weights[1];
  CHECK(W.cwiseAbs().maxCoeff() <= bound);
  CHECK(W.cwiseAbs().maxCoeff() > 0.98 * bound);
  for (std::size_t l = 0; l < a.biases.size(); ++l) CHECK(a.biases[l].isZero(0.0));
}

TEST_CASE("checkpoint round trip preserves every parameter bit") {
  const ConstraintNet net = random_net(arch_of({4, 32, 32, 1}), 1234);
  const std::string path = "ckpt_test.nprjm";
  write_checkpoint(path, net, {{"scenario", "rigid1"}, {"seed", "7"}});
  std::map<std::string, std::string> meta;
  const ConstraintNet back = read_checkpoint(path, &meta);
  CHECK(back.arch.widths == net.arch.widths);
  CHECK(back.arch.lrelu_slope == net.arch.lrelu_slope);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    CHECK(back.weights[l] == net.weights[l]);
    CHECK(back.biases[l] == net.biases[l]);
  }
  CHECK(meta.at("scenario") == "rigid1");
  CHECK(meta.at("seed") == "7");
  std::remove(path.c_str());
  std::remove((path + ".meta").c_str());
}

TEST_CASE("dimension mismatches are rejected") {
  const ConstraintNet net = net_init(arch_of({4, 8, 1}), 1);
  CHECK_THROWS_AS(net_forward(net, VectorXd::Ones(3)), std::invalid_argument);
  VectorXd grad;
  CHECK_THROWS_AS(net_value_and_input_grad(net, VectorXd::Ones(5), grad), std::invalid_argument);
}
