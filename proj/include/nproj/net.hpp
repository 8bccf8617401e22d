#pragma once

#include "nproj/tape.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nproj {

using Eigen::VectorXd;

/// Layer widths from input to output, LeakyReLU between hidden layers, linear output.
struct NetArch {
  std::vector<int> widths;
  double lrelu_slope = 0.01;

  int input_width() const { return widths.front(); }
  int output_width() const { return widths.back(); }
  int layer_count() const { return static_cast<int>(widths.size()) - 1; }
  void validate() const;

  static NetArch parse(const std::string& comma_separated, double slope = 0.01);
  std::string describe() const;
};

struct ConstraintNet {
  NetArch arch;
  std::vector<Mat> weights;        // out x in, one per layer
  std::vector<VectorXd> biases;

  long parameter_count() const;
  void validate() const;
};

/// Kaiming-uniform weights scaled for the LeakyReLU slope, zero biases.
/// Bound per layer: sqrt(6 / ((1 + slope^2) * fan_in)).
ConstraintNet net_init(const NetArch& arch, std::uint64_t seed);
double kaiming_uniform_bound(int fan_in, double slope);

// Single-input inference path.
double net_forward(const ConstraintNet& net, const VectorXd& x);
VectorXd net_forward_vec(const ConstraintNet& net, const VectorXd& x);
/// Returns C(x) and writes dC/dx; scalar-output nets only.
double net_value_and_input_grad(const ConstraintNet& net, const VectorXd& x, VectorXd& grad_out);

// Batched tape path (columns = batch elements).
struct NetVars {
  std::vector<Var> weights, biases;
};
NetVars net_to_tape(Tape& tape, const ConstraintNet& net, bool requires_grad);

struct NetTapeForward {
  Var output;
  std::vector<Var> preactivations;  // z per layer, needed for the recorded backward
};
NetTapeForward net_forward_tape(Tape& tape, const NetVars& vars, const NetArch& arch, Var x);

/// Emits the reverse sweep for dC/dx as tape ops, so the result stays
/// differentiable with respect to the parameters (second-order path).
Var net_input_grad_tape(Tape& tape, const NetVars& vars, const NetArch& arch,
                        const NetTapeForward& fwd);

/// Reads parameter gradients accumulated by tape.backward into flat per-layer form.
void collect_param_grads(const Tape& tape, const NetVars& vars, std::vector<Mat>& grad_w,
                         std::vector<VectorXd>& grad_b);

struct LrSchedule {
  double init_lr = 1e-3;
  int step_epochs = 20;
  double gamma = 0.8;

  double at_epoch(int epoch) const;
};

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step_count = 0;
  std::vector<Mat> m_w, v_w;
  std::vector<VectorXd> m_b, v_b;

  static AdamState like(const ConstraintNet& net);
};

void adam_step(ConstraintNet& net, const std::vector<Mat>& grad_w,
               const std::vector<VectorXd>& grad_b, AdamState& state, double lr);

// Checkpoint container, little-endian:
//   magic "NPRJM1" (6 bytes)
//   u32 width count, u32 widths..., f64 activation slope
//   f64 parameters, layer-major: weights row-major then bias, per layer
// Sidecar "<path>.meta" carries key=value metadata.
void write_checkpoint(const std::string& path, const ConstraintNet& net,
                      const std::map<std::string, std::string>& metadata);
ConstraintNet read_checkpoint(const std::string& path,
                              std::map<std::string, std::string>* metadata_out = nullptr);

}  // namespace nproj
